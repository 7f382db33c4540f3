//! Differentiable bilinear sampling with zero padding.

use crate::ad::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// The four taps of one bilinear lookup. Taps outside the image carry
/// index `None` and contribute zero.
struct Taps<T> {
    idx: [Option<usize>; 4],
    wts: [T; 4],
    fx: T,
    fy: T,
    /// d(pixel x)/d(normalized x), likewise for y.
    sx: T,
    sy: T,
}

fn taps<T: Scalar>(x: T, y: T, h: usize, w: usize) -> Taps<T> {
    let one = T::one();
    let half = T::lit(0.5);
    let sx = T::lit(w.saturating_sub(1) as f64) * half;
    let sy = T::lit(h.saturating_sub(1) as f64) * half;
    let px = (x + one) * sx;
    let py = (y + one) * sy;
    let mut out = Taps {
        idx: [None; 4],
        wts: [T::zero(); 4],
        fx: T::zero(),
        fy: T::zero(),
        sx,
        sy,
    };
    if !px.is_finite() || !py.is_finite() {
        return out;
    }
    let (x0, y0) = (px.floor(), py.floor());
    // Far outside: every tap is padding.
    let lim = T::lit(w.max(h) as f64 + 2.0);
    if x0 < -lim || x0 > lim || y0 < -lim || y0 > lim {
        return out;
    }
    let (fx, fy) = (px - x0, py - y0);
    out.fx = fx;
    out.fy = fy;
    let (x0, y0) = (x0.to_i64().unwrap_or(0), y0.to_i64().unwrap_or(0));
    let pos = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)];
    out.wts = [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy];
    for (slot, &(r, c)) in out.idx.iter_mut().zip(&pos) {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            *slot = Some(r as usize * w + c as usize);
        }
    }
    out
}

fn tap_value<T: Scalar>(plane: &[T], i: Option<usize>) -> T {
    i.map_or(T::zero(), |i| plane[i])
}

struct BilinearOp {
    image: Var,
    field: Var,
}

impl<T: Scalar> Function<T> for BilinearOp {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.image, self.field]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let img = ctx.value(self.image);
        let fld = ctx.value(self.field);
        let (c, h, w) = (img.shape()[1], img.shape()[2], img.shape()[3]);
        let (ho, wo) = (fld.shape()[1], fld.shape()[2]);
        let (id, fd) = (img.data(), fld.data());
        let (plane, oplane) = (h * w, ho * wo);

        let gimg = ctx.needs_grad(self.image).then(|| {
            let mut gi = vec![T::zero(); id.len()];
            par::for_each_chunk_mut(&mut gi, c * plane, |s, gs| {
                for p in 0..oplane {
                    let f = &fd[(s * oplane + p) * 2..(s * oplane + p) * 2 + 2];
                    let t = taps(f[0], f[1], h, w);
                    for ch in 0..c {
                        let gv = g[(s * c + ch) * oplane + p];
                        for (idx, &wt) in t.idx.iter().zip(&t.wts) {
                            if let Some(i) = idx {
                                gs[ch * plane + i] = gs[ch * plane + i] + gv * wt;
                            }
                        }
                    }
                }
            });
            gi
        });

        let gfield = ctx.needs_grad(self.field).then(|| {
            let mut gf = vec![T::zero(); fd.len()];
            let one = T::one();
            par::for_each_chunk_mut(&mut gf, oplane * 2, |s, gs| {
                for p in 0..oplane {
                    let f = &fd[(s * oplane + p) * 2..(s * oplane + p) * 2 + 2];
                    let t = taps(f[0], f[1], h, w);
                    let (mut dx, mut dy) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let src = &id[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                        let v: Vec<T> = t.idx.iter().map(|&i| tap_value(src, i)).collect();
                        let gv = g[(s * c + ch) * oplane + p];
                        dx = dx + gv * ((one - t.fy) * (v[1] - v[0]) + t.fy * (v[3] - v[2]));
                        dy = dy + gv * ((one - t.fx) * (v[2] - v[0]) + t.fx * (v[3] - v[1]));
                    }
                    gs[p * 2] = dx * t.sx;
                    gs[p * 2 + 1] = dy * t.sy;
                }
            });
            gf
        });
        Ok(vec![gimg, gfield])
    }
}

impl<T: Scalar> Tape<T> {
    /// Samples `image: [N,C,H,W]` at the normalized coordinates of
    /// `field: [N,Ho,Wo,2]`, giving `[N,C,Ho,Wo]`. Points outside the image
    /// read zero.
    pub fn bilinear_sample(&mut self, image: Var, field: Var) -> Result<Var> {
        let (is, fs) = (self.shape(image), self.shape(field));
        if is.len() != 4 || fs.len() != 4 || fs[3] != 2 || is[0] != fs[0] {
            return Err(Error::dim(format!(
                "bilinear_sample: image {is:?}, field {fs:?}"
            )));
        }
        let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
        let (ho, wo) = (fs[1], fs[2]);
        let id = self.value(image).data();
        let fd = self.value(field).data();
        let (plane, oplane) = (h * w, ho * wo);
        let mut out = vec![T::zero(); n * c * oplane];
        par::for_each_chunk_mut(&mut out, c * oplane, |s, os| {
            for p in 0..oplane {
                let f = &fd[(s * oplane + p) * 2..(s * oplane + p) * 2 + 2];
                let t = taps(f[0], f[1], h, w);
                for ch in 0..c {
                    let src = &id[(s * c + ch) * plane..(s * c + ch + 1) * plane];
                    let mut acc = T::zero();
                    for (idx, &wt) in t.idx.iter().zip(&t.wts) {
                        acc = acc + wt * tap_value(src, *idx);
                    }
                    os[ch * oplane + p] = acc;
                }
            }
        });
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        self.push(out, Box::new(BilinearOp { image, field }))
    }
}
