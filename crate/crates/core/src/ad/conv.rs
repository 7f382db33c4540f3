//! 2-D convolution via im2col + GEMM.

use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{mm, Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn hwo(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let hwo = self.hwo();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * hwo..(row + 1) * hwo];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        let dst_row = &mut dst[oi * self.wo..(oi + 1) * self.wo];
                        if ii < 0 || ii >= self.h as isize {
                            dst_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for (oj, d) in dst_row.iter_mut().enumerate() {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            *d = if jj < 0 || jj >= self.w as isize {
                                T::zero()
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], x: &mut [T]) {
        let hwo = self.hwo();
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * hwo..(row + 1) * hwo];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[jj as usize] = dst[jj as usize] + src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2d {
    input: Var,
    weight: Var,
    bias: Var,
    geo: Geometry,
}

impl<T: Scalar> Function<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.weight, self.bias]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let geo = self.geo;
        let x = ctx.value(self.input).data();
        let w = ctx.value(self.weight).data();
        let (ckk, hwo, o) = (geo.ckk(), geo.hwo(), geo.o);
        let in_len = geo.c * geo.h * geo.w;
        let out_len = o * hwo;

        let want_params = ctx.needs_grad(self.weight) || ctx.needs_grad(self.bias);
        let (gw, gb) = if want_params {
            let acc = par::grouped_sum::<T, _>(geo.n, o * ckk + o, |range, acc| {
                let (dw, db) = acc.split_at_mut(o * ckk);
                let mut col = vec![T::zero(); ckk * hwo];
                for n in range {
                    let gn = &g[n * out_len..(n + 1) * out_len];
                    geo.im2col(&x[n * in_len..(n + 1) * in_len], &mut col);
                    mm::abt(o, hwo, ckk, gn, &col, dw, true);
                    for (oc, b) in db.iter_mut().enumerate() {
                        *b = *b + gn[oc * hwo..(oc + 1) * hwo].iter().copied().sum::<T>();
                    }
                }
            });
            let (dw, db) = acc.split_at(o * ckk);
            (Some(dw.to_vec()), Some(db.to_vec()))
        } else {
            (None, None)
        };

        let gx = ctx.needs_grad(self.input).then(|| {
            let mut gx = vec![T::zero(); geo.n * in_len];
            par::for_each_chunk_mut(&mut gx, in_len, |n, gx_n| {
                let mut dcol = vec![T::zero(); ckk * hwo];
                mm::atb(ckk, o, hwo, w, &g[n * out_len..(n + 1) * out_len], &mut dcol, false);
                geo.col2im(&dcol, gx_n);
            });
            gx
        });
        Ok(vec![gx, gw, gb])
    }
}

impl<T: Scalar> Tape<T> {
    /// Convolution of `x: [N,C,H,W]` with `weight: [O,C,kh,kw]` plus `bias: [O]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::dim(format!(
                "conv2d input has {} channels but weight expects {}",
                xs[1], ws[1]
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::dim(format!(
                "conv2d bias shape {bs:?} does not match {} output channels",
                ws[0]
            )));
        }
        if stride < 1 {
            return Err(Error::param("conv2d stride must be at least 1"));
        }
        let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::param(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geo = Geometry {
            n: xs[0],
            c: xs[1],
            h,
            w,
            o: ws[0],
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let (ckk, hwo, o) = (geo.ckk(), geo.hwo(), geo.o);
        let in_len = geo.c * geo.h * geo.w;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut out = vec![T::zero(); geo.n * o * hwo];
        par::for_each_chunk_mut(&mut out, o * hwo, |n, out_n| {
            let mut col = vec![T::zero(); ckk * hwo];
            geo.im2col(&xd[n * in_len..(n + 1) * in_len], &mut col);
            for (oc, row) in out_n.chunks_mut(hwo).enumerate() {
                row.fill(bd[oc]);
            }
            mm::ab(o, ckk, hwo, wd, &col, out_n, true);
        });
        let out = Tensor::new(vec![geo.n, o, geo.ho, geo.wo], out)?;
        self.push(
            out,
            Box::new(Conv2d {
                input: x,
                weight,
                bias,
                geo,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_center_counts_full_overlap() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let w = tape.param(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let b = tape.param(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert_eq!(out.data()[4], 9.0);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| (i as f64).sin()).collect();
        let x = tape.constant(Tensor::new(vec![2, 1, 4, 5], data.clone()).unwrap());
        let w = tape.param(Tensor::full(vec![1, 1, 1, 1], 1.0));
        let b = tape.param(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn output_size_follows_stride_and_padding() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 112, 112]));
        let w = tape.param(Tensor::zeros(vec![4, 2, 5, 5]));
        let b = tape.param(Tensor::zeros(vec![4]));
        let y = tape.conv2d(x, w, b, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 56, 56]);
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = tape.param(Tensor::zeros(vec![1, 2, 3, 3]));
        let b = tape.param(Tensor::zeros(vec![1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 1), Err(Error::Dimension(_))));
        let w2 = tape.param(Tensor::zeros(vec![1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, w2, b, 0, 1), Err(Error::Parameter(_))));
    }
}
