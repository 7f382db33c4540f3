//! Registration objective and overlap metrics.
//!
//! The training objective is a soft dice loss between the fixed mask and
//! the warped moving mask plus `λ` times a smoothness penalty on the
//! control-point displacements. Evaluation uses hard dice and IoU on
//! masks binarized at 0.5.

use crate::ad::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Scalar, Tensor};

/// Denominator guard of the soft dice loss.
pub const DICE_EPS: f64 = 1e-7;

/// Default weight of the smoothness term.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Components of the total loss; `total = dice_loss + lambda·smoothness`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub dice_loss: f64,
    pub smoothness: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(dice_loss: f64, smoothness: f64, lambda: f64) -> Self {
        Self {
            dice_loss,
            smoothness,
            total: dice_loss + lambda * smoothness,
            lambda,
        }
    }
}

/// Soft dice loss `1 − 2·Σ(f·m) / (Σf + Σm + ε)`.
///
/// Two empty masks give `1`: the numerator vanishes and `ε` keeps the
/// division finite.
pub fn soft_dice_loss(fixed: &[f64], moved: &[f64]) -> f64 {
    let inter: f64 = fixed.iter().zip(moved).map(|(f, m)| f * m).sum();
    let total: f64 = fixed.iter().sum::<f64>() + moved.iter().sum::<f64>();
    1.0 - 2.0 * inter / (total + DICE_EPS)
}

pub fn dice_loss(fixed: &Mask, moved: &Mask) -> Result<f64> {
    same_size(fixed, moved)?;
    let f: Vec<f64> = fixed.data().iter().map(|&v| v as f64).collect();
    let m: Vec<f64> = moved.data().iter().map(|&v| v as f64).collect();
    Ok(soft_dice_loss(&f, &m))
}

/// Sum of squared forward differences of the displacement field over the
/// `k×k` control lattice, both components. Differences that would leave
/// the lattice are omitted.
pub fn smoothness(displacements: &[f64], k: usize) -> Result<f64> {
    check_lattice(displacements.len(), k)?;
    let mut s = 0.0;
    for_each_difference(k, |a, b| {
        for c in 0..2 {
            let d = displacements[2 * b + c] - displacements[2 * a + c];
            s += d * d;
        }
    });
    Ok(s)
}

/// Dice and smoothness combined with weight `lambda`.
pub fn total_loss(
    fixed: &Mask,
    moved: &Mask,
    displacements: &[f64],
    k: usize,
    lambda: f64,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        dice_loss(fixed, moved)?,
        smoothness(displacements, k)?,
        lambda,
    ))
}

fn check_lattice(len: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::param(format!("smoothness needs k >= 2, got {k}")));
    }
    if len != 2 * k * k {
        return Err(Error::dim(format!(
            "smoothness on a {k}x{k} lattice needs {} values, got {len}",
            2 * k * k
        )));
    }
    Ok(())
}

/// Visits every lattice edge `(a, b)` (right neighbour, then down
/// neighbour) in row-major order.
fn for_each_difference(k: usize, mut f: impl FnMut(usize, usize)) {
    for r in 0..k {
        for c in 0..k {
            let p = r * k + c;
            if c + 1 < k {
                f(p, p + 1);
            }
            if r + 1 < k {
                f(p, p + k);
            }
        }
    }
}

fn same_size(a: &Mask, b: &Mask) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::dim(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Pixel counts of two hard masks: `(|G|, |S|, |G ∩ S|)`.
fn counts(g: &Mask, s: &Mask) -> (usize, usize, usize) {
    let (mut ng, mut ns, mut ni) = (0, 0, 0);
    for (&a, &b) in g.data().iter().zip(s.data()) {
        let (a, b) = (a >= 0.5, b >= 0.5);
        ng += a as usize;
        ns += b as usize;
        ni += (a && b) as usize;
    }
    (ng, ns, ni)
}

/// Dice coefficient `2|G∩S| / (|G| + |S|)` of the binarized masks. Two
/// empty masks agree perfectly (1).
pub fn dc_metric(g: &Mask, s: &Mask) -> Result<f64> {
    same_size(g, s)?;
    let (ng, ns, ni) = counts(g, s);
    Ok(if ng + ns == 0 {
        1.0
    } else {
        2.0 * ni as f64 / (ng + ns) as f64
    })
}

/// Intersection over union of the binarized masks. Two empty masks give 1.
pub fn iou_metric(g: &Mask, s: &Mask) -> Result<f64> {
    same_size(g, s)?;
    let (ng, ns, ni) = counts(g, s);
    let union = ng + ns - ni;
    Ok(if union == 0 {
        1.0
    } else {
        ni as f64 / union as f64
    })
}

/// Mean of per-pair IoU over a set of `(ground truth, prediction)` pairs.
pub fn miou_metric(pairs: &[(Mask, Mask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::param("mIoU of an empty set"));
    }
    let mut s = 0.0;
    for (g, p) in pairs {
        s += iou_metric(g, p)?;
    }
    Ok(s / pairs.len() as f64)
}

struct SoftDiceOp<T> {
    moved: Var,
    fixed: Vec<T>,
}

impl<T: Scalar> Function<T> for SoftDiceOp<T> {
    fn name(&self) -> &'static str {
        "soft_dice"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.moved]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let m = ctx.value(self.moved).data();
        let n = g.len();
        let per = m.len() / n;
        let eps = T::lit(DICE_EPS);
        let two = T::lit(2.0);
        let mut gm = vec![T::zero(); m.len()];
        for s in 0..n {
            let (ms, fs) = (&m[s * per..(s + 1) * per], &self.fixed[s * per..(s + 1) * per]);
            let inter: T = ms.iter().zip(fs).map(|(&a, &b)| a * b).sum();
            let den = ms.iter().copied().sum::<T>() + fs.iter().copied().sum::<T>() + eps;
            // d/dm_j [−2I/D] = −2(f_j·D − I)/D²
            let k = -two * g[s] / (den * den);
            for (o, &f) in gm[s * per..(s + 1) * per].iter_mut().zip(fs) {
                *o = k * (f * den - inter);
            }
        }
        Ok(vec![Some(gm)])
    }
}

struct SmoothnessOp {
    disp: Var,
    k: usize,
}

impl<T: Scalar> Function<T> for SmoothnessOp {
    fn name(&self) -> &'static str {
        "smoothness"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.disp]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let d = ctx.value(self.disp).data();
        let width = 2 * self.k * self.k;
        let mut gd = vec![T::zero(); d.len()];
        let two = T::lit(2.0);
        for (s, &gs) in g.iter().enumerate() {
            let (ds, out) = (&d[s * width..(s + 1) * width], &mut gd[s * width..(s + 1) * width]);
            for_each_difference(self.k, |a, b| {
                for c in 0..2 {
                    let diff = two * gs * (ds[2 * b + c] - ds[2 * a + c]);
                    out[2 * b + c] = out[2 * b + c] + diff;
                    out[2 * a + c] = out[2 * a + c] - diff;
                }
            });
        }
        Ok(vec![Some(gd)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-sample soft dice loss `[N]` between `moved: [N, …]` and a
    /// constant `fixed` of the same shape.
    pub fn soft_dice(&mut self, moved: Var, fixed: &Tensor<T>) -> Result<Var> {
        let mv = self.value(moved);
        if mv.shape() != fixed.shape() || mv.rank() < 1 {
            return Err(Error::dim(format!(
                "soft_dice: moved {:?} vs fixed {:?}",
                mv.shape(),
                fixed.shape()
            )));
        }
        let n = mv.shape()[0];
        let per = mv.len() / n.max(1);
        let eps = T::lit(DICE_EPS);
        let two = T::lit(2.0);
        let out: Vec<T> = (0..n)
            .map(|s| {
                let ms = &mv.data()[s * per..(s + 1) * per];
                let fs = &fixed.data()[s * per..(s + 1) * per];
                let inter: T = ms.iter().zip(fs).map(|(&a, &b)| a * b).sum();
                let den = ms.iter().copied().sum::<T>() + fs.iter().copied().sum::<T>() + eps;
                T::one() - two * inter / den
            })
            .collect();
        let out = Tensor::new(vec![n], out)?;
        self.push(
            out,
            Box::new(SoftDiceOp {
                moved,
                fixed: fixed.data().to_vec(),
            }),
        )
    }

    /// Per-sample smoothness `[N]` of displacement rows `[N, 2k²]`.
    pub fn smoothness(&mut self, disp: Var, k: usize) -> Result<Var> {
        let dv = self.value(disp);
        if dv.rank() != 2 {
            return Err(Error::dim(format!("smoothness expects [N, 2k²], got {:?}", dv.shape())));
        }
        check_lattice(dv.shape()[1], k)?;
        let (n, width) = (dv.shape()[0], dv.shape()[1]);
        let out: Vec<T> = (0..n)
            .map(|s| {
                let ds = &dv.data()[s * width..(s + 1) * width];
                let mut acc = T::zero();
                for_each_difference(k, |a, b| {
                    for c in 0..2 {
                        let d = ds[2 * b + c] - ds[2 * a + c];
                        acc = acc + d * d;
                    }
                });
                acc
            })
            .collect();
        let out = Tensor::new(vec![n], out)?;
        self.push(out, Box::new(SmoothnessOp { disp, k }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Mask::from_fn(h, w, |i, j| rows[i].as_bytes()[j] == b'#')
    }

    #[test]
    fn dice_loss_set_arithmetic() {
        let g = mask(&["##..", "##.."]);
        let s = mask(&[".##.", ".##."]);
        assert!((dice_loss(&g, &s).unwrap() - 0.5).abs() < 1e-6);
        assert!(dice_loss(&g, &g).unwrap().abs() < 1e-6);
        let d = mask(&["..##", "..##"]);
        assert!((dice_loss(&g, &d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_masks_have_unit_dice_loss() {
        let z = Mask::zeros(3, 3);
        assert_eq!(dice_loss(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn metrics_on_partial_overlap() {
        let g = mask(&["##..", "##.."]);
        let s = mask(&[".##.", ".##."]);
        assert_eq!(dc_metric(&g, &s).unwrap(), 0.5);
        assert!((iou_metric(&g, &s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dc_metric(&g, &g).unwrap(), 1.0);
        assert_eq!(iou_metric(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn empty_pair_is_perfect_agreement() {
        let z = Mask::zeros(2, 2);
        assert_eq!(dc_metric(&z, &z).unwrap(), 1.0);
        assert_eq!(iou_metric(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(dc_metric(&Mask::zeros(2, 2), &Mask::zeros(2, 3)).is_err());
        assert!(dice_loss(&Mask::zeros(2, 2), &Mask::zeros(3, 2)).is_err());
    }

    #[test]
    fn smoothness_of_a_single_displaced_corner() {
        // k = 2: the lattice has edges 0-1, 0-2, 1-3, 2-3. Moving point 0 by
        // (1, 0) changes the two edges it touches by 1 each.
        let mut d = vec![0.0; 8];
        d[0] = 1.0;
        assert_eq!(smoothness(&d, 2).unwrap(), 2.0);
    }

    #[test]
    fn smoothness_vanishes_for_constant_fields() {
        assert_eq!(smoothness(&[0.0; 18], 3).unwrap(), 0.0);
        let c: Vec<f64> = (0..18).map(|i| if i % 2 == 0 { 0.3 } else { -1.2 }).collect();
        assert_eq!(smoothness(&c, 3).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_rejects_bad_lattice() {
        assert!(matches!(smoothness(&[0.0; 2], 1), Err(Error::Parameter(_))));
        assert!(smoothness(&[0.0; 7], 2).is_err());
    }

    #[test]
    fn total_loss_combines_components() {
        let g = mask(&["##..", "##.."]);
        let d = mask(&["..##", "..##"]);
        let mut disp = vec![0.0; 8];
        disp[0] = 1.0;
        let l = total_loss(&g, &d, &disp, 2, 1.0).unwrap();
        assert!((l.total - 3.0).abs() < 1e-12);
        let l0 = total_loss(&g, &d, &disp, 2, 0.0).unwrap();
        assert_eq!(l0.total, l0.dice_loss);
        let same = total_loss(&g, &g, &[0.0; 8], 2, 1.0).unwrap();
        assert!(same.total.abs() < 1e-6);
    }

    #[test]
    fn tape_ops_match_scalar_versions() {
        let mut tape = Tape::<f64>::new();
        let m = Tensor::from_fn(vec![2, 1, 3, 3], |i| ((i * 5) % 7) as f64 / 7.0);
        let f = Tensor::from_fn(vec![2, 1, 3, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let mv = tape.param(m.clone());
        let d = tape.soft_dice(mv, &f).unwrap();
        for s in 0..2 {
            let want = soft_dice_loss(&f.data()[s * 9..(s + 1) * 9], &m.data()[s * 9..(s + 1) * 9]);
            assert!((tape.value(d).data()[s] - want).abs() < 1e-15);
        }
        let disp = Tensor::from_fn(vec![1, 8], |i| (i as f64).cos());
        let dv = tape.param(disp.clone());
        let sm = tape.smoothness(dv, 2).unwrap();
        assert!((tape.value(sm).data()[0] - smoothness(disp.data(), 2).unwrap()).abs() < 1e-15);
    }
}
