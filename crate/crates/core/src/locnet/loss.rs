//! Detection objective: smooth-L1 on positive offsets plus objectness
//! cross-entropy with hard-negative mining, normalized by the positive count.

use crate::ad::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::matching::AnchorTargets;

pub const NEG_POS_RATIO: usize = 3;

/// Values per anchor in a prediction row: four offsets then the logit.
pub const ANCHOR_OUTPUTS: usize = 5;

fn smooth_l1<T: Scalar>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::lit(0.5) * x * x
    } else {
        a - T::lit(0.5)
    }
}

fn smooth_l1_grad<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Ignored,
    Positive,
    Negative,
}

/// Picks each sample's positives and its `ratio × positives` hardest
/// negatives (highest cross-entropy, earlier anchor first on ties).
fn assign_roles<T: Scalar>(pred: &[T], targets: &[AnchorTargets], ratio: usize) -> Vec<Role> {
    let a = targets.first().map_or(0, |t| t.positive.len());
    let mut roles = vec![Role::Ignored; targets.len() * a];
    for (s, t) in targets.iter().enumerate() {
        let row = |i: usize| &pred[(s * a + i) * ANCHOR_OUTPUTS..(s * a + i + 1) * ANCHOR_OUTPUTS];
        let mut negs: Vec<(T, usize)> = Vec::new();
        for (i, &p) in t.positive.iter().enumerate() {
            if p {
                roles[s * a + i] = Role::Positive;
            } else {
                negs.push((softplus(row(i)[4]), i));
            }
        }
        negs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal).then(x.1.cmp(&y.1)));
        let take = (ratio * t.positives()).min(negs.len());
        for &(_, i) in &negs[..take] {
            roles[s * a + i] = Role::Negative;
        }
    }
    roles
}

fn check(pred_shape: &[usize], targets: &[AnchorTargets]) -> Result<()> {
    if pred_shape.len() != 3 || pred_shape[2] != ANCHOR_OUTPUTS || pred_shape[0] != targets.len() {
        return Err(Error::dim(format!(
            "locnet_loss: predictions {pred_shape:?} for {} targets",
            targets.len()
        )));
    }
    if targets.iter().any(|t| t.positive.len() != pred_shape[1] || t.offsets.len() != pred_shape[1]) {
        return Err(Error::dim("locnet_loss: target anchor count differs from predictions"));
    }
    if targets.iter().any(|t| t.positives() == 0) {
        return Err(Error::param("locnet_loss: a sample has no positive anchor"));
    }
    Ok(())
}

struct LocLossOp<T> {
    pred: Var,
    roles: Vec<Role>,
    offsets: Vec<T>,
    norm: T,
}

impl<T: Scalar> Function<T> for LocLossOp<T> {
    fn name(&self) -> &'static str {
        "locnet_loss"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.pred]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let pred = ctx.value(self.pred).data();
        let scale = g[0] / self.norm;
        let mut grad = vec![T::zero(); pred.len()];
        for (i, role) in self.roles.iter().enumerate() {
            let (row, gr) = (&pred[i * 5..i * 5 + 5], &mut grad[i * 5..i * 5 + 5]);
            match role {
                Role::Positive => {
                    for e in 0..4 {
                        gr[e] = smooth_l1_grad(row[e] - self.offsets[i * 4 + e]) * scale;
                    }
                    gr[4] = (sigmoid(row[4]) - T::one()) * scale;
                }
                Role::Negative => gr[4] = sigmoid(row[4]) * scale,
                Role::Ignored => {}
            }
        }
        Ok(vec![Some(grad)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Detection loss for `pred: [N, A, 5]` (offsets then logit per anchor).
    pub fn locnet_loss(&mut self, pred: Var, targets: &[AnchorTargets], ratio: usize) -> Result<Var> {
        check(self.shape(pred), targets)?;
        let p = self.value(pred).data();
        let roles = assign_roles(p, targets, ratio);
        let offsets: Vec<T> = targets
            .iter()
            .flat_map(|t| t.offsets.iter().flat_map(|o| o.iter().map(|&v| T::lit(v))))
            .collect();
        let npos: usize = targets.iter().map(|t| t.positives()).sum();
        let norm = T::lit(npos as f64);
        let mut total = T::zero();
        for (i, role) in roles.iter().enumerate() {
            let row = &p[i * 5..i * 5 + 5];
            match role {
                Role::Positive => {
                    for e in 0..4 {
                        total = total + smooth_l1(row[e] - offsets[i * 4 + e]);
                    }
                    total = total + softplus(-row[4]);
                }
                Role::Negative => total = total + softplus(row[4]),
                Role::Ignored => {}
            }
        }
        let out = Tensor::scalar(total / norm);
        self.push(
            out,
            Box::new(LocLossOp {
                pred,
                roles,
                offsets,
                norm,
            }),
        )
    }
}

/// The same objective evaluated directly on a flat `[N·A·5]` prediction.
pub fn locnet_loss(pred: &[f64], targets: &[AnchorTargets], ratio: usize) -> Result<f64> {
    let a = targets.first().map_or(0, |t| t.positive.len());
    if pred.len() != targets.len() * a * ANCHOR_OUTPUTS {
        return Err(Error::dim("locnet_loss: prediction length does not match targets"));
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(vec![targets.len(), a, ANCHOR_OUTPUTS], pred.to_vec())?);
    let l = tape.locnet_loss(p, targets, ratio)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<AnchorTargets> {
        vec![AnchorTargets {
            positive: vec![true, false, false, false, false],
            offsets: vec![[0.5, -0.25, 2.0, 0.0], [0.0; 4], [0.0; 4], [0.0; 4], [0.0; 4]],
        }]
    }

    #[test]
    fn confident_correct_predictions_cost_almost_nothing() {
        let t = toy();
        let mut pred = vec![-30.0; 25];
        pred[..5].copy_from_slice(&[0.5, -0.25, 2.0, 0.0, 30.0]);
        assert!(locnet_loss(&pred, &t, 3).unwrap() < 1e-12);
    }

    #[test]
    fn small_offset_errors_are_quadratic() {
        let t = toy();
        let mut pred = vec![-30.0; 25];
        pred[..5].copy_from_slice(&[0.9, -0.25, 2.0, 0.0, 30.0]);
        let l = locnet_loss(&pred, &t, 3).unwrap();
        assert!((l - 0.5 * 0.4 * 0.4).abs() < 1e-12);
    }

    #[test]
    fn mining_keeps_only_the_hardest_negatives() {
        let t = toy();
        // Positive is perfect; negatives have logits 0, 1, 2, 3. With ratio 1
        // only the logit-3 negative counts.
        let mut pred = vec![0.0; 25];
        pred[..5].copy_from_slice(&[0.5, -0.25, 2.0, 0.0, 40.0]);
        for (k, z) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            pred[(k + 1) * 5 + 4] = *z;
        }
        let l = locnet_loss(&pred, &t, 1).unwrap();
        assert!((l - (1.0f64 + 3.0f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn a_sample_without_positives_is_rejected() {
        let mut t = toy();
        t[0].positive[0] = false;
        assert!(locnet_loss(&[0.0; 25], &t, 3).is_err());
    }
}
