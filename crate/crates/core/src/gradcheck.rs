//! Central finite-difference gradient checking in 64-bit mode.
//!
//! The numerical side only ever evaluates forward passes, so it is
//! independent of every backward rule it checks.

use crate::ad::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-element relative error.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, element)` where the largest relative error occurred.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Compares backward-mode gradients of `f` against central differences
/// with step `h`.
///
/// `f` receives the tape and one trainable leaf per entry of `inputs`, and
/// must return a scalar node. Relative error of element `i` is
/// `|a − n| / max(|a|, |n|, 1e-3·s, 1e-12)` where `s` is the largest
/// numerical gradient magnitude of that input; the floor keeps elements
/// whose true gradient is (near) zero from dominating.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        analytic,
        numeric,
    };
    for i in 0..inputs.len() {
        let scale = report.numeric[i].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for j in 0..inputs[i].len() {
            let (a, n) = (report.analytic[i][j], report.numeric[i][j]);
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(1e-3 * scale).max(1e-12);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}

/// Fixed pseudo-random weights used to turn a tensor output into a scalar
/// loss `Σ r_i·y_i` so that every output element carries a distinct
/// upstream gradient.
pub fn probe_weights(len: usize, salt: u64) -> Tensor<f64> {
    Tensor::from_fn(vec![len], |i| {
        let x = ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03))
            >> 11;
        (x as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// `Σ r_i·y_i` with [`probe_weights`].
pub fn probe_loss(tape: &mut Tape<f64>, y: Var, salt: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let len = tape.value(y).len();
    let r = probe_weights(len, salt).reshape(shape)?;
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}
