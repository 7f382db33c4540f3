//! Adam with bias correction, L2 weight decay and per-update learning-rate
//! decay.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Scalar;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Learning rate at update `t` (0-based) is `lr / (1 + lr_decay·t)`.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            lr_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Result<Self> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(config.beta1) || !ok(config.beta2) {
            return Err(Error::param(format!(
                "Adam betas must lie in [0, 1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Ok(Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            config,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.lr_decay * self.step as f64)
    }
}

/// One Adam update. The L2 term `2·weight_decay_l2·w` is added to the
/// gradient of every parameter flagged `decay`.
///
/// Nothing is modified if any gradient contains a non-finite value.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Param<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    weight_decay_l2: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.value.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::dim(format!(
                "adam_step: gradient for `{}` has {} values, parameter has {}",
                p.name,
                g.len(),
                p.value.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                index: i,
                name: p.name.clone(),
            });
        }
    }

    let cfg = state.config;
    let lr = T::lit(state.current_lr());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let eps = T::lit(ADAM_EPS);
    let two_wd = T::lit(2.0 * weight_decay_l2);

    for (i, p) in params.iter_mut().enumerate() {
        let decay = p.decay && weight_decay_l2 != 0.0;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let mut g = grads[i][j];
            if decay {
                g = g + two_wd * *w;
            }
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let mhat = m[j] / corr1;
            let vhat = v[j] / corr2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(w: f64) -> Param<f64> {
        Param::new("w", Tensor::scalar(w), true)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        adam_step(&mut [&mut p], &[vec![1.0]], &mut state, 0.0).unwrap();
        // m̂ = 1, v̂ = 1 → step = lr·1/(1 + 1e-8).
        let want = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - want).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Param::new("w", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap(), true);
        let before = p.value.clone();
        let mut state = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[vec![0.0; 3]], &mut state, 0.0).unwrap();
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = scalar_param(3.0);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[&p]).unwrap();
        adam_step(&mut [&mut p], &[vec![0.7]], &mut state, 5e-4).unwrap();
        assert_eq!(p.value.data()[0], 3.0);
    }

    #[test]
    fn learning_rate_decays_per_update() {
        let p = scalar_param(0.0);
        let cfg = AdamConfig {
            lr_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[&p]).unwrap();
        assert_eq!(state.current_lr(), 1e-3);
        state.step = 2;
        assert!((state.current_lr() - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut p = scalar_param(2.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        adam_step(&mut [&mut p], &[vec![0.0]], &mut state, 0.5).unwrap();
        assert!(p.value.data()[0] < 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut a = scalar_param(1.0);
        let mut b = Param::new("second", Tensor::scalar(1.0), false);
        let mut state = AdamState::new(AdamConfig::default(), &[&a, &b]).unwrap();
        let err = adam_step(&mut [&mut a, &mut b], &[vec![1.0], vec![f64::NAN]], &mut state, 0.0)
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { index, name } => {
                assert_eq!(index, 1);
                assert_eq!(name, "second");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(a.value.data()[0], 1.0);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut a = scalar_param(0.3);
        let mut b = scalar_param(0.3);
        let mut state = AdamState::new(AdamConfig::default(), &[&a, &b]).unwrap();
        for k in 0..50 {
            let g = ((k as f64) * 0.7).sin();
            adam_step(&mut [&mut a, &mut b], &[vec![g], vec![g]], &mut state, 1e-4).unwrap();
        }
        assert_eq!(a.value, b.value);
    }
}
