//! Per-channel batch normalization for `[N,C,H,W]` activations.

use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize by batch statistics.
    Train,
    /// Normalize by stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Batch statistics from a training-mode forward pass (biased variance).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running(&self, mean: &mut [T], var: &mut [T]) {
        let mo = T::lit(BN_MOMENTUM);
        let one = T::one();
        for (r, &b) in mean.iter_mut().zip(&self.mean) {
            *r = mo * *r + (one - mo) * b;
        }
        for (r, &b) in var.iter_mut().zip(&self.var) {
            *r = mo * *r + (one - mo) * b;
        }
    }
}

struct BatchNorm<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    n: usize,
    c: usize,
    hw: usize,
}

impl<T: Scalar> Function<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (n, c, hw) = (self.n, self.c, self.hw);
        let x = ctx.value(self.input).data();
        let gamma = ctx.value(self.gamma).data();
        // Per channel: Σg, Σg·x̂.
        let sums: Vec<(T, T)> = par::map_range(c, |ch| {
            let (mut sg, mut sgx) = (T::zero(), T::zero());
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    let xhat = (x[i] - self.mean[ch]) * self.inv_std[ch];
                    sg = sg + g[i];
                    sgx = sgx + g[i] * xhat;
                }
            }
            (sg, sgx)
        });
        let ggamma = sums.iter().map(|s| s.1).collect::<Vec<_>>();
        let gbeta = sums.iter().map(|s| s.0).collect::<Vec<_>>();
        let gx = ctx.needs_grad(self.input).then(|| {
            let m = T::lit((n * hw) as f64);
            let mut gx = vec![T::zero(); x.len()];
            par::for_each_chunk_mut(&mut gx, c * hw, |s, chunk| {
                for ch in 0..c {
                    let off = (s * c + ch) * hw;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in 0..hw {
                        let gi = g[off + i];
                        chunk[ch * hw + i] = if self.train {
                            let xhat = (x[off + i] - self.mean[ch]) * self.inv_std[ch];
                            k * (gi - (sums[ch].0 + xhat * sums[ch].1) / m)
                        } else {
                            k * gi
                        };
                    }
                }
            });
            gx
        });
        Ok(vec![gx, Some(ggamma), Some(gbeta)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization with learned `gamma`/`beta` of length `C`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// fold them into its running estimates.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim(format!("batchnorm2d expects rank 4, got {xs:?}")));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if n == 0 {
            return Err(Error::param("batchnorm2d on an empty batch"));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::param(format!(
                "batchnorm2d parameters must have length {c}, got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xd = self.value(x).data();
        let eps = T::lit(BN_EPS);
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let m = T::lit((n * hw) as f64);
                let stats: Vec<(T, T)> = par::map_range(c, |ch| {
                    let mut s = T::zero();
                    for smp in 0..n {
                        let off = (smp * c + ch) * hw;
                        s = s + xd[off..off + hw].iter().copied().sum::<T>();
                    }
                    let mu = s / m;
                    let mut v = T::zero();
                    for smp in 0..n {
                        let off = (smp * c + ch) * hw;
                        for &xv in &xd[off..off + hw] {
                            v = v + (xv - mu) * (xv - mu);
                        }
                    }
                    (mu, v / m)
                });
                let (mean, var) = stats.into_iter().unzip();
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::param(format!(
                        "batchnorm2d running stats must have length {c}"
                    )));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![T::zero(); xd.len()];
        par::for_each_chunk_mut(&mut out, c * hw, |s, chunk| {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                for i in 0..hw {
                    chunk[ch * hw + i] = gd[ch] * (xd[off + i] - mean[ch]) * inv_std[ch] + bd[ch];
                }
            }
        });
        let out = Tensor::new(xs, out)?;
        let stats = train.then(|| BatchStats {
            mean: mean.clone(),
            var,
        });
        let v = self.push(
            out,
            Box::new(BatchNorm {
                input: x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
                n,
                c,
                hw,
            }),
        )?;
        Ok((v, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standardized_batch() -> Tensor<f64> {
        // Two channels, each with mean 0 and variance 1 over N·H·W = 8.
        let ch0 = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let s = 2f64.sqrt();
        let ch1 = [s, -s, 0.0, 0.0, s, -s, 0.0, 0.0];
        let mut data = Vec::new();
        for smp in 0..2 {
            data.extend_from_slice(&ch0[smp * 4..smp * 4 + 4]);
            data.extend_from_slice(&ch1[smp * 4..smp * 4 + 4]);
        }
        Tensor::new(vec![2, 2, 2, 2], data).unwrap()
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut tape = Tape::<f64>::new();
        let input = standardized_batch();
        let x = tape.constant(input.clone());
        let g = tape.param(Tensor::full(vec![2], 1.0));
        let b = tape.param(Tensor::zeros(vec![2]));
        let (y, stats) = tape.batchnorm2d(x, g, b, BatchNormMode::Train).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(input.data()) {
            assert!((a - e).abs() < 1e-5);
        }
        let stats = stats.unwrap();
        assert!(stats.mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn beta_sets_the_channel_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(vec![3, 2, 2, 2], |i| (i as f64 * 0.37).sin() * 5.0));
        let g = tape.param(Tensor::new(vec![2], vec![2.0, 0.5]).unwrap());
        let b = tape.param(Tensor::new(vec![2], vec![0.75, -3.0]).unwrap());
        let (y, _) = tape.batchnorm2d(x, g, b, BatchNormMode::Train).unwrap();
        let out = tape.value(y).data();
        for (ch, want) in [0.75, -3.0].into_iter().enumerate() {
            let mut s = 0.0;
            for smp in 0..3 {
                let off = (smp * 2 + ch) * 4;
                s += out[off..off + 4].iter().sum::<f64>();
            }
            assert!((s / 12.0 - want).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 1, 2], 3.0));
        let g = tape.param(Tensor::full(vec![1], 1.0));
        let b = tape.param(Tensor::zeros(vec![1]));
        let mean = [1.0];
        let var = [4.0 - BN_EPS];
        let (y, stats) = tape
            .batchnorm2d(x, g, b, BatchNormMode::Eval { mean: &mean, var: &var })
            .unwrap();
        assert!(stats.is_none());
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_update_uses_momentum() {
        let stats = BatchStats {
            mean: vec![1.0f64],
            var: vec![2.0],
        };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v);
        assert!((m[0] - 0.1).abs() < 1e-12);
        assert!((v[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![0, 2, 2, 2]));
        let g = tape.param(Tensor::zeros(vec![2]));
        let b = tape.param(Tensor::zeros(vec![2]));
        assert!(matches!(
            tape.batchnorm2d(x, g, b, BatchNormMode::Train),
            Err(Error::Parameter(_))
        ));
    }
}
