//! The matching network: conv stack, two dense layers and a TPS head that
//! warps the moving mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geom::{ControlGrid, TpsBasis, IDENTITY_AFFINE};
use crate::nn::{bind, Binding, Conv2dLayer, DenseLayer, NamedTensors, Param};
use crate::tensor::{Scalar, Tensor};

/// Output channels of c1…c6 (3×3, pad 1, stride 1).
pub const CONV_CHANNELS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const LEAKY_ALPHA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatcherConfig {
    pub input_size: usize,
    /// Control points per side; K = k².
    pub k: usize,
    pub fc1: usize,
    pub fc2: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            input_size: 28,
            k: 8,
            fc1: 256,
            fc2: 128,
        }
    }
}

/// Spatial size after the three 2×2 stride-2 pools.
pub fn pooled_size(input: usize) -> Result<usize> {
    let mut s = input;
    for _ in 0..3 {
        if s < 2 {
            return Err(Error::param(format!("matcher input {input} is too small for three pools")));
        }
        s = (s - 2) / 2 + 1;
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct MatcherModel<T: Scalar> {
    pub config: MatcherConfig,
    pub convs: Vec<Conv2dLayer<T>>,
    pub fc1: DenseLayer<T>,
    pub fc2: DenseLayer<T>,
    pub head: DenseLayer<T>,
    pub grid: ControlGrid,
    basis: TpsBasis<T>,
}

/// Tape handles produced by one forward pass.
pub struct MatcherForward {
    /// Parameter rows `[N, 6+2K]`.
    pub params: Var,
    /// Displacement columns of `params`, `[N, 2K]`.
    pub displacements: Var,
    /// Warped moving masks `[N, 1, S, S]`.
    pub warped: Var,
    pub binding: Binding,
}

impl<T: Scalar> MatcherModel<T> {
    pub fn new<R: Rng>(config: MatcherConfig, rng: &mut R) -> Result<Self> {
        let grid = ControlGrid::new(config.k)?;
        let flat = CONV_CHANNELS[5] * pooled_size(config.input_size)?.pow(2);
        if config.fc1 == 0 || config.fc2 == 0 {
            return Err(Error::param("dense layer widths must be positive"));
        }
        let mut convs = Vec::new();
        let mut in_ch = 2;
        for (l, &ch) in CONV_CHANNELS.iter().enumerate() {
            convs.push(Conv2dLayer::new(&format!("c{}", l + 1), in_ch, ch, 3, 1, 1, rng));
            in_ch = ch;
        }
        let fc1 = DenseLayer::new("fc1", flat, config.fc1, rng);
        let fc2 = DenseLayer::new("fc2", config.fc1, config.fc2, rng);
        let mut head = DenseLayer::new("tps", config.fc2, grid.param_len(), rng);
        // Zero weights and an identity bias: the untrained warp is the identity.
        head.weight.value = Tensor::zeros(head.weight.value.shape().to_vec());
        let bias = head.bias.value.data_mut();
        bias.iter_mut().for_each(|b| *b = T::zero());
        for (b, &a) in bias.iter_mut().zip(&IDENTITY_AFFINE) {
            *b = T::lit(a);
        }
        let basis = grid.basis(config.input_size, config.input_size);
        Ok(Self {
            config,
            convs,
            fc1,
            fc2,
            head,
            grid,
            basis,
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    /// `moving`, `fixed`: `[N, 1, S, S]` masks.
    pub fn forward(&self, tape: &mut Tape<T>, moving: &Tensor<T>, fixed: &Tensor<T>) -> Result<MatcherForward> {
        let s = self.config.input_size;
        let n = moving.shape().first().copied().unwrap_or(0);
        if moving.shape() != [n, 1, s, s] || fixed.shape() != moving.shape() {
            return Err(Error::param(format!(
                "matcher expects [N, 1, {s}, {s}] masks, got {:?} and {:?}",
                moving.shape(),
                fixed.shape()
            )));
        }
        let plane = s * s;
        let mut stacked = Vec::with_capacity(2 * n * plane);
        for i in 0..n {
            stacked.extend_from_slice(&moving.data()[i * plane..(i + 1) * plane]);
            stacked.extend_from_slice(&fixed.data()[i * plane..(i + 1) * plane]);
        }
        let mut b = bind(tape, &self.params());
        let x = tape.constant(Tensor::new(vec![n, 2, s, s], stacked)?);
        let mut h = x;
        for (l, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, &mut b, h)?;
            h = tape.leaky_relu(h, LEAKY_ALPHA)?;
            if l % 2 == 1 {
                h = tape.maxpool2d(h, 2, 2)?;
            }
        }
        let h = tape.flatten(h)?;
        let h = self.fc1.forward(tape, &mut b, h)?;
        let h = tape.leaky_relu(h, LEAKY_ALPHA)?;
        let h = self.fc2.forward(tape, &mut b, h)?;
        let h = tape.leaky_relu(h, LEAKY_ALPHA)?;
        let params = self.head.forward(tape, &mut b, h)?;
        let displacements = tape.slice_cols(params, 6, 2 * self.grid.len())?;
        let coeffs = tape.tps_solve(params, &self.grid)?;
        let field = tape.tps_grid(coeffs, &self.basis)?;
        let src = tape.constant(moving.clone());
        let warped = tape.bilinear_sample(src, field)?;
        Ok(MatcherForward {
            params,
            displacements,
            warped,
            binding: b,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = |name: &str, v: usize| (format!("meta.{name}"), Tensor::scalar(v as f32));
        let mut tensors = vec![meta("input_size", self.config.input_size), meta("k", self.config.k)];
        tensors.extend(self.params().iter().map(|p| (p.name.clone(), p.value.cast())));
        Checkpoint::new(tensors)
    }

    /// Rebuilds a model from a checkpoint; dense widths come from the stored
    /// weight shapes.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scalar = |name: &str| {
            ck.get(name)
                .and_then(|t| t.data().first().copied())
                .map(|v| v as usize)
                .ok_or_else(|| Error::param(format!("matcher checkpoint has no `{name}`")))
        };
        let width = |name: &str| {
            ck.get(name)
                .filter(|t| t.rank() == 2)
                .map(|t| t.shape()[1])
                .ok_or_else(|| Error::param(format!("matcher checkpoint has no 2-D `{name}`")))
        };
        let config = MatcherConfig {
            input_size: scalar("meta.input_size")?,
            k: scalar("meta.k")?,
            fc1: width("fc1.weight")?,
            fc2: width("fc2.weight")?,
        };
        let mut model = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let named = NamedTensors::new(ck.tensors.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect());
        for p in model.params_mut() {
            named.take_into(&p.name.clone(), &mut p.value)?;
        }
        Ok(model)
    }

    /// Copies the weights into a model of another scalar type.
    pub fn cast<U: Scalar>(&self) -> MatcherModel<U> {
        let conv = |c: &Conv2dLayer<T>| Conv2dLayer {
            weight: cast_param(&c.weight),
            bias: cast_param(&c.bias),
            stride: c.stride,
            padding: c.padding,
        };
        let dense = |d: &DenseLayer<T>| DenseLayer {
            weight: cast_param(&d.weight),
            bias: cast_param(&d.bias),
        };
        MatcherModel {
            config: self.config,
            convs: self.convs.iter().map(conv).collect(),
            fc1: dense(&self.fc1),
            fc2: dense(&self.fc2),
            head: dense(&self.head),
            grid: self.grid.clone(),
            basis: self.grid.basis(self.config.input_size, self.config.input_size),
        }
    }
}

fn cast_param<T: Scalar, U: Scalar>(p: &Param<T>) -> Param<U> {
    Param::new(p.name.clone(), p.value.cast(), p.decay)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_size_follows_floor_division() {
        assert_eq!(pooled_size(28).unwrap(), 3);
        assert_eq!(pooled_size(8).unwrap(), 1);
        assert!(pooled_size(4).is_err());
    }

    #[test]
    fn untrained_head_emits_identity_parameters() {
        let m = MatcherModel::<f64>::new(MatcherConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mv = Tensor::from_fn(vec![1, 1, 28, 28], |i| ((i * 7) % 3 == 0) as u8 as f64);
        let fx = Tensor::zeros(vec![1, 1, 28, 28]);
        let mut tape = Tape::new();
        let f = m.forward(&mut tape, &mv, &fx).unwrap();
        let p = tape.value(f.params).data();
        assert_eq!(&p[..6], &IDENTITY_AFFINE);
        assert!(p[6..].iter().all(|&v| v == 0.0));
    }
}
