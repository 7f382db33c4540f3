//! Trainable layers built on the tape.
//!
//! Layers own their parameters. A forward pass first copies every
//! parameter onto the tape with [`bind`], in the order the model lists
//! them, and layers then consume the resulting [`Binding`] in that same
//! order.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ad::{Activation, BatchNormMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A named trainable tensor. `decay` marks weights that take the L2 term.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, decay: bool) -> Self {
        Self {
            name: name.into(),
            value,
            decay,
        }
    }
}

/// Tape handles for a model's parameters, consumed in declaration order.
pub struct Binding {
    vars: Vec<Var>,
    cursor: usize,
}

impl Binding {
    pub fn take(&mut self) -> Var {
        let v = self.vars[self.cursor];
        self.cursor += 1;
        v
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor == self.vars.len()
    }
}

/// Places `params` on the tape as trainable leaves.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &[&Param<T>]) -> Binding {
    Binding {
        vars: params.iter().map(|p| tape.param(p.value.clone())).collect(),
        cursor: 0,
    }
}

/// He-normal initialization: `N(0, 2/fan_in)`.
pub fn he_normal<T: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2dLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![out_ch]), false),
            stride,
            padding,
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<Var> {
        let (w, bias) = (b.take(), b.take());
        tape.conv2d(x, w, bias, self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(vec![inputs, outputs], inputs, rng),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![outputs]), false),
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<Var> {
        let (w, bias) = (b.take(), b.take());
        tape.dense(x, w, bias)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(vec![channels], T::one()), false),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(vec![channels]), false),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    /// Training-mode pass; folds the batch statistics into the running ones.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<Var> {
        let (g, beta) = (b.take(), b.take());
        let (y, stats) = tape.batchnorm2d(x, g, beta, BatchNormMode::Train)?;
        let stats = stats.ok_or_else(|| Error::Internal("training batchnorm without stats".into()))?;
        stats.update_running(&mut self.running_mean, &mut self.running_var);
        Ok(y)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<Var> {
        let (g, beta) = (b.take(), b.take());
        let mode = BatchNormMode::Eval {
            mean: &self.running_mean,
            var: &self.running_var,
        };
        Ok(tape.batchnorm2d(x, g, beta, mode)?.0)
    }
}

/// Conv → batch norm → activation, the localizer's basic block.
#[derive(Clone, Debug)]
pub struct ConvBnAct<T> {
    pub conv: Conv2dLayer<T>,
    pub bn: BatchNormLayer<T>,
    pub act: Activation,
}

impl<T: Scalar> ConvBnAct<T> {
    pub fn params(&self) -> [&Param<T>; 4] {
        let [w, b] = self.conv.params();
        let [g, be] = self.bn.params();
        [w, b, g, be]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        let [w, b] = self.conv.params_mut();
        let [g, be] = self.bn.params_mut();
        [w, b, g, be]
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, b: &mut Binding, x: Var, train: bool) -> Result<Var> {
        let y = self.conv.forward(tape, b, x)?;
        let y = if train {
            self.bn.forward_train(tape, b, y)?
        } else {
            self.bn.forward_eval(tape, b, y)?
        };
        tape.activation(y, self.act)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, b, x)?;
        let y = self.bn.forward_eval(tape, b, y)?;
        tape.activation(y, self.act)
    }
}

/// Collects the tensors of a named-tensor list into a lookup that errors on
/// missing names or shape mismatches.
pub struct NamedTensors<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> NamedTensors<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::param(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn take_into(&self, name: &str, dst: &mut Tensor<T>) -> Result<()> {
        let src = self.get(name)?;
        if src.shape() != dst.shape() {
            return Err(Error::dim(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.clone();
        Ok(())
    }

    pub fn take_vec(&self, name: &str, dst: &mut [T]) -> Result<()> {
        let src = self.get(name)?;
        if src.len() != dst.len() {
            return Err(Error::dim(format!(
                "tensor `{name}` has {} values, model expects {}",
                src.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(src.data());
        Ok(())
    }
}
