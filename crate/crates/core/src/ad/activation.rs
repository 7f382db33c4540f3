use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `x` for `x > 0`, else `alpha·x`.
    LeakyRelu(f64),
    /// `x` for `x > 0`, else `exp(x) − 1`.
    Elu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(alpha)
                }
            }
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(alpha)
                }
            }
            Activation::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

struct Elementwise {
    input: Var,
    kind: Activation,
}

const CHUNK: usize = 1 << 14;

impl<T: Scalar> Function<T> for Elementwise {
    fn name(&self) -> &'static str {
        "activation"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.value(self.input).data();
        let y = ctx.output().data();
        let mut gx = g.to_vec();
        let kind = self.kind;
        par::for_each_chunk_mut(&mut gx, CHUNK, |c, chunk| {
            let off = c * CHUNK;
            for (i, gv) in chunk.iter_mut().enumerate() {
                *gv = *gv * kind.derivative(x[off + i], y[off + i]);
            }
        });
        Ok(vec![Some(gx)])
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = kind {
            if alpha.is_nan() || alpha < 0.0 {
                return Err(Error::param(format!("leaky_relu alpha must be >= 0, got {alpha}")));
            }
        }
        let input = self.value(x);
        let mut data = input.data().to_vec();
        par::for_each_chunk_mut(&mut data, CHUNK, |_, chunk| {
            for v in chunk.iter_mut() {
                *v = kind.apply(*v);
            }
        });
        let out = Tensor::new(input.shape().to_vec(), data)?;
        self.push(out, Box::new(Elementwise { input: x, kind }))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(alpha))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_scales_negatives() {
        assert_eq!(Activation::LeakyRelu(1e-4).apply(-1.0f64), -1e-4);
        assert_eq!(Activation::LeakyRelu(1e-4).apply(2.0f64), 2.0);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(Activation::Sigmoid.apply(0.0f32), 0.5);
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        assert_eq!(Activation::Elu.apply(0.0f64), 0.0);
        assert!((Activation::Elu.apply(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![2]));
        assert!(tape.leaky_relu(x, -0.1).is_err());
    }
}
