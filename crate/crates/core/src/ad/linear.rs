use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{mm, Scalar, Tensor};

struct Dense {
    input: Var,
    weight: Var,
    bias: Var,
    n: usize,
    d: usize,
    m: usize,
}

impl<T: Scalar> Function<T> for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.weight, self.bias]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (n, d, m) = (self.n, self.d, self.m);
        let x = ctx.value(self.input).data();
        let w = ctx.value(self.weight).data();
        let gx = ctx.needs_grad(self.input).then(|| {
            let mut gx = vec![T::zero(); n * d];
            mm::abt(n, m, d, g, w, &mut gx, false);
            gx
        });
        let gw = ctx.needs_grad(self.weight).then(|| {
            let mut gw = vec![T::zero(); d * m];
            mm::atb(d, n, m, x, g, &mut gw, false);
            gw
        });
        let gb = ctx.needs_grad(self.bias).then(|| {
            let mut gb = vec![T::zero(); m];
            for row in g.chunks(m) {
                for (b, &v) in gb.iter_mut().zip(row) {
                    *b = *b + v;
                }
            }
            gb
        });
        Ok(vec![gx, gw, gb])
    }
}

impl<T: Scalar> Tape<T> {
    /// `x·weight + bias` for `x: [N,D]`, `weight: [D,M]`, `bias: [M]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::dim(format!(
                "dense: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let bd = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bd.iter().copied()).collect();
        mm::ab(n, d, m, self.value(x).data(), self.value(weight).data(), &mut out, true);
        let out = Tensor::new(vec![n, m], out)?;
        self.push(
            out,
            Box::new(Dense {
                input: x,
                weight,
                bias,
                n,
                d,
                m,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut tape = Tape::<f64>::new();
        let data = vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0];
        let x = tape.constant(Tensor::new(vec![2, 3], data.clone()).unwrap());
        let eye = Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let w = tape.param(eye);
        let b = tape.param(Tensor::zeros(vec![3]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn zero_weight_broadcasts_bias() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(vec![3, 2], 7.0));
        let w = tape.param(Tensor::zeros(vec![2, 2]));
        let b = tape.param(Tensor::new(vec![2], vec![0.25, -1.5]).unwrap());
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -1.5, 0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 4]));
        let w = tape.param(Tensor::zeros(vec![3, 2]));
        let b = tape.param(Tensor::zeros(vec![2]));
        assert!(matches!(tape.dense(x, w, b), Err(Error::Dimension(_))));
    }
}
