use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

struct MaxPool {
    input: Var,
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

impl<T: Scalar> Function<T> for MaxPool {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let mut gx = vec![T::zero(); ctx.value(self.input).len()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            gx[src] = gx[src] + gv;
        }
        Ok(vec![Some(gx)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Max pooling over `k×k` windows. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        if k < 1 || stride < 1 {
            return Err(Error::param(format!(
                "maxpool2d needs k, stride >= 1 (got k={k}, stride={stride})"
            )));
        }
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::dim(format!("maxpool2d expects rank 4, got {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h < k || w < k {
            return Err(Error::param(format!(
                "maxpool2d window {k} larger than input {h}x{w}"
            )));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let xd = self.value(x).data();
        let planes = n * c;
        let mut pairs: Vec<(T, usize)> = vec![(T::zero(), 0); planes * ho * wo];
        par::for_each_chunk_mut(&mut pairs, ho * wo, |p, out| {
            let base = p * h * w;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = base + oi * stride * w + oj * stride;
                    let mut best_v = xd[best];
                    for ki in 0..k {
                        for kj in 0..k {
                            let idx = base + (oi * stride + ki) * w + oj * stride + kj;
                            if xd[idx] > best_v {
                                best_v = xd[idx];
                                best = idx;
                            }
                        }
                    }
                    out[oi * wo + oj] = (best_v, best);
                }
            }
        });
        let (vals, argmax): (Vec<T>, Vec<usize>) = pairs.into_iter().unzip();
        let out = Tensor::new(vec![n, c, ho, wo], vals)?;
        self.push(out, Box::new(MaxPool { input: x, argmax }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_window_takes_the_max() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn ties_route_gradient_to_first_element() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(vec![1, 1, 4, 4], 0.5));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        let gx = g.get(x).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| {
                let (r, c) = (i / 4, i % 4);
                if r % 2 == 0 && c % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(gx, &expected[..]);
    }

    #[test]
    fn odd_sizes_floor() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 7, 3]));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 1]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        assert!(matches!(tape.maxpool2d(x, 0, 2), Err(Error::Parameter(_))));
        assert!(matches!(tape.maxpool2d(x, 2, 0), Err(Error::Parameter(_))));
        assert!(matches!(tape.maxpool2d(x, 5, 1), Err(Error::Parameter(_))));
    }
}
