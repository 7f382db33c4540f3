//! Elementwise arithmetic, reductions and reshapes.

use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct Sum {
    input: Var,
    scale: f64,
}

impl<T: Scalar> Function<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let n = ctx.value(self.input).len();
        Ok(vec![Some(vec![g[0] * T::lit(self.scale); n])])
    }
}

struct Add {
    a: Var,
    b: Var,
}

impl<T: Scalar> Function<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }
    fn backward(&self, _: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec()), Some(g.to_vec())])
    }
}

struct Mul {
    a: Var,
    b: Var,
}

impl<T: Scalar> Function<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let a = ctx.value(self.a).data();
        let b = ctx.value(self.b).data();
        let ga = ctx
            .needs_grad(self.a)
            .then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect());
        let gb = ctx
            .needs_grad(self.b)
            .then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect());
        Ok(vec![ga, gb])
    }
}

struct Scale {
    input: Var,
    factor: f64,
}

impl<T: Scalar> Function<T> for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, _: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let f = T::lit(self.factor);
        Ok(vec![Some(g.iter().map(|&x| x * f).collect())])
    }
}

struct Reshape {
    input: Var,
}

impl<T: Scalar> Function<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, _: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(g.to_vec())])
    }
}

struct SliceCols {
    input: Var,
    start: usize,
    width: usize,
}

impl<T: Scalar> Function<T> for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }
    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let shape = ctx.value(self.input).shape();
        let (rows, cols) = (shape[0], shape[1]);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            out[r * cols + self.start..r * cols + self.start + self.width]
                .copy_from_slice(&g[r * self.width..(r + 1) * self.width]);
        }
        Ok(vec![Some(out)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Box::new(Sum { input: x, scale: 1.0 }))
            .expect("sum input precedes output")
    }

    /// Mean of all elements.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s: T = self.value(x).data().iter().copied().sum();
        let scale = 1.0 / n as f64;
        self.push(
            Tensor::scalar(s * T::lit(scale)),
            Box::new(Sum { input: x, scale }),
        )
        .expect("mean input precedes output")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Box::new(Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "mul: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Box::new(Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::lit(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(out, Box::new(Scale { input: x, factor }))
            .expect("scale input precedes output")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Box::new(Reshape { input: x }))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, vec![n, rest])
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 || start + width > v.shape()[1] {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} of {:?}",
                start + width,
                v.shape()
            )));
        }
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * cols + start..r * cols + start + width]);
        }
        let out = Tensor::new(vec![rows, width], data)?;
        self.push(out, Box::new(SliceCols { input: x, start, width }))
    }
}
