//! Global average pooling and per-channel feature modulation, the two ops a
//! conditioning vector needs to steer a feature map.

use super::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct GlobalAvgPool {
    input: Var,
}

impl<T: Scalar> Function<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let s = ctx.value(self.input).shape();
        let hw = s[2] * s[3];
        let inv = T::lit(1.0 / hw as f64);
        let gx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, hw)).collect();
        Ok(vec![Some(gx)])
    }
}

/// `x·(1 + γ) + β` with `γ`, `β` broadcast over each channel's plane.
struct Film {
    x: Var,
    gamma: Var,
    beta: Var,
}

impl<T: Scalar> Function<T> for Film {
    fn name(&self) -> &'static str {
        "film"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.value(self.x);
        let gamma = ctx.value(self.gamma).data();
        let hw = x.shape()[2] * x.shape()[3];
        let mut gx = vec![T::zero(); x.len()];
        let mut gg = vec![T::zero(); gamma.len()];
        let mut gb = vec![T::zero(); gamma.len()];
        for (p, ((gxp, gp), xp)) in gx
            .chunks_mut(hw)
            .zip(g.chunks(hw))
            .zip(x.data().chunks(hw))
            .enumerate()
        {
            let scale = T::one() + gamma[p];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for ((o, &gv), &xv) in gxp.iter_mut().zip(gp).zip(xp) {
                *o = gv * scale;
                sg = sg + gv * xv;
                sb = sb + gv;
            }
            gg[p] = sg;
            gb[p] = sb;
        }
        Ok(vec![
            ctx.needs_grad(self.x).then_some(gx),
            ctx.needs_grad(self.gamma).then_some(gg),
            ctx.needs_grad(self.beta).then_some(gb),
        ])
    }
}

impl<T: Scalar> Tape<T> {
    /// Mean over each channel's plane: `[N,C,H,W]` to `[N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::dim(format!("global_avg_pool expects non-empty rank 4, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::lit(1.0 / hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        self.push(Tensor::new(vec![s[0], s[1]], out)?, Box::new(GlobalAvgPool { input: x }))
    }

    /// Modulates `x: [N,C,H,W]` by per-sample, per-channel `gamma` and
    /// `beta` (both `[N,C]`): `x·(1 + γ) + β`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || self.shape(gamma) != [s[0], s[1]] || self.shape(beta) != [s[0], s[1]] {
            return Err(Error::dim(format!(
                "film: x {s:?}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let hw = s[2] * s[3];
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = self.value(x).data().to_vec();
        for (p, plane) in out.chunks_mut(hw.max(1)).enumerate() {
            let scale = T::one() + g[p];
            plane.iter_mut().for_each(|v| *v = *v * scale + b[p]);
        }
        self.push(Tensor::new(s, out)?, Box::new(Film { x, gamma, beta }))
    }
}
