//! Thin-plate-spline parameterization, solve and grid evaluation.
//!
//! Coordinates live in `[-1, 1]²` with `(-1, -1)` at the centre of the
//! top-left pixel and `x` running along columns. Control points sit on a
//! regular `k×k` lattice, indexed row-major (`p = row·k + col`).
//!
//! A warp is given by a 2×3 affine matrix `A` and one 2-D displacement
//! `d_p` per control point. The spline interpolates the targets
//! `t_p = A·[c_p; 1] + d_p`:
//!
//! ```text
//! T(x) = Σ_p w_p·U(‖x − c_p‖) + a_x·x + a_y·y + a_1,   U(r) = r²·ln(r²)
//! ```
//!
//! with the side conditions `Σ w_p = 0`, `Σ w_p·c_p = 0`. The coefficient
//! vector `[w; a]` is the first `K` columns of the inverse TPS system
//! matrix applied to the targets, so the whole warp is linear in
//! `(A, d)`.

use std::sync::Arc;

use crate::ad::{BackwardCtx, Function, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{mm, Scalar, Tensor};

/// Radial basis `r²·ln(r²)` evaluated from the squared distance.
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Normalized coordinate of pixel index `i` on an axis of `n` pixels.
pub fn lattice_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// A `k×k` lattice of control points with its cached system inverse.
#[derive(Clone, Debug)]
pub struct ControlGrid {
    k: usize,
    points: Vec<[f64; 2]>,
    /// `(K+3)×(K+3)` inverse of the TPS system matrix, row-major.
    inverse: Vec<f64>,
}

impl ControlGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("control grid needs k >= 2, got {k}")));
        }
        let points: Vec<[f64; 2]> = (0..k * k)
            .map(|p| [lattice_coord(p % k, k), lattice_coord(p / k, k)])
            .collect();
        let inverse = invert(&system_matrix(&points), points.len() + 3)?;
        Ok(Self { k, points, inverse })
    }

    /// Points per side.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of control points `K = k²`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// The system matrix `L`, rebuilt on demand.
    pub fn system_matrix(&self) -> Vec<f64> {
        system_matrix(&self.points)
    }

    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    /// Width of a parameter vector: 6 affine values plus `2K`
    /// displacements.
    pub fn param_len(&self) -> usize {
        6 + 2 * self.len()
    }

    /// The `(K+3)×K` block of the inverse that maps targets to
    /// coefficients.
    fn solve_block<T: Scalar>(&self) -> Vec<T> {
        let (kk, n) = (self.len(), self.len() + 3);
        let mut out = Vec::with_capacity(n * kk);
        for r in 0..n {
            out.extend(self.inverse[r * n..r * n + kk].iter().map(|&v| T::lit(v)));
        }
        out
    }

    /// Precomputes the basis rows for an `h×w` output lattice.
    pub fn basis<T: Scalar>(&self, h: usize, w: usize) -> TpsBasis<T> {
        let cols = self.len() + 3;
        let mut data = Vec::with_capacity(h * w * cols);
        for i in 0..h {
            let y = lattice_coord(i, h);
            for j in 0..w {
                let x = lattice_coord(j, w);
                for c in &self.points {
                    let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                    data.push(T::lit(tps_kernel(r2)));
                }
                data.extend([T::lit(x), T::lit(y), T::one()]);
            }
        }
        TpsBasis {
            h,
            w,
            cols,
            data: Arc::new(data),
        }
    }
}

fn system_matrix(points: &[[f64; 2]]) -> Vec<f64> {
    let k = points.len();
    let n = k + 3;
    let mut l = vec![0.0; n * n];
    for i in 0..k {
        for j in 0..k {
            let r2 = (points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2);
            l[i * n + j] = tps_kernel(r2);
        }
        let p = [points[i][0], points[i][1], 1.0];
        for (c, &v) in p.iter().enumerate() {
            l[i * n + k + c] = v;
            l[(k + c) * n + i] = v;
        }
    }
    l
}

/// Gauss–Jordan inversion with partial pivoting.
fn invert(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .expect("non-empty range");
        if m[pivot * n + col].abs() < 1e-12 * scale {
            return Err(Error::param("singular TPS system: degenerate control grid"));
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
        }
        let d = 1.0 / m[col * n + col];
        for j in 0..n {
            m[col * n + j] *= d;
            inv[col * n + j] *= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                m[r * n + j] -= f * m[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    Ok(inv)
}

/// Affine coefficients plus per-control-point displacements.
///
/// `affine` is the row-major 2×3 matrix `[[a11, a12, a13], [a21, a22, a23]]`
/// so that `x' = a11·x + a12·y + a13`. `displacements` is interleaved
/// `[dx_0, dy_0, dx_1, dy_1, …]` in control-point order.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsParams {
    pub affine: [f64; 6],
    pub displacements: Vec<f64>,
}

pub const IDENTITY_AFFINE: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

impl TpsParams {
    pub fn identity(grid: &ControlGrid) -> Self {
        Self {
            affine: IDENTITY_AFFINE,
            displacements: vec![0.0; 2 * grid.len()],
        }
    }

    /// Parses the flat layout `[affine(6), displacements(2K)]`.
    pub fn from_slice(values: &[f64], grid: &ControlGrid) -> Result<Self> {
        if values.len() != grid.param_len() {
            return Err(Error::dim(format!(
                "TPS parameters for K={} need {} values, got {}",
                grid.len(),
                grid.param_len(),
                values.len()
            )));
        }
        let mut affine = [0.0; 6];
        affine.copy_from_slice(&values[..6]);
        Ok(Self {
            affine,
            displacements: values[6..].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.affine.to_vec();
        v.extend_from_slice(&self.displacements);
        v
    }

    /// Target location of every control point, `A·[c; 1] + d`.
    pub fn targets(&self, grid: &ControlGrid) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; grid.len()];
        targets_into(grid.points(), &self.to_vec(), &mut out);
        out
    }
}

fn targets_into<T: Scalar>(points: &[[f64; 2]], params: &[T], out: &mut [[T; 2]]) {
    let a = &params[..6];
    for (p, (c, t)) in points.iter().zip(out.iter_mut()).enumerate() {
        let (x, y) = (T::lit(c[0]), T::lit(c[1]));
        t[0] = a[0] * x + a[1] * y + a[2] + params[6 + 2 * p];
        t[1] = a[3] * x + a[4] * y + a[5] + params[6 + 2 * p + 1];
    }
}

/// Solved spline coefficients: `weights` (K×2) and the affine block `a`
/// (3×2, rows for `x`, `y`, `1`).
#[derive(Clone, Debug)]
pub struct TpsCoeffs {
    pub weights: Vec<[f64; 2]>,
    pub affine: [[f64; 2]; 3],
}

impl TpsCoeffs {
    fn from_flat(flat: &[f64], k: usize) -> Self {
        let weights = (0..k).map(|i| [flat[2 * i], flat[2 * i + 1]]).collect();
        let mut affine = [[0.0; 2]; 3];
        for (r, row) in affine.iter_mut().enumerate() {
            *row = [flat[2 * (k + r)], flat[2 * (k + r) + 1]];
        }
        Self { weights, affine }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.weights.iter().flatten().copied().collect();
        v.extend(self.affine.iter().flatten());
        v
    }
}

/// Solves the spline for one parameter set.
pub fn tps_solve(grid: &ControlGrid, params: &TpsParams) -> Result<TpsCoeffs> {
    if params.displacements.len() != 2 * grid.len() {
        return Err(Error::dim(format!(
            "expected {} displacement values, got {}",
            2 * grid.len(),
            params.displacements.len()
        )));
    }
    let k = grid.len();
    let mut t = vec![[0.0; 2]; k];
    targets_into(grid.points(), &params.to_vec(), &mut t);
    let t_flat: Vec<f64> = t.iter().flatten().copied().collect();
    let mut out = vec![0.0; (k + 3) * 2];
    mm::ab(k + 3, k, 2, &grid.solve_block::<f64>(), &t_flat, &mut out, false);
    Ok(TpsCoeffs::from_flat(&out, k))
}

/// Per-pixel source coordinates (`h×w×2`, `x` first).
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub h: usize,
    pub w: usize,
    pub coords: Vec<f64>,
}

impl WarpField {
    /// The output lattice itself.
    pub fn identity(h: usize, w: usize) -> Self {
        let mut coords = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                coords.extend([lattice_coord(j, w), lattice_coord(i, h)]);
            }
        }
        Self { h, w, coords }
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let o = (i * self.w + j) * 2;
        [self.coords[o], self.coords[o + 1]]
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![1, self.h, self.w, 2], |i| T::lit(self.coords[i]))
    }
}

/// Evaluates solved coefficients on the regular `h×w` output lattice.
pub fn tps_grid(grid: &ControlGrid, coeffs: &TpsCoeffs, h: usize, w: usize) -> WarpField {
    let basis = grid.basis::<f64>(h, w);
    let mut coords = vec![0.0; h * w * 2];
    mm::ab(h * w, basis.cols, 2, &basis.data, &coeffs.to_flat(), &mut coords, false);
    WarpField { h, w, coords }
}

/// Basis rows `[U(‖x − c_1‖) … U(‖x − c_K‖), x, y, 1]` for every pixel of
/// an output lattice.
#[derive(Clone, Debug)]
pub struct TpsBasis<T> {
    h: usize,
    w: usize,
    cols: usize,
    data: Arc<Vec<T>>,
}

impl<T> TpsBasis<T> {
    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }
}

struct TpsSolveOp<T> {
    params: Var,
    block: Vec<T>,
    points: Arc<Vec<[f64; 2]>>,
}

impl<T: Scalar> Function<T> for TpsSolveOp<T> {
    fn name(&self) -> &'static str {
        "tps_solve"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.params]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let k = self.points.len();
        let width = 6 + 2 * k;
        let n = ctx.value(self.params).shape()[0];
        let mut gp = vec![T::zero(); n * width];
        let mut dt = vec![T::zero(); k * 2];
        for s in 0..n {
            mm::atb(k, k + 3, 2, &self.block, &g[s * (k + 3) * 2..(s + 1) * (k + 3) * 2], &mut dt, false);
            let out = &mut gp[s * width..(s + 1) * width];
            for (p, c) in self.points.iter().enumerate() {
                let (x, y) = (T::lit(c[0]), T::lit(c[1]));
                let (gx, gy) = (dt[2 * p], dt[2 * p + 1]);
                out[0] = out[0] + gx * x;
                out[1] = out[1] + gx * y;
                out[2] = out[2] + gx;
                out[3] = out[3] + gy * x;
                out[4] = out[4] + gy * y;
                out[5] = out[5] + gy;
                out[6 + 2 * p] = gx;
                out[6 + 2 * p + 1] = gy;
            }
        }
        Ok(vec![Some(gp)])
    }
}

struct TpsGridOp<T> {
    coeffs: Var,
    basis: TpsBasis<T>,
}

impl<T: Scalar> Function<T> for TpsGridOp<T> {
    fn name(&self) -> &'static str {
        "tps_grid"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.coeffs]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let b = &self.basis;
        let n = ctx.value(self.coeffs).shape()[0];
        let hw = b.h * b.w;
        let mut gc = vec![T::zero(); n * b.cols * 2];
        for s in 0..n {
            mm::atb(
                b.cols,
                hw,
                2,
                &b.data,
                &g[s * hw * 2..(s + 1) * hw * 2],
                &mut gc[s * b.cols * 2..(s + 1) * b.cols * 2],
                false,
            );
        }
        Ok(vec![Some(gc)])
    }
}

impl<T: Scalar> Tape<T> {
    /// Maps a batch of parameter rows `[N, 6+2K]` to spline coefficients
    /// `[N, K+3, 2]`.
    pub fn tps_solve(&mut self, params: Var, grid: &ControlGrid) -> Result<Var> {
        let shape = self.shape(params);
        if shape.len() != 2 || shape[1] != grid.param_len() {
            return Err(Error::dim(format!(
                "tps_solve expects [N, {}], got {shape:?}",
                grid.param_len()
            )));
        }
        let (n, k) = (shape[0], grid.len());
        let block = grid.solve_block::<T>();
        let pd = self.value(params).data();
        let mut out = vec![T::zero(); n * (k + 3) * 2];
        let mut t = vec![[T::zero(); 2]; k];
        for s in 0..n {
            targets_into(grid.points(), &pd[s * grid.param_len()..(s + 1) * grid.param_len()], &mut t);
            let flat: Vec<T> = t.iter().flatten().copied().collect();
            mm::ab(k + 3, k, 2, &block, &flat, &mut out[s * (k + 3) * 2..(s + 1) * (k + 3) * 2], false);
        }
        let out = Tensor::new(vec![n, k + 3, 2], out)?;
        self.push(
            out,
            Box::new(TpsSolveOp {
                params,
                block,
                points: Arc::new(grid.points().to_vec()),
            }),
        )
    }

    /// Evaluates coefficients `[N, K+3, 2]` on the basis lattice, giving a
    /// sampling field `[N, H, W, 2]`.
    pub fn tps_grid(&mut self, coeffs: Var, basis: &TpsBasis<T>) -> Result<Var> {
        let shape = self.shape(coeffs);
        if shape.len() != 3 || shape[1] != basis.cols || shape[2] != 2 {
            return Err(Error::dim(format!(
                "tps_grid expects [N, {}, 2], got {shape:?}",
                basis.cols
            )));
        }
        let n = shape[0];
        let hw = basis.h * basis.w;
        let cd = self.value(coeffs).data();
        let mut out = vec![T::zero(); n * hw * 2];
        for s in 0..n {
            mm::ab(
                hw,
                basis.cols,
                2,
                &basis.data,
                &cd[s * basis.cols * 2..(s + 1) * basis.cols * 2],
                &mut out[s * hw * 2..(s + 1) * hw * 2],
                false,
            );
        }
        let out = Tensor::new(vec![n, basis.h, basis.w, 2], out)?;
        self.push(
            out,
            Box::new(TpsGridOp {
                coeffs,
                basis: basis.clone(),
            }),
        )
    }
}
