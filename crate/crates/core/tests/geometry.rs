//! Thin-plate-spline exactness and warp properties.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpreg::ad::Tape;
use warpreg::geom::{
    bilinear_sample, lattice_coord, tps_grid, tps_kernel, tps_solve, warp_mask, ControlGrid, TpsCoeffs,
    TpsParams, WarpField, IDENTITY_AFFINE,
};
use warpreg::mask::Mask;
use warpreg::Tensor;

/// Evaluates solved coefficients at an arbitrary point.
fn eval_spline(grid: &ControlGrid, c: &TpsCoeffs, p: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (d, o) in out.iter_mut().enumerate() {
        *o = c.affine[0][d] * p[0] + c.affine[1][d] * p[1] + c.affine[2][d];
        for (w, q) in c.weights.iter().zip(grid.points()) {
            *o += w[d] * tps_kernel((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
        }
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng, grid: &ControlGrid, affine_spread: f64, disp: f64) -> TpsParams {
    let mut affine = IDENTITY_AFFINE;
    for a in &mut affine {
        *a += rng.random_range(-affine_spread..=affine_spread);
    }
    TpsParams {
        affine,
        displacements: (0..2 * grid.len()).map(|_| rng.random_range(-disp..=disp)).collect(),
    }
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(0.4))
}

#[test]
fn identity_parameters_leave_masks_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [2, 8, 16] {
        let grid = ControlGrid::new(k).unwrap();
        let mask = random_mask(&mut rng, 28, 28);
        let out = warp_mask(&mask, &TpsParams::identity(&grid), &grid).unwrap();
        let worst = mask
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-6, "k={k}: max pixel change {worst}");
    }
}

#[test]
fn affine_parameters_give_zero_bending_and_the_affine_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [2, 8, 16] {
        let grid = ControlGrid::new(k).unwrap();
        for _ in 0..5 {
            let mut p = random_params(&mut rng, &grid, 0.4, 0.0);
            p.displacements.iter_mut().for_each(|d| *d = 0.0);
            let c = tps_solve(&grid, &p).unwrap();
            let w = c.weights.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(w < 1e-8, "k={k}: max |w| = {w:e}");
            let field = tps_grid(&grid, &c, 13, 17);
            let a = p.affine;
            for i in 0..13 {
                for j in 0..17 {
                    let (x, y) = (lattice_coord(j, 17), lattice_coord(i, 13));
                    let f = field.at(i, j);
                    assert!((f[0] - (a[0] * x + a[1] * y + a[2])).abs() < 1e-7);
                    assert!((f[1] - (a[3] * x + a[4] * y + a[5])).abs() < 1e-7);
                }
            }
        }
    }
}

#[test]
fn spline_interpolates_every_control_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [2, 8, 16] {
        let grid = ControlGrid::new(k).unwrap();
        for _ in 0..5 {
            let p = random_params(&mut rng, &grid, 0.2, 0.3);
            let c = tps_solve(&grid, &p).unwrap();
            for (q, t) in grid.points().iter().zip(p.targets(&grid)) {
                let v = eval_spline(&grid, &c, *q);
                assert!((v[0] - t[0]).abs() < 1e-6 && (v[1] - t[1]).abs() < 1e-6, "k={k}");
            }
        }
    }
}

#[test]
fn tape_and_direct_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = ControlGrid::new(4).unwrap();
    let p = random_params(&mut rng, &grid, 0.2, 0.2);
    let direct = tps_grid(&grid, &tps_solve(&grid, &p).unwrap(), 9, 11);
    let mut tape = Tape::<f64>::new();
    let pv = tape.constant(Tensor::new(vec![1, grid.param_len()], p.to_vec()).unwrap());
    let c = tape.tps_solve(pv, &grid).unwrap();
    let f = tape.tps_grid(c, &grid.basis(9, 11)).unwrap();
    for (a, b) in direct.coords.iter().zip(tape.value(f).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn field_of(grid: &ControlGrid, v: &[f64]) -> Vec<f64> {
    let p = TpsParams::from_slice(v, grid).unwrap();
    tps_grid(grid, &tps_solve(grid, &p).unwrap(), 7, 7).coords
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Fields depend linearly on the parameters: the displacement of
    /// `p1 + p2 − identity` is the sum of the individual displacements.
    #[test]
    fn fields_superpose(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = ControlGrid::new(k).unwrap();
        let id = TpsParams::identity(&grid).to_vec();
        let p1 = random_params(&mut rng, &grid, 0.3, 0.3).to_vec();
        let p2 = random_params(&mut rng, &grid, 0.3, 0.3).to_vec();
        let sum: Vec<f64> = p1.iter().zip(&p2).zip(&id).map(|((a, b), i)| a + b - i).collect();
        let (f0, f1, f2, fs) = (field_of(&grid, &id), field_of(&grid, &p1), field_of(&grid, &p2), field_of(&grid, &sum));
        for i in 0..f0.len() {
            let lhs = fs[i] - f0[i];
            let rhs = (f1[i] - f0[i]) + (f2[i] - f0[i]);
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }

    /// A constant image sampled strictly inside its bounds stays constant.
    #[test]
    fn sampling_conserves_constants(seed in any::<u64>(), h in 2usize..9, w in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = WarpField {
            h: 5,
            w: 6,
            coords: (0..60).map(|_| rng.random_range(-0.999..0.999)).collect(),
        };
        let ones = Mask::from_fn(h, w, |_, _| true);
        let out = bilinear_sample(&ones, &field).unwrap();
        prop_assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    /// Warped masks stay within [0, 1].
    #[test]
    fn warping_preserves_the_value_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = ControlGrid::new(3).unwrap();
        let mask = random_mask(&mut rng, 12, 12);
        let p = random_params(&mut rng, &grid, 0.5, 0.5);
        let out = warp_mask(&mask, &p, &grid).unwrap();
        prop_assert!(out.data().iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
    }
}
