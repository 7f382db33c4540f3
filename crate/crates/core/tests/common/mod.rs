//! Randomized finite-difference cases for every differentiable tape op,
//! shared by the gradient suite and the acceptance gate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpreg::ad::{Activation, BatchNormMode, Tape, Var};
use warpreg::geom::ControlGrid;
use warpreg::gradcheck::{check, probe_loss};
use warpreg::locnet::{match_anchors, AnchorSet, BBox};
use warpreg::{Result, Tensor};

/// Randomized shapes per op.
pub const CASES: u64 = 20;
pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

pub struct GradOp {
    pub name: &'static str,
    /// Builds one random case from the rng and returns its largest relative
    /// error; the salt varies the probe weights.
    pub case: fn(&mut ChaCha8Rng, u64) -> Result<f64>,
}

pub const OPS: &[GradOp] = &[
    GradOp { name: "conv2d", case: conv2d },
    GradOp { name: "maxpool2d", case: maxpool2d },
    GradOp { name: "dense", case: dense },
    GradOp { name: "elu", case: elu },
    GradOp { name: "sigmoid", case: sigmoid },
    GradOp { name: "leaky_relu", case: leaky_relu },
    GradOp { name: "batchnorm2d", case: batchnorm },
    GradOp { name: "basic", case: basic },
    GradOp { name: "global_avg_pool", case: global_avg_pool },
    GradOp { name: "film", case: film },
    GradOp { name: "tps_solve", case: tps_solve },
    GradOp { name: "tps_grid", case: tps_grid },
    GradOp { name: "bilinear_sample", case: bilinear_sample },
    GradOp { name: "soft_dice", case: soft_dice },
    GradOp { name: "smoothness", case: smoothness },
    GradOp { name: "locnet_loss", case: locnet_loss },
    GradOp { name: "gather_anchors", case: gather_anchors },
];

/// Largest relative error of `op` over all its randomized cases.
pub fn worst_error(op: &GradOp) -> Result<f64> {
    let salt = op.name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut worst = 0.0f64;
    for c in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(salt.wrapping_mul(1000).wrapping_add(c));
        worst = worst.max((op.case)(&mut rng, c)?);
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn run<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    Ok(check(inputs, STEP, f)?.max_rel_error)
}

fn conv2d(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..4));
    let k = [1, 3][rng.random_range(0..2)];
    let (stride, pad) = (rng.random_range(1..3), rng.random_range(0..2));
    let (h, w) = (rng.random_range(k..6), rng.random_range(k..6));
    let x = rand_tensor(rng, vec![n, ci, h, w], 1.0);
    let wt = rand_tensor(rng, vec![co, ci, k, k], 1.0);
    let b = rand_tensor(rng, vec![co], 1.0);
    run(&[x, wt, b], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
        probe_loss(t, y, salt)
    })
}

fn maxpool2d(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, ch) = (rng.random_range(1..3), rng.random_range(1..3));
    let (h, w) = (rng.random_range(2..7), rng.random_range(2..7));
    let x = rand_tensor(rng, vec![n, ch, h, w], 1.0);
    run(&[x], |t, v| {
        let y = t.maxpool2d(v[0], 2, 2)?;
        probe_loss(t, y, salt)
    })
}

fn dense(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..5));
    let x = rand_tensor(rng, vec![n, i], 1.0);
    let w = rand_tensor(rng, vec![i, o], 1.0);
    let b = rand_tensor(rng, vec![o], 1.0);
    run(&[x, w, b], |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        probe_loss(t, y, salt)
    })
}

fn activation(rng: &mut ChaCha8Rng, salt: u64, kind: Activation) -> Result<f64> {
    let len = rng.random_range(1..12);
    let x = rand_tensor(rng, vec![len], 2.0);
    run(&[x], |t, v| {
        let y = t.activation(v[0], kind)?;
        probe_loss(t, y, salt)
    })
}

fn elu(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    activation(rng, salt, Activation::Elu)
}

fn sigmoid(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    activation(rng, salt, Activation::Sigmoid)
}

fn leaky_relu(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    activation(rng, salt, Activation::LeakyRelu(0.1))
}

fn batchnorm(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, ch) = (rng.random_range(2..4), rng.random_range(1..3));
    let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
    let x = rand_tensor(rng, vec![n, ch, h, w], 1.0);
    let g = Tensor::from_fn(vec![ch], |_| rng.random_range(0.5..1.5));
    let b = rand_tensor(rng, vec![ch], 1.0);
    run(&[x, g, b], |t, v| {
        let (y, _) = t.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train)?;
        probe_loss(t, y, salt)
    })
}

fn basic(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (r, cols) = (rng.random_range(1..4), rng.random_range(2..6));
    let a = rand_tensor(rng, vec![r, cols], 1.0);
    let b = rand_tensor(rng, vec![r, cols], 1.0);
    let start = rng.random_range(0..cols - 1);
    let width = rng.random_range(1..cols - start + 1);
    run(&[a, b], |t, v| {
        let s = t.add(v[0], v[1])?;
        let p = t.mul(s, v[1])?;
        let q = t.slice_cols(p, start, width)?;
        let q = t.scale(q, 1.7);
        let m = t.mean(q);
        let f = t.flatten(p)?;
        let l = probe_loss(t, f, salt)?;
        t.add(m, l)
    })
}

fn global_avg_pool(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, c) = (rng.random_range(1..3), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
    let x = rand_tensor(rng, vec![n, c, h, w], 1.0);
    run(&[x], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        probe_loss(t, y, salt)
    })
}

fn film(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, c) = (rng.random_range(1..3), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
    let x = rand_tensor(rng, vec![n, c, h, w], 1.0);
    let g = rand_tensor(rng, vec![n, c], 0.5);
    let b = rand_tensor(rng, vec![n, c], 0.5);
    run(&[x, g, b], |t, v| {
        let y = t.film(v[0], v[1], v[2])?;
        probe_loss(t, y, salt)
    })
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, grid: &ControlGrid, spread: f64) -> Tensor<f64> {
    let p = grid.param_len();
    let base = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    Tensor::from_fn(vec![n, p], |i| {
        let j = i % p;
        let b = if j < 6 { base[j] } else { 0.0 };
        b + rng.random_range(-spread..spread)
    })
}

fn tps_solve(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let grid = ControlGrid::new(rng.random_range(2..5))?;
    let n = rng.random_range(1..3);
    let params = random_params(rng, n, &grid, 0.2);
    run(&[params], |t, v| {
        let y = t.tps_solve(v[0], &grid)?;
        probe_loss(t, y, salt)
    })
}

fn tps_grid(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let grid = ControlGrid::new(rng.random_range(2..5))?;
    let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
    let basis = grid.basis::<f64>(h, w);
    let n = rng.random_range(1..3);
    let coeffs = rand_tensor(rng, vec![n, grid.len() + 3, 2], 1.0);
    run(&[coeffs], |t, v| {
        let y = t.tps_grid(v[0], &basis)?;
        probe_loss(t, y, salt)
    })
}

fn bilinear_sample(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, ch) = (rng.random_range(1..3), rng.random_range(1..3));
    let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
    let (ho, wo) = (rng.random_range(1..5), rng.random_range(1..5));
    let img = rand_tensor(rng, vec![n, ch, h, w], 1.0);
    // Mostly inside the image, a few points past the border.
    let field = rand_tensor(rng, vec![n, ho, wo, 2], 1.1);
    run(&[img, field], |t, v| {
        let y = t.bilinear_sample(v[0], v[1])?;
        probe_loss(t, y, salt)
    })
}

fn soft_dice(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let (n, h, w) = (rng.random_range(1..3), rng.random_range(2..5), rng.random_range(2..5));
    let moved = Tensor::from_fn(vec![n, 1, h, w], |_| rng.random_range(0.0..1.0));
    let fixed = Tensor::from_fn(vec![n, 1, h, w], |_| rng.random_range(0..2) as f64);
    run(&[moved], |t, v| {
        let d = t.soft_dice(v[0], &fixed)?;
        probe_loss(t, d, salt)
    })
}

fn smoothness(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let k = rng.random_range(2..5);
    let n = rng.random_range(1..3);
    let disp = rand_tensor(rng, vec![n, 2 * k * k], 0.5);
    run(&[disp], |t, v| {
        let s = t.smoothness(v[0], k)?;
        probe_loss(t, s, salt)
    })
}

/// A small hand-made anchor set so the loss sees positives and negatives.
fn tiny_anchors(rng: &mut ChaCha8Rng, count: usize) -> AnchorSet {
    let boxes = (0..count)
        .map(|_| {
            BBox::new(
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..0.5),
                rng.random_range(0.1..0.5),
            )
        })
        .collect();
    AnchorSet {
        boxes,
        layers: vec![(1, count, 0.3)],
        input_size: 64,
    }
}

fn locnet_loss(rng: &mut ChaCha8Rng, _salt: u64) -> Result<f64> {
    let n = rng.random_range(1..3);
    let a = rng.random_range(6..14);
    let anchors = tiny_anchors(rng, a);
    let targets: Vec<_> = (0..n)
        .map(|_| {
            let g = anchors.boxes[rng.random_range(0..a)];
            match_anchors(&anchors, &BBox::new(g.cx + 0.01, g.cy - 0.01, g.w * 1.05, g.h * 0.95))
        })
        .collect();
    let pred = rand_tensor(rng, vec![n, a, 5], 0.8);
    run(&[pred], |t, v| t.locnet_loss(v[0], &targets, 3))
}

fn gather_anchors(rng: &mut ChaCha8Rng, salt: u64) -> Result<f64> {
    let n = rng.random_range(1..3);
    let heads: Vec<Tensor<f64>> = (0..rng.random_range(1..4))
        .map(|_| {
            let (fh, fw) = (rng.random_range(1..4), rng.random_range(1..4));
            rand_tensor(rng, vec![n, 15, fh, fw], 1.0)
        })
        .collect();
    run(&heads, |t, v| {
        let y = t.gather_anchors(v)?;
        probe_loss(t, y, salt)
    })
}
