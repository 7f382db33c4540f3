//! Matching: evaluation of mask pairs and training under dice + smoothness.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ad::{adam_step, AdamConfig, AdamState, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::TpsParams;
use crate::loss::{dc_metric, iou_metric, LossBreakdown, DEFAULT_LAMBDA};
use crate::mask::Mask;
use crate::metrics::{MetricRow, Split, TrainOutcome};
use crate::tensor::{Scalar, Tensor};

use super::model::{MatcherForward, MatcherModel};

/// Everything known about one registered pair.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub params: TpsParams,
    /// Soft warped moving mask.
    pub warped: Mask,
    pub losses: LossBreakdown,
    /// Dice and IoU of the binarized warped mask against the fixed mask.
    pub dc: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for MatcherTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.99,
                lr_decay: 1e-6,
            },
            weight_decay: 1e-4,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

/// Pairs per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

/// Stacks masks into `[N, 1, S, S]`.
pub fn masks_tensor<T: Scalar>(masks: &[&Mask]) -> Result<Tensor<T>> {
    let (h, w) = masks.first().map_or((0, 0), |m| (m.height(), m.width()));
    if masks.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::dim("masks in a batch differ in size"));
    }
    let data = masks
        .iter()
        .flat_map(|m| m.data().iter().map(|&v| T::lit(v as f64)))
        .collect();
    Tensor::new(vec![masks.len(), 1, h, w], data)
}

struct BatchLoss {
    total: Var,
    dice: Var,
    smooth: Var,
}

fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &MatcherModel<T>,
    f: &MatcherForward,
    fixed: &Tensor<T>,
    lambda: f64,
) -> Result<BatchLoss> {
    let dice = tape.soft_dice(f.warped, fixed)?;
    let smooth = tape.smoothness(f.displacements, model.grid.k())?;
    let md = tape.mean(dice);
    let ms = tape.mean(smooth);
    let ms = tape.scale(ms, lambda);
    let total = tape.add(md, ms)?;
    Ok(BatchLoss { total, dice, smooth })
}

fn results_from<T: Scalar>(
    tape: &Tape<T>,
    model: &MatcherModel<T>,
    f: &MatcherForward,
    l: &BatchLoss,
    fixed: &[&Mask],
    lambda: f64,
) -> Result<Vec<MatchResult>> {
    let s = model.config.input_size;
    let plane = s * s;
    let params = tape.value(f.params);
    let width = params.shape()[1];
    let warped = tape.value(f.warped).data();
    let (dice, smooth) = (tape.value(l.dice).data(), tape.value(l.smooth).data());
    fixed
        .iter()
        .enumerate()
        .map(|(i, fm)| {
            let row: Vec<f64> = params.data()[i * width..(i + 1) * width].iter().map(|v| v.as_f64()).collect();
            let warped = Mask::from_plane(s, s, &warped[i * plane..(i + 1) * plane])?;
            let hard = warped.binarized();
            Ok(MatchResult {
                params: TpsParams::from_slice(&row, &model.grid)?,
                losses: LossBreakdown::new(dice[i].as_f64(), smooth[i].as_f64(), lambda),
                dc: dc_metric(fm, &hard)?,
                miou: iou_metric(fm, &hard)?,
                warped,
            })
        })
        .collect()
}

/// Registers each `(moving, fixed)` pair with the model.
pub fn match_pairs<T: Scalar>(model: &MatcherModel<T>, pairs: &[(Mask, Mask)], lambda: f64) -> Result<Vec<MatchResult>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let mv: Vec<&Mask> = chunk.iter().map(|p| &p.0).collect();
        let fx: Vec<&Mask> = chunk.iter().map(|p| &p.1).collect();
        let fixed = masks_tensor(&fx)?;
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &masks_tensor(&mv)?, &fixed)?;
        let l = batch_loss(&mut tape, model, &f, &fixed, lambda)?;
        out.extend(results_from(&tape, model, &f, &l, &fx, lambda)?);
    }
    Ok(out)
}

/// Registers one pair.
pub fn forward<T: Scalar>(model: &MatcherModel<T>, moving: &Mask, fixed: &Mask, lambda: f64) -> Result<MatchResult> {
    let s = model.config.input_size;
    for m in [moving, fixed] {
        if m.height() != s || m.width() != s {
            return Err(Error::param(format!(
                "matcher expects {s}x{s} masks, got {}x{}",
                m.height(),
                m.width()
            )));
        }
    }
    Ok(match_pairs(model, &[(moving.clone(), fixed.clone())], lambda)?.remove(0))
}

/// Mean loss, dice and IoU over a set of results.
pub fn summarize(results: &[MatchResult]) -> (f64, f64, f64) {
    let n = results.len().max(1) as f64;
    let sum = |f: fn(&MatchResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    (sum(|r| r.losses.total), sum(|r| r.dc), sum(|r| r.miou))
}

/// Trains with Adam on shuffled mini-batches. Each epoch yields a `train`
/// row (averaged over the epoch's batches) and, when `val` is non-empty, a
/// `val` row; the weights of the best validation-dice epoch are kept.
pub fn train_matcher(
    model: &mut MatcherModel<f32>,
    train: &[(Mask, Mask)],
    val: &[(Mask, Mask)],
    cfg: &MatcherTrainConfig,
    mut on_epoch: impl FnMut(&MetricRow) -> Result<()>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::param("matcher training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::param("batch size and epoch count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(cfg.adam, &model.params())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, MatcherModel<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut dc_sum, mut iou_sum) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mv: Vec<&Mask> = idx.iter().map(|&i| &train[i].0).collect();
            let fx: Vec<&Mask> = idx.iter().map(|&i| &train[i].1).collect();
            let fixed = masks_tensor(&fx)?;
            let mut tape = Tape::<f32>::new();
            let f = model.forward(&mut tape, &masks_tensor(&mv)?, &fixed)?;
            let l = batch_loss(&mut tape, model, &f, &fixed, cfg.lambda)?;
            let lv = tape.value(l.total).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let res = results_from(&tape, model, &f, &l, &fx, cfg.lambda)?;
            loss_sum += lv * idx.len() as f64;
            dc_sum += res.iter().map(|r| r.dc).sum::<f64>();
            iou_sum += res.iter().map(|r| r.miou).sum::<f64>();
            let grads = tape.backward(l.total)?;
            let g: Vec<Vec<f32>> = f
                .binding
                .vars()
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.get_or_zeros(v, p.value.len()))
                .collect();
            adam_step(&mut model.params_mut(), &g, &mut state, cfg.weight_decay)?;
        }
        let n = train.len() as f64;
        let row = MetricRow {
            epoch,
            split: Split::Train,
            loss: loss_sum / n,
            dice: dc_sum / n,
            miou: iou_sum / n,
        };
        on_epoch(&row)?;
        rows.push(row);
        if !val.is_empty() {
            let (loss, dice, miou) = summarize(&match_pairs(model, val, cfg.lambda)?);
            info!("matcher epoch {epoch}: val dice {dice:.4} miou {miou:.4}");
            let row = MetricRow {
                epoch,
                split: Split::Val,
                loss,
                dice,
                miou,
            };
            on_epoch(&row)?;
            rows.push(row);
            if best.as_ref().is_none_or(|b| dice > b.1) {
                best = Some((epoch, dice, model.clone()));
            }
        }
    }
    let (best_epoch, best_dice) = match best {
        Some((e, d, m)) => {
            *model = m;
            (e, d)
        }
        None => (cfg.epochs, f64::NAN),
    };
    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_dice,
    })
}
