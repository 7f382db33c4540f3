//! Localizer training and evaluation.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ad::{adam_step, AdamConfig, AdamState, Tape};
use crate::error::{Error, Result};
use crate::metrics::{MetricRow, Split, TrainOutcome};
use crate::nn::Param;

use super::boxes::{iou, BBox};
use super::detect::{best_detection, INFERENCE_BATCH};
use super::input::{batch_tensor, PairInput};
use super::loss::{locnet_loss, ANCHOR_OUTPUTS, NEG_POS_RATIO};
use super::matching::{match_anchors, AnchorTargets};
use super::model::LocNetModel;

#[derive(Clone, Debug, PartialEq)]
pub struct LocTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LocTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig {
                lr: 2e-3,
                beta1: 0.9,
                beta2: 0.99,
                lr_decay: 1e-5,
            },
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocSample {
    pub input: PairInput,
    pub gt: BBox,
}

#[derive(Clone, Debug)]
pub struct LocEval {
    pub loss: f64,
    /// Mean box dice, `2·IoU / (1 + IoU)` per pair.
    pub dice: f64,
    pub miou: f64,
    pub detections: Vec<Option<BBox>>,
}

/// IoU of a detection against ground truth; a missed detection scores 0.
pub fn detection_iou(det: Option<&BBox>, gt: &BBox) -> f64 {
    det.map_or(0.0, |d| iou(d, gt))
}

fn box_dice(iou: f64) -> f64 {
    2.0 * iou / (1.0 + iou)
}

/// Scores `[B·A·5]` predictions against their samples: summed box IoU and
/// box dice, plus the detections themselves.
fn score_batch(
    model: &LocNetModel<f32>,
    pred: &[f32],
    samples: &[&LocSample],
) -> (f64, f64, Vec<Option<BBox>>) {
    let per = model.anchors.len() * ANCHOR_OUTPUTS;
    let (mut si, mut sd, mut dets) = (0.0, 0.0, Vec::new());
    for (row, s) in pred.chunks_exact(per).zip(samples) {
        let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let det = best_detection(&row, &model.anchors);
        let i = detection_iou(det.as_ref(), &s.gt);
        si += i;
        sd += box_dice(i);
        dets.push(det);
    }
    (si, sd, dets)
}

pub fn evaluate_locnet(model: &LocNetModel<f32>, samples: &[LocSample]) -> Result<LocEval> {
    let (mut loss, mut si, mut sd, mut dets) = (0.0, 0.0, 0.0, Vec::new());
    for chunk in samples.chunks(INFERENCE_BATCH) {
        let refs: Vec<&LocSample> = chunk.iter().collect();
        let inputs: Vec<&PairInput> = chunk.iter().map(|s| &s.input).collect();
        let pred = model.predict(batch_tensor(&inputs)?)?;
        let targets: Vec<AnchorTargets> =
            chunk.iter().map(|s| match_anchors(&model.anchors, &s.gt)).collect();
        let p64: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
        loss += locnet_loss(&p64, &targets, NEG_POS_RATIO)? * chunk.len() as f64;
        let (i, d, mut det) = score_batch(model, pred.data(), &refs);
        si += i;
        sd += d;
        dets.append(&mut det);
    }
    let n = samples.len().max(1) as f64;
    Ok(LocEval {
        loss: loss / n,
        dice: sd / n,
        miou: si / n,
        detections: dets,
    })
}

fn snapshot(model: &LocNetModel<f32>) -> LocNetModel<f32> {
    model.clone()
}

/// Trains with Adam on shuffled mini-batches. After every epoch a `train`
/// row (running averages over the epoch, in training mode) and a `val` row
/// are passed to `on_epoch`. The weights of the best validation-dice epoch
/// are restored at the end.
pub fn train_locnet(
    model: &mut LocNetModel<f32>,
    train: &[LocSample],
    val: &[LocSample],
    cfg: &LocTrainConfig,
    mut on_epoch: impl FnMut(&MetricRow) -> Result<()>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::param("localizer training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::param("batch size and epoch count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = {
        let params: Vec<&Param<f32>> = model.params();
        AdamState::new(cfg.adam, &params)?
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, LocNetModel<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut si, mut sd) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LocSample> = idx.iter().map(|&i| &train[i]).collect();
            let inputs: Vec<&PairInput> = batch.iter().map(|s| &s.input).collect();
            let targets: Vec<AnchorTargets> =
                batch.iter().map(|s| match_anchors(&model.anchors, &s.gt)).collect();
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(batch_tensor(&inputs)?);
            let (pred, binding) = model.forward_train(&mut tape, x)?;
            let loss = tape.locnet_loss(pred, &targets, NEG_POS_RATIO)?;
            let lv = tape.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let (i, d, _) = score_batch(model, tape.value(pred).data(), &batch);
            loss_sum += lv * batch.len() as f64;
            si += i;
            sd += d;
            let grads = tape.backward(loss)?;
            let g: Vec<Vec<f32>> = binding
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
            dice: sd / n,
            miou: si / n,
        };
        on_epoch(&row)?;
        rows.push(row);
        if !val.is_empty() {
            let ev = evaluate_locnet(model, val)?;
            let row = MetricRow {
                epoch,
                split: Split::Val,
                loss: ev.loss,
                dice: ev.dice,
                miou: ev.miou,
            };
            info!("localizer epoch {epoch}: val dice {:.4} miou {:.4}", ev.dice, ev.miou);
            on_epoch(&row)?;
            rows.push(row);
            if best.as_ref().is_none_or(|b| ev.dice > b.1) {
                best = Some((epoch, ev.dice, snapshot(model)));
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
