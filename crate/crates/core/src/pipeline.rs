//! Experiment orchestration: data generation, both trainings, evaluation
//! and single-pair registration.
//!
//! Every stage reads its inputs from, and writes its outputs to, the
//! experiment's output directory, so stages can run one at a time or all
//! in sequence with the same result.

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{
    crop_mask, crop_mask_to_object, gen_composites, generate_digits, load_idx, load_idx_labels,
    load_records, read_manifest, resize_mask, write_composites, Composite, Digit, DIGIT_SIZE,
};
use crate::error::{Error, Result};
use crate::locnet::{detect_batch, evaluate_locnet, iou, train_locnet, BBox, LocNetModel, LocSample, PairInput};
use crate::loss::{dc_metric, iou_metric};
use crate::mask::Mask;
use crate::matcher::{match_pairs, train_matcher, MatchResult, MatcherModel};
use crate::metrics::{MetricsLog, Split, TrainOutcome};
use crate::par;
use crate::raster::{paste_region, write_overlay_png, Plane, Region};

pub const STAGE_GEN_DATA: &str = "gen-data";
pub const STAGE_TRAIN_LOCNET: &str = "train-locnet";
pub const STAGE_TRAIN_MATCHER: &str = "train-matcher";
pub const STAGE_EVAL: &str = "eval";

/// Threshold that turns a fixed image into its segmentation.
pub const SEGMENT_THRESHOLD: f32 = 0.5;

/// Share of the digit pool reserved for the train and validation splits;
/// the test split gets the rest.
const POOL_TRAIN: f64 = 0.8;
const POOL_VAL: f64 = 0.1;

/// File locations inside an experiment directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("{split}.csv"))
    }

    pub fn locnet_ckpt(&self) -> PathBuf {
        self.root.join("locnet.ckpt")
    }

    pub fn locnet_metrics(&self) -> PathBuf {
        self.root.join("locnet_metrics.csv")
    }

    pub fn matcher_ckpt(&self) -> PathBuf {
        self.root.join("matcher.ckpt")
    }

    pub fn matcher_metrics(&self) -> PathBuf {
        self.root.join("matcher_metrics.csv")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn gallery_dir(&self) -> PathBuf {
        self.root.join("gallery")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn in_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {stage}");
    f().map_err(|e| e.in_stage(stage))
}

/// Switches to single-threaded execution when the config asks for it.
fn apply_runtime(cfg: &ExperimentConfig) {
    if cfg.deterministic {
        par::set_sequential(true);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The digit pool: IDX files when configured, procedural digits otherwise.
pub fn load_digits(cfg: &ExperimentConfig) -> Result<Vec<Digit>> {
    let (Some(images), Some(labels)) = (&cfg.mnist_images, &cfg.mnist_labels) else {
        return Ok(generate_digits(cfg.digits, &mut rng(cfg.stage_seed(0))));
    };
    let planes = load_idx(images)?;
    let labels = load_idx_labels(labels)?;
    if planes.len() != labels.len() {
        return Err(Error::param(format!(
            "{} images but {} labels",
            planes.len(),
            labels.len()
        )));
    }
    if let Some(p) = planes.iter().find(|p| p.h != DIGIT_SIZE || p.w != DIGIT_SIZE) {
        return Err(Error::param(format!(
            "digit images must be {DIGIT_SIZE}x{DIGIT_SIZE}, found {}x{}",
            p.h, p.w
        )));
    }
    Ok(planes
        .into_iter()
        .zip(labels)
        .take(cfg.digits)
        .map(|(image, label)| Digit { label, image })
        .collect())
}

/// Splits the digit pool into disjoint train, validation and test pools.
pub fn partition_digits(digits: &[Digit]) -> [&[Digit]; 3] {
    let n = digits.len();
    let a = (n as f64 * POOL_TRAIN).round() as usize;
    let b = (a + (n as f64 * POOL_VAL).round() as usize).min(n);
    [&digits[..a], &digits[a..b], &digits[b..]]
}

pub fn split_size(cfg: &ExperimentConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.train,
        Split::Val => cfg.val,
        Split::Test => cfg.test,
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Generates the composite splits and writes them as PNGs plus manifests.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    apply_runtime(cfg);
    in_stage(STAGE_GEN_DATA, || {
        let layout = Layout::new(&cfg.out);
        create_dir(&layout.data_dir())?;
        let digits = load_digits(cfg)?;
        let pools = partition_digits(&digits);
        for (i, (split, pool)) in SPLITS.iter().zip(pools).enumerate() {
            let samples = gen_composites(
                pool,
                split_size(cfg, *split),
                cfg.canvas,
                cfg.distractors_min..=cfg.distractors_max,
                cfg.stage_seed(1 + i as u64),
            )?;
            write_composites(&layout.data_dir(), &split.to_string(), &samples)?;
            info!("{split}: {} pairs", samples.len());
        }
        Ok(())
    })
}

/// Reads one split written by [`gen_data`].
pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Composite>> {
    load_records(&read_manifest(Layout::new(&cfg.out).manifest(split))?)
}

pub fn loc_samples(samples: &[Composite]) -> Result<Vec<LocSample>> {
    samples
        .iter()
        .map(|c| {
            Ok(LocSample {
                input: PairInput::new(&c.moving, &c.moving_mask, &c.fixed)?,
                gt: c.gt_box(),
            })
        })
        .collect()
}

/// Segmentation of a fixed image: every object, not just the target.
pub fn segment(fixed: &Plane) -> Mask {
    fixed.to_mask(SEGMENT_THRESHOLD)
}

/// Training pair for the matcher: the moving object cropped by its own box
/// and the fixed segmentation cropped by the ground-truth box.
pub fn matcher_pair(c: &Composite, size: usize) -> Result<(Mask, Mask)> {
    let (m, _) = crop_mask_to_object(&c.moving_mask, size)?;
    let (f, _) = crop_mask(&segment(&c.fixed), &c.gt, size)?;
    Ok((m, f))
}

pub fn matcher_pairs(samples: &[Composite], size: usize) -> Result<Vec<(Mask, Mask)>> {
    samples.iter().map(|c| matcher_pair(c, size)).collect()
}

pub fn train_locnet_stage(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    apply_runtime(cfg);
    in_stage(STAGE_TRAIN_LOCNET, || {
        let layout = Layout::new(&cfg.out);
        let train = loc_samples(&load_split(cfg, Split::Train)?)?;
        let val = loc_samples(&load_split(cfg, Split::Val)?)?;
        let mut model = LocNetModel::<f32>::new(cfg.canvas, &mut rng(cfg.stage_seed(4)))?;
        let mut tc = cfg.locnet.clone();
        tc.seed = cfg.stage_seed(5);
        let mut log = MetricsLog::create(layout.locnet_metrics())?;
        let out = train_locnet(&mut model, &train, &val, &tc, |r| log.append(r))?;
        model.to_checkpoint().save(layout.locnet_ckpt())?;
        Ok(out)
    })
}

pub fn train_matcher_stage(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    apply_runtime(cfg);
    in_stage(STAGE_TRAIN_MATCHER, || {
        let layout = Layout::new(&cfg.out);
        let size = cfg.matcher_model.input_size;
        let train = matcher_pairs(&load_split(cfg, Split::Train)?, size)?;
        let val = matcher_pairs(&load_split(cfg, Split::Val)?, size)?;
        let mut model = MatcherModel::<f32>::new(cfg.matcher_model, &mut rng(cfg.stage_seed(6)))?;
        let mut tc = cfg.matcher.clone();
        tc.seed = cfg.stage_seed(7);
        let mut log = MetricsLog::create(layout.matcher_metrics())?;
        let out = train_matcher(&mut model, &train, &val, &tc, |r| log.append(r))?;
        model.to_checkpoint().save(layout.matcher_ckpt())?;
        Ok(out)
    })
}

/// Outcome of registering one pair end to end.
#[derive(Clone, Debug)]
pub struct PairEval {
    /// The localizer's box, `None` when it found nothing or was skipped.
    pub detection: Option<BBox>,
    /// The localizer ran but found nothing; the whole fixed image was used.
    pub fallback: bool,
    /// Region of the fixed image that was handed to the matcher.
    pub region: Region,
    /// IoU of the detection with the ground-truth box (0 when missing).
    pub box_iou: f64,
    /// Matcher output at crop resolution.
    pub result: MatchResult,
    /// Warped moving mask pasted back into the fixed frame, binarized.
    pub warped: Mask,
    /// Dice and IoU of `warped` against the fixed target mask.
    pub dc: f64,
    pub miou: f64,
}

pub const PAIR_HEADER: &str = "detected,fallback,xmin,ymin,xmax,ymax,box_iou,dc,miou,loss";

impl PairEval {
    /// One CSV record in [`PAIR_HEADER`] order.
    pub fn record(&self) -> String {
        let r = &self.region;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.detection.is_some() as u8,
            self.fallback as u8,
            r.xmin,
            r.ymin,
            r.xmax,
            r.ymax,
            self.box_iou,
            self.dc,
            self.miou,
            self.result.losses.total
        )
    }
}

struct Prepared {
    moving: Mask,
    fixed: Mask,
    region: Region,
    fallback: bool,
}

/// Builds the matcher inputs for one pair. `detection` is `None` when
/// localization is skipped altogether: both full frames are resized.
fn prepare(c: &Composite, detection: Option<Option<&BBox>>, size: usize) -> Result<Prepared> {
    let seg = segment(&c.fixed);
    let Some(det) = detection else {
        return Ok(Prepared {
            moving: resize_mask(&c.moving_mask, size),
            fixed: resize_mask(&seg, size),
            region: Region::full(),
            fallback: false,
        });
    };
    let (moving, _) = crop_mask_to_object(&c.moving_mask, size)?;
    let cropped = det
        .and_then(BBox::clipped)
        .and_then(|b| crop_mask(&seg, &b.corners(), size).ok());
    Ok(match cropped {
        Some((fixed, region)) => Prepared {
            moving,
            fixed,
            region,
            fallback: false,
        },
        None => Prepared {
            moving,
            fixed: resize_mask(&seg, size),
            region: Region::full(),
            fallback: true,
        },
    })
}

/// Runs localize, crop and match on each composite and scores the result in
/// the fixed frame against the target mask. With `locnet = None` the matcher
/// sees the full frames instead.
pub fn evaluate_pipeline(
    locnet: Option<&LocNetModel<f32>>,
    matcher: &MatcherModel<f32>,
    samples: &[Composite],
    lambda: f64,
) -> Result<Vec<PairEval>> {
    let detections: Vec<Option<Option<BBox>>> = match locnet {
        Some(model) => {
            let inputs = loc_samples(samples)?;
            let refs: Vec<&PairInput> = inputs.iter().map(|s| &s.input).collect();
            detect_batch(model, &refs)?.into_iter().map(Some).collect()
        }
        None => vec![None; samples.len()],
    };
    let size = matcher.config.input_size;
    let prepared = samples
        .iter()
        .zip(&detections)
        .map(|(c, d)| prepare(c, d.as_ref().map(Option::as_ref), size))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Mask, Mask)> = prepared.iter().map(|p| (p.moving.clone(), p.fixed.clone())).collect();
    let results = match_pairs(matcher, &pairs, lambda)?;
    samples
        .iter()
        .zip(detections)
        .zip(prepared)
        .zip(results)
        .map(|(((c, det), p), result)| {
            let (h, w) = (c.fixed.h, c.fixed.w);
            let detection = det.flatten();
            let warped = paste_region(&Plane::from_mask(&result.warped), &p.region, h, w).to_mask(0.5);
            Ok(PairEval {
                box_iou: detection.as_ref().map_or(0.0, |d| iou(d, &c.gt_box())),
                detection,
                fallback: p.fallback,
                region: p.region,
                dc: dc_metric(&c.fixed_mask, &warped)?,
                miou: iou_metric(&c.fixed_mask, &warped)?,
                warped,
                result,
            })
        })
        .collect()
}

/// Registers one moving image and mask against a fixed image. The fixed
/// input to the matcher is the thresholded fixed image; `target`, when
/// given, is the mask the result is scored against (and whose bounding box
/// scores the detection). Without a target the segmentation is used.
#[allow(clippy::too_many_arguments)]
pub fn register_pair(
    locnet: Option<&LocNetModel<f32>>,
    matcher: &MatcherModel<f32>,
    moving: &Plane,
    moving_mask: &Mask,
    fixed: &Plane,
    target: Option<&Mask>,
    lambda: f64,
) -> Result<PairEval> {
    if moving_mask.height() != moving.h || moving_mask.width() != moving.w {
        return Err(Error::dim("moving mask and moving image differ in size"));
    }
    let fixed_mask = target.cloned().unwrap_or_else(|| segment(fixed));
    if fixed_mask.height() != fixed.h || fixed_mask.width() != fixed.w {
        return Err(Error::dim("target mask and fixed image differ in size"));
    }
    let gt = fixed_mask
        .bbox()
        .map_or_else(Region::full, |b| Region::from_pixels(b, fixed.h, fixed.w));
    let c = Composite {
        label: 0,
        moving: moving.clone(),
        moving_mask: moving_mask.clone(),
        fixed: fixed.clone(),
        fixed_mask,
        gt,
        placed: Vec::new(),
    };
    Ok(evaluate_pipeline(locnet, matcher, std::slice::from_ref(&c), lambda)?.remove(0))
}

/// Test-set summary in the usual accuracy-table layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub detection_dc: f64,
    pub detection_miou: f64,
    pub matching_dc: f64,
    pub matching_miou: f64,
    pub pairs: usize,
    pub missed: usize,
}

impl Report {
    pub fn from_evals(evals: &[PairEval]) -> Self {
        let n = evals.len().max(1) as f64;
        let mean = |f: &dyn Fn(&PairEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
        Self {
            detection_dc: mean(&|e| 2.0 * e.box_iou / (1.0 + e.box_iou)),
            detection_miou: mean(&|e| e.box_iou),
            matching_dc: mean(&|e| e.dc),
            matching_miou: mean(&|e| e.miou),
            pairs: evals.len(),
            missed: evals.iter().filter(|e| e.fallback).count(),
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} | {:<6} | {:<6}", "Model/Algorithm", "DC", "mIoU")?;
        writeln!(f, "{:-<20}-+-{:-<6}-+-{:-<6}", "", "", "")?;
        writeln!(
            f,
            "{:<20} | {:.4} | {:.4}",
            "Detection Accuracy", self.detection_dc, self.detection_miou
        )?;
        writeln!(
            f,
            "{:<20} | {:.4} | {:.4}",
            "Matching Accuracy", self.matching_dc, self.matching_miou
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{} test pairs, {} without a detection (whole image used)",
            self.pairs, self.missed
        )?;
        writeln!(
            f,
            "reference at full training scale: detection 0.87/0.78, matching 0.79/0.66"
        )
    }
}

pub const EVAL_HEADER: &str = "index,detected,fallback,xmin,ymin,xmax,ymax,box_iou,dc,miou,loss";

pub fn eval_stage(cfg: &ExperimentConfig) -> Result<Report> {
    apply_runtime(cfg);
    in_stage(STAGE_EVAL, || {
        let layout = Layout::new(&cfg.out);
        let test = load_split(cfg, Split::Test)?;
        let locnet = LocNetModel::<f32>::from_checkpoint(&Checkpoint::load(layout.locnet_ckpt())?)?;
        let matcher = MatcherModel::<f32>::from_checkpoint(&Checkpoint::load(layout.matcher_ckpt())?)?;
        let evals = evaluate_pipeline(Some(&locnet), &matcher, &test, cfg.matcher.lambda)?;

        let mut csv = format!("{EVAL_HEADER}\n");
        for (i, e) in evals.iter().enumerate() {
            csv.push_str(&format!("{i},{}\n", e.record()));
        }
        write_text(&layout.eval_csv(), &csv)?;

        let gallery = layout.gallery_dir();
        create_dir(&gallery)?;
        for (i, (e, c)) in evals.iter().zip(&test).take(cfg.gallery).enumerate() {
            write_overlay_png(gallery.join(format!("{i:04}.png")), &c.fixed_mask, &e.warped)?;
        }

        // Box scores straight from the localizer, for the log.
        let loc_eval = evaluate_locnet(&locnet, &loc_samples(&test)?)?;
        info!("localizer test loss {:.4}", loc_eval.loss);

        let report = Report::from_evals(&evals);
        write_text(&layout.report(), &report.to_string())?;
        Ok(report)
    })
}

/// All four stages in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    gen_data(cfg)?;
    train_locnet_stage(cfg)?;
    train_matcher_stage(cfg)?;
    eval_stage(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_disjoint_and_complete() {
        let digits = generate_digits(50, &mut rng(3));
        let [a, b, c] = partition_digits(&digits);
        assert_eq!((a.len(), b.len(), c.len()), (40, 5, 5));
    }

    #[test]
    fn report_table_layout() {
        let r = Report {
            detection_dc: 0.5,
            detection_miou: 0.25,
            matching_dc: 0.75,
            matching_miou: 0.6,
            pairs: 4,
            missed: 1,
        };
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Model/Algorithm      | DC     | mIoU  ");
        assert_eq!(lines[2], "Detection Accuracy   | 0.5000 | 0.2500");
        assert_eq!(lines[3], "Matching Accuracy    | 0.7500 | 0.6000");
        assert!(text.contains("0.87/0.78"));
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = ExperimentConfig {
            out: PathBuf::from("/nonexistent/warpreg-test"),
            ..ExperimentConfig::default()
        };
        let e = train_locnet_stage(&cfg).unwrap_err();
        assert!(matches!(e, Error::Stage { stage: STAGE_TRAIN_LOCNET, .. }));
        assert!(e.to_string().contains("train-locnet"));
    }
}
