//! Experiment configuration: `key = value` lines, `#` comments.
//!
//! Every key is optional and falls back to the desk-scale default. Unknown
//! keys, malformed values and out-of-range values are rejected with the
//! offending line number.

use std::path::{Path, PathBuf};

use crate::ad::AdamConfig;
use crate::error::{Error, Result};
use crate::locnet::LocTrainConfig;
use crate::matcher::{MatcherConfig, MatcherTrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub deterministic: bool,
    /// Use these IDX files instead of procedural digits.
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    /// Size of the procedural digit pool.
    pub digits: usize,
    pub canvas: usize,
    pub distractors_min: usize,
    pub distractors_max: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Overlay images written by the evaluation stage.
    pub gallery: usize,
    pub locnet: LocTrainConfig,
    pub matcher: MatcherTrainConfig,
    pub matcher_model: MatcherConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            deterministic: false,
            mnist_images: None,
            mnist_labels: None,
            digits: 4000,
            canvas: 112,
            distractors_min: 0,
            distractors_max: 3,
            train: 5000,
            val: 500,
            test: 500,
            gallery: 8,
            locnet: LocTrainConfig::default(),
            matcher: MatcherTrainConfig::default(),
            matcher_model: MatcherConfig::default(),
        }
    }
}

fn cfg_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        reason: reason.into(),
    }
}

fn positive_int(line: usize, key: &str, v: &str) -> Result<usize> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(cfg_err(line, format!("`{key}` must be a positive integer, got `{v}`"))),
    }
}

fn count(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| cfg_err(line, format!("`{key}` must be a non-negative integer, got `{v}`")))
}

fn float(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| cfg_err(line, format!("`{key}` must be a finite number, got `{v}`")))
}

fn positive(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = float(line, key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(cfg_err(line, format!("`{key}` must be positive, got `{v}`")))
    }
}

fn non_negative(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = float(line, key, v)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(cfg_err(line, format!("`{key}` must not be negative, got `{v}`")))
    }
}

fn beta(line: usize, key: &str, v: &str) -> Result<f64> {
    let x = float(line, key, v)?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err(cfg_err(line, format!("`{key}` must lie in [0, 1), got `{v}`")))
    }
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(line, format!("`{key}` must be true or false, got `{v}`"))),
    }
}

fn set_adam(adam: &mut AdamConfig, field: &str, line: usize, key: &str, v: &str) -> Result<bool> {
    match field {
        "lr" => adam.lr = positive(line, key, v)?,
        "beta1" => adam.beta1 = beta(line, key, v)?,
        "beta2" => adam.beta2 = beta(line, key, v)?,
        "decay" => adam.lr_decay = non_negative(line, key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, v) = body
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| cfg_err(line, format!("expected `key = value`, got `{body}`")))?;
            if v.is_empty() {
                return Err(cfg_err(line, format!("`{key}` has no value")));
            }
            c.set(line, key, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = v.parse().map_err(|_| cfg_err(line, format!("bad seed `{v}`")))?,
            "out" => self.out = PathBuf::from(v),
            "deterministic" => self.deterministic = boolean(line, key, v)?,
            "mnist.images" => self.mnist_images = Some(PathBuf::from(v)),
            "mnist.labels" => self.mnist_labels = Some(PathBuf::from(v)),
            "digits" => self.digits = positive_int(line, key, v)?,
            "canvas" => self.canvas = positive_int(line, key, v)?,
            "distractors.min" => self.distractors_min = count(line, key, v)?,
            "distractors.max" => self.distractors_max = count(line, key, v)?,
            "split.train" => self.train = positive_int(line, key, v)?,
            "split.val" => self.val = positive_int(line, key, v)?,
            "split.test" => self.test = positive_int(line, key, v)?,
            "gallery" => self.gallery = count(line, key, v)?,
            _ => {
                if let Some(field) = key.strip_prefix("locnet.") {
                    if self.set_locnet(line, key, field, v)? {
                        return Ok(());
                    }
                } else if let Some(field) = key.strip_prefix("matcher.") {
                    if self.set_matcher(line, key, field, v)? {
                        return Ok(());
                    }
                }
                return Err(cfg_err(line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    fn set_locnet(&mut self, line: usize, key: &str, field: &str, v: &str) -> Result<bool> {
        let l = &mut self.locnet;
        match field {
            "epochs" => l.epochs = positive_int(line, key, v)?,
            "batch" => l.batch_size = positive_int(line, key, v)?,
            "l2" => l.weight_decay = non_negative(line, key, v)?,
            _ => return set_adam(&mut l.adam, field, line, key, v),
        }
        Ok(true)
    }

    fn set_matcher(&mut self, line: usize, key: &str, field: &str, v: &str) -> Result<bool> {
        let (m, model) = (&mut self.matcher, &mut self.matcher_model);
        match field {
            "epochs" => m.epochs = positive_int(line, key, v)?,
            "batch" => m.batch_size = positive_int(line, key, v)?,
            "l2" => m.weight_decay = non_negative(line, key, v)?,
            "lambda" => m.lambda = non_negative(line, key, v)?,
            "input" => model.input_size = positive_int(line, key, v)?,
            "fc1" => model.fc1 = positive_int(line, key, v)?,
            "fc2" => model.fc2 = positive_int(line, key, v)?,
            "control_points" => {
                let k = positive_int(line, key, v)?;
                let side = (k as f64).sqrt().round() as usize;
                if side * side != k || side < 2 {
                    return Err(cfg_err(line, format!("`{key}` must be a square ≥ 4, got {k}")));
                }
                model.k = side;
            }
            _ => return set_adam(&mut m.adam, field, line, key, v),
        }
        Ok(true)
    }

    fn validate(&self) -> Result<()> {
        if self.distractors_min > self.distractors_max || self.distractors_max > 9 {
            return Err(cfg_err(
                0,
                format!(
                    "distractor range {}..={} must be ordered and at most 9",
                    self.distractors_min, self.distractors_max
                ),
            ));
        }
        if self.mnist_images.is_some() != self.mnist_labels.is_some() {
            return Err(cfg_err(0, "`mnist.images` and `mnist.labels` must be given together"));
        }
        if self.canvas < crate::data::DIGIT_SIZE {
            return Err(cfg_err(0, format!("canvas {} is smaller than a digit", self.canvas)));
        }
        Ok(())
    }

    /// Seed for one named stage, derived from the experiment seed.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_override_defaults() {
        let c = ExperimentConfig::parse(
            "# smoke\nseed = 3\nsplit.train = 100 # inline\nmatcher.control_points = 16\nlocnet.lr = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train, 100);
        assert_eq!(c.matcher_model.k, 4);
        assert_eq!(c.locnet.adam.lr, 0.01);
        assert_eq!(c.matcher.batch_size, 128);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }));
        let e = ExperimentConfig::parse("matcher.lr = -1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = ExperimentConfig::parse("locnet.beta2 = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = ExperimentConfig::parse("split.val = 0\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = ExperimentConfig::parse("matcher.control_points = 10\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
    }
}
