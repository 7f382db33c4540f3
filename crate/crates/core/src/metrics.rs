//! Per-epoch metric rows and their CSV form.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,split,loss,dice,miou";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::param(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub dice: f64,
    pub miou: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.epoch, self.split, self.loss, self.dice, self.miou
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(Error::param(format!("metric row needs 5 fields: `{line}`")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::param(format!("bad number `{s}` in metric row")))
        };
        Ok(Self {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::param(format!("bad epoch `{}`", f[0])))?,
            split: f[1].parse()?,
            loss: num(f[2])?,
            dice: num(f[3])?,
            miou: num(f[4])?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Metrics file that grows one flushed row at a time, so an interrupted
/// run still leaves every finished epoch on disk.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn append(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::param(format!("{} lacks the metrics header", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricRow::parse).collect()
}

/// Result of a training run: every metric row plus the epoch whose
/// validation dice was best (its weights are the ones kept).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    pub best_epoch: usize,
    pub best_dice: f64,
}
