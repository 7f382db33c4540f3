//! On-disk datasets: the sample manifest, composite export/import and
//! paired mask directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::raster::{read_gray_png, read_png_luma, write_gray_png, Plane, Region};

use super::composite::Composite;

/// One manifest line: `moving,fixed,xmin,ymin,xmax,ymax[,moving_mask,fixed_mask]`
/// with the box in pixel corner coordinates of the fixed image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    pub moving_mask: Option<PathBuf>,
    pub fixed_mask: Option<PathBuf>,
    pub gt: [f64; 4],
}

impl SampleRecord {
    fn to_line(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut s = format!(
            "{},{},{},{},{},{}",
            rel(&self.moving),
            rel(&self.fixed),
            self.gt[0],
            self.gt[1],
            self.gt[2],
            self.gt[3]
        );
        if let (Some(m), Some(f)) = (&self.moving_mask, &self.fixed_mask) {
            s.push_str(&format!(",{},{}", rel(m), rel(f)));
        }
        s
    }
}

fn manifest_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        reason: reason.into(),
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 && f.len() != 8 {
            return Err(manifest_err(i + 1, format!("expected 6 or 8 fields, found {}", f.len())));
        }
        let mut gt = [0.0; 4];
        for (k, v) in gt.iter_mut().enumerate() {
            *v = f[2 + k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| manifest_err(i + 1, format!("bad box coordinate `{}`", f[2 + k])))?;
        }
        if gt[0] >= gt[2] || gt[1] >= gt[3] {
            return Err(manifest_err(i + 1, "box has no area"));
        }
        let path = |s: &str| base.join(s);
        out.push(SampleRecord {
            moving: path(f[0]),
            fixed: path(f[1]),
            moving_mask: (f.len() == 8).then(|| path(f[6])),
            fixed_mask: (f.len() == 8).then(|| path(f[7])),
            gt,
        });
    }
    Ok(out)
}

/// Reads a manifest; relative paths resolve against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line(base));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a mask PNG: 8-bit grayscale, pixels ≥ 128 become 1.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let p = read_gray_png(path)?;
    Ok(Mask::from_fn(p.h, p.w, |i, j| p.get(i, j) >= 127.5 / 255.0))
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_gray_png(path, &Plane::from_mask(&mask.binarized()))
}

/// Writes every composite as PNGs under `dir/<split>/` and a manifest
/// `dir/<split>.csv`.
pub fn write_composites(dir: &Path, split: &str, samples: &[Composite]) -> Result<Vec<SampleRecord>> {
    let sub = dir.join(split);
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let p = |kind: &str| sub.join(format!("{i:06}_{kind}.png"));
        let rec = SampleRecord {
            moving: p("moving"),
            fixed: p("fixed"),
            moving_mask: Some(p("moving_mask")),
            fixed_mask: Some(p("fixed_mask")),
            gt: [
                s.gt.xmin * s.fixed.w as f64,
                s.gt.ymin * s.fixed.h as f64,
                s.gt.xmax * s.fixed.w as f64,
                s.gt.ymax * s.fixed.h as f64,
            ],
        };
        write_gray_png(&rec.moving, &s.moving)?;
        write_gray_png(&rec.fixed, &s.fixed)?;
        write_mask_png(rec.moving_mask.as_ref().expect("set above"), &s.moving_mask)?;
        write_mask_png(rec.fixed_mask.as_ref().expect("set above"), &s.fixed_mask)?;
        records.push(rec);
    }
    write_manifest(dir.join(format!("{split}.csv")), &records)?;
    Ok(records)
}

/// Loads the images a record points at. Missing masks are derived by
/// thresholding the image at 0.5.
pub fn load_record(rec: &SampleRecord) -> Result<Composite> {
    let moving = read_png_luma(&rec.moving)?;
    let fixed = read_png_luma(&rec.fixed)?;
    let moving_mask = match &rec.moving_mask {
        Some(p) => read_mask_png(p)?,
        None => moving.to_mask(0.5),
    };
    let fixed_mask = match &rec.fixed_mask {
        Some(p) => read_mask_png(p)?,
        None => fixed.to_mask(0.5),
    };
    if moving_mask.height() != moving.h || moving_mask.width() != moving.w {
        return Err(Error::dim(format!("{}: mask size differs from image", rec.moving.display())));
    }
    if fixed_mask.height() != fixed.h || fixed_mask.width() != fixed.w {
        return Err(Error::dim(format!("{}: mask size differs from image", rec.fixed.display())));
    }
    let [x0, y0, x1, y1] = rec.gt;
    if x1 > fixed.w as f64 || y1 > fixed.h as f64 {
        return Err(Error::param(format!(
            "box {:?} exceeds {}x{} image {}",
            rec.gt,
            fixed.w,
            fixed.h,
            rec.fixed.display()
        )));
    }
    let gt = Region {
        xmin: x0 / fixed.w as f64,
        ymin: y0 / fixed.h as f64,
        xmax: x1 / fixed.w as f64,
        ymax: y1 / fixed.h as f64,
    };
    Ok(Composite {
        label: 0,
        moving,
        moving_mask,
        fixed,
        fixed_mask,
        gt,
        placed: Vec::new(),
    })
}

pub fn load_records(records: &[SampleRecord]) -> Result<Vec<Composite>> {
    records.iter().map(load_record).collect()
}

/// A moving/fixed mask pair read from a directory.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub id: String,
    pub moving: Mask,
    pub fixed: Mask,
}

/// Result of scanning a mask directory: the usable pairs (sorted by id) and
/// a note for everything skipped.
#[derive(Clone, Debug, Default)]
pub struct MaskDataset {
    pub pairs: Vec<MaskPair>,
    pub skipped: Vec<String>,
}

/// Reads `<id>_moving.png` / `<id>_fixed.png` pairs. Unpaired files,
/// non-grayscale images and size mismatches are skipped with a warning.
pub fn load_masks_dir(dir: impl AsRef<Path>) -> Result<MaskDataset> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix("_moving.png") {
            ids.entry(id.to_string()).or_default().0 = Some(path.clone());
        } else if let Some(id) = name.strip_suffix("_fixed.png") {
            ids.entry(id.to_string()).or_default().1 = Some(path.clone());
        }
    }
    let mut out = MaskDataset::default();
    for (id, pair) in ids {
        let (Some(m), Some(f)) = pair else {
            out.skipped.push(format!("{id}: unpaired"));
            continue;
        };
        match (read_mask_png(&m), read_mask_png(&f)) {
            (Ok(moving), Ok(fixed)) => {
                if moving.height() != fixed.height() || moving.width() != fixed.width() {
                    out.skipped.push(format!("{id}: moving and fixed sizes differ"));
                } else {
                    out.pairs.push(MaskPair { id, moving, fixed });
                }
            }
            (Err(e), _) | (_, Err(e)) => out.skipped.push(format!("{id}: {e}")),
        }
    }
    if out.pairs.is_empty() {
        warn!("no usable mask pairs in {}", dir.display());
    }
    for s in &out.skipped {
        warn!("skipped mask pair {s}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lines_parse_with_and_without_masks() {
        let text = "a.png,b.png,1,2,30,40\n# note\nc.png,d.png,0,0,5,5,cm.png,dm.png\n";
        let recs = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].moving, PathBuf::from("/data/a.png"));
        assert_eq!(recs[0].gt, [1.0, 2.0, 30.0, 40.0]);
        assert!(recs[0].moving_mask.is_none());
        assert_eq!(recs[1].fixed_mask, Some(PathBuf::from("/data/dm.png")));
    }

    #[test]
    fn malformed_manifest_lines_name_the_line() {
        let err = parse_manifest("a,b,1,2,3,4\na,b,1,2,x,4\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = parse_manifest("a,b,5,2,3,4\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }
}
