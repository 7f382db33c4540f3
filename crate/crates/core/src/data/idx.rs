//! IDX files (the MNIST container format): big-endian header, unsigned
//! byte payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Plane;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn ctx(path: Option<&Path>) -> String {
    path.map_or_else(|| "idx".to_string(), |p| p.display().to_string())
}

/// Parses an unsigned-byte IDX array of any rank.
pub fn parse_idx(bytes: &[u8], path: Option<&Path>) -> Result<IdxArray> {
    let fail = |offset: usize, reason: String| Error::format(ctx(path), offset, reason);
    if bytes.len() < 4 {
        return Err(fail(0, format!("file has {} bytes, header needs 4", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(fail(0, "magic must start with two zero bytes".into()));
    }
    if bytes[2] != 0x08 {
        return Err(fail(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(fail(bytes.len(), format!("truncated header: {rank} dims need {header} bytes")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| fail(4, "dimensions overflow".into()))?;
    let have = bytes.len() - header;
    if have < n {
        return Err(fail(bytes.len(), format!("truncated payload: need {n} bytes, found {have}")));
    }
    if have > n {
        return Err(fail(header + n, format!("{} trailing bytes", have - n)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn idx_bytes(arr: &IdxArray) -> Result<Vec<u8>> {
    let n: usize = arr.dims.iter().product();
    if n != arr.data.len() || arr.dims.len() > 255 {
        return Err(Error::dim(format!(
            "idx dims {:?} do not describe {} bytes",
            arr.dims,
            arr.data.len()
        )));
    }
    let mut out = vec![0, 0, 0x08, arr.dims.len() as u8];
    for &d in &arr.dims {
        let d = u32::try_from(d).map_err(|_| Error::param("idx dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    Ok(out)
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, Some(path))
}

pub fn write_idx(path: impl AsRef<Path>, arr: &IdxArray) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, idx_bytes(arr)?).map_err(|e| Error::io(path, e))
}

/// Loads a rank-3 image file as `[0, 1]` planes.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Vec<Plane>> {
    let path = path.as_ref();
    let arr = read_idx(path)?;
    if arr.dims.len() != 3 {
        return Err(Error::format(
            ctx(Some(path)),
            3,
            format!("image file must have 3 dims, found {}", arr.dims.len()),
        ));
    }
    let (h, w) = (arr.dims[1], arr.dims[2]);
    arr.data
        .chunks(h * w)
        .take(arr.dims[0])
        .map(|c| Plane::from_u8(h, w, c))
        .collect()
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let arr = read_idx(path)?;
    if arr.dims.len() != 1 {
        return Err(Error::format(
            ctx(Some(path)),
            3,
            format!("label file must have 1 dim, found {}", arr.dims.len()),
        ));
    }
    Ok(arr.data)
}
