//! On-disk formats.
//!
//! * detections: JSON lines, one [`Detection`] per line
//! * volumes and rib masks: raw little-endian voxels plus a JSON sidecar
//!   `{shape, spacing}`
//! * patches: `RFP1`, three `u32` dims (x, y, z), then `f32` voxels
//! * feature datasets: `RFD1` binary, see [`write_dataset`]
//! * checkpoints: `RFC1` binary list of named `f64` tensors
//!
//! All integers are little-endian `u32`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::RibMask;
use crate::detect::{Detection, Patch, Volume, PATCH_DIMS};
use crate::model::{FeaturePair, NamedTensor};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("{0}")]
    Invalid(String),
}

pub fn read_detections(r: impl BufRead) -> Result<Vec<Detection>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(&line).map_err(|source| FormatError::Json { line: i + 1, source })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_detections(mut w: impl Write, dets: &[Detection]) -> Result<(), FormatError> {
    for d in dets {
        serde_json::to_writer(&mut w, d).map_err(|source| FormatError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Sidecar for raw voxel files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    /// `[H, W, D]`
    pub shape: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
}

fn unit_spacing() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

pub fn parse_volume_header(json: &str) -> Result<VolumeHeader, FormatError> {
    serde_json::from_str(json).map_err(|source| FormatError::Json { line: 1, source })
}

pub fn volume_header_json(h: &VolumeHeader) -> String {
    serde_json::to_string(h).expect("header serializes")
}

pub fn read_volume(header: &VolumeHeader, raw: &[u8]) -> Result<Volume, FormatError> {
    if !raw.len().is_multiple_of(2) {
        return Err(FormatError::Invalid("volume byte length is odd".into()));
    }
    let data = raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    Volume::new(header.shape, header.spacing, data).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn volume_bytes(v: &Volume) -> Vec<u8> {
    v.data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn read_rib_mask(header: &VolumeHeader, raw: &[u8]) -> Result<RibMask, FormatError> {
    RibMask::new(header.shape, raw.to_vec()).map_err(|e| FormatError::Invalid(e.to_string()))
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FormatError::Invalid("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &'static str) -> Result<(), FormatError> {
        if self.take(4).ok() != Some(expected.as_bytes()) {
            return Err(FormatError::BadMagic { expected });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = n.checked_mul(8).ok_or_else(|| FormatError::Invalid("size overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Invalid("trailing bytes".into()));
        }
        Ok(())
    }
}

pub fn patch_bytes(p: &Patch) -> Vec<u8> {
    let mut out = b"RFP1".to_vec();
    for d in PATCH_DIMS {
        put_u32(&mut out, d);
    }
    for v in &p.voxels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Read patch voxels; returns `(dims, voxels)`.
pub fn read_patch(buf: &[u8]) -> Result<([usize; 3], Vec<f32>), FormatError> {
    let mut c = Cursor::new(buf);
    c.magic("RFP1")?;
    let dims = [c.u32()?, c.u32()?, c.u32()?];
    let n = dims.iter().product::<usize>();
    let voxels = c
        .take(n * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    c.finish()?;
    Ok((dims, voxels))
}

/// Feature dataset with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub heads: Vec<String>,
    pub pairs: Vec<FeaturePair>,
}

/// `RFD1` layout: counts `n, img_dim, txt_dim, n_heads`; head names as
/// length-prefixed UTF-8; then per pair a length-prefixed scan id, `u32`
/// serial, `n_heads` `u32` labels, image and text features as `f64`.
pub fn write_dataset(d: &Dataset) -> Result<Vec<u8>, FormatError> {
    let img_dim = d.pairs.first().map_or(0, |p| p.image.len());
    let txt_dim = d.pairs.first().map_or(0, |p| p.text.len());
    let mut out = b"RFD1".to_vec();
    for x in [d.pairs.len(), img_dim, txt_dim, d.heads.len()] {
        put_u32(&mut out, x);
    }
    for h in &d.heads {
        put_u32(&mut out, h.len());
        out.extend_from_slice(h.as_bytes());
    }
    for p in &d.pairs {
        if p.image.len() != img_dim || p.text.len() != txt_dim || p.labels.len() != d.heads.len() {
            return Err(FormatError::Invalid(format!("pair {}/{} has inconsistent sizes", p.scan_id, p.serial)));
        }
        put_u32(&mut out, p.scan_id.len());
        out.extend_from_slice(p.scan_id.as_bytes());
        put_u32(&mut out, p.serial as usize);
        for &l in &p.labels {
            put_u32(&mut out, l);
        }
        for x in p.image.iter().chain(&p.text) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_dataset(buf: &[u8]) -> Result<Dataset, FormatError> {
    let mut c = Cursor::new(buf);
    c.magic("RFD1")?;
    let (n, img_dim, txt_dim, n_heads) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let heads = (0..n_heads).map(|_| c.string()).collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let scan_id = c.string()?;
        let serial = c.u32()? as u32;
        let labels = (0..n_heads).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let image = c.f64s(img_dim)?;
        let text = c.f64s(txt_dim)?;
        pairs.push(FeaturePair { scan_id, serial, image, text, labels });
    }
    c.finish()?;
    Ok(Dataset { heads, pairs })
}

/// `RFC1` layout: tensor count, then per tensor a length-prefixed name,
/// rank, dims and `f64` data.
pub fn checkpoint_bytes(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = b"RFC1".to_vec();
    put_u32(&mut out, tensors.len());
    for t in tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(buf: &[u8]) -> Result<Vec<NamedTensor>, FormatError> {
    let mut c = Cursor::new(buf);
    c.magic("RFC1")?;
    let n = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let name = c.string()?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| FormatError::Invalid("tensor too large".into()))?;
        let data = c.f64s(len)?;
        out.push(NamedTensor { name, shape, data });
    }
    c.finish()?;
    Ok(out)
}

/// Read everything from `r`.
pub fn read_all(mut r: impl Read) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(buf)
}
