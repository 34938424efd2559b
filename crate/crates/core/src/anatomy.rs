//! Rib side and rib number assignment for fracture tracks.
//!
//! Rib masks use 8-bit labels: `0` is background, `1..=12` are left ribs
//! 1–12 and `13..=24` are right ribs 1–12.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Side;
use crate::detect::Box3d;

#[derive(Debug, Error, PartialEq)]
pub enum AnatomyError {
    #[error("rib mask shape {mask:?} does not match volume shape {volume:?}")]
    ShapeMismatch { mask: [usize; 3], volume: [usize; 3] },
    #[error("rib mask holds {actual} labels but shape {shape:?} needs {expected}")]
    MaskSize {
        shape: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("rib mask label {0} outside 0..=24")]
    BadLabel(u8),
}

/// How image columns map to patient sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Radiological convention: the left half of the image is the patient's right.
    #[default]
    ImageLeftIsPatientRight,
    ImageLeftIsPatientLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RibMethod {
    MaskOverlap,
    /// Positional fallback; lower confidence than a mask.
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibAssignment {
    pub side: Side,
    pub rib_number: u8,
    pub method: RibMethod,
}

/// Labelled rib segmentation aligned with a CT volume.
#[derive(Debug, Clone, PartialEq)]
pub struct RibMask {
    /// `[H, W, D]`, same layout as [`crate::detect::Volume`].
    pub shape: [usize; 3],
    pub labels: Vec<u8>,
}

impl RibMask {
    pub fn new(shape: [usize; 3], labels: Vec<u8>) -> Result<Self, AnatomyError> {
        let expected = shape.iter().product();
        if labels.len() != expected {
            return Err(AnatomyError::MaskSize {
                shape,
                expected,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 24) {
            return Err(AnatomyError::BadLabel(bad));
        }
        Ok(Self { shape, labels })
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        let [h, w, _] = self.shape;
        self.labels[(z * h + y) * w + x]
    }
}

pub fn encode_label(side: Side, rib: u8) -> u8 {
    match side {
        Side::Left => rib,
        Side::Right => 12 + rib,
    }
}

pub fn decode_label(label: u8) -> Option<(Side, u8)> {
    match label {
        1..=12 => Some((Side::Left, label)),
        13..=24 => Some((Side::Right, label - 12)),
        _ => None,
    }
}

/// Side from the centre's column relative to the image midline `W / 2`.
/// Columns left of the midline map to the patient's right by default; the
/// midline itself belongs to the right half of the image.
pub fn determine_side(center: [i64; 3], volume_shape: [usize; 3], orientation: Orientation) -> Side {
    let image_left = (center[0] as f64) < volume_shape[1] as f64 / 2.0;
    match (orientation, image_left) {
        (Orientation::ImageLeftIsPatientRight, true) | (Orientation::ImageLeftIsPatientLeft, false) => {
            Side::Right
        }
        _ => Side::Left,
    }
}

/// Rib number from normalized depth: slice 0 is the most cranial, rib 1, and
/// the last slice the most caudal, rib 12.
pub fn heuristic_rib_number(z: i64, depth: usize) -> u8 {
    let zn = if depth <= 1 {
        0.0
    } else {
        (z as f64 / (depth - 1) as f64).clamp(0.0, 1.0)
    };
    (1 + (zn * 12.0).floor() as u8).min(12)
}

/// Assign side and rib number to a track.
///
/// With a mask, the label with the largest voxel count inside `box3d` wins,
/// ties going to the smaller rib number and then the left side. Without a
/// mask, or when the box holds no rib voxels, the side comes from
/// [`determine_side`] and the rib from [`heuristic_rib_number`].
pub fn assign_rib(
    center: [i64; 3],
    box3d: &Box3d,
    volume_shape: [usize; 3],
    orientation: Orientation,
    mask: Option<&RibMask>,
) -> Result<RibAssignment, AnatomyError> {
    if let Some(mask) = mask {
        if mask.shape != volume_shape {
            return Err(AnatomyError::ShapeMismatch {
                mask: mask.shape,
                volume: volume_shape,
            });
        }
        let mut counts = [0u64; 25];
        let [h, w, d] = mask.shape;
        let span = |lo: f64, hi: f64, n: usize| {
            let a = lo.floor().max(0.0) as usize;
            let b = (hi.ceil() as i64).min(n as i64);
            (a, b.max(0) as usize)
        };
        let (x0, x1) = span(box3d.x_min, box3d.x_max, w);
        let (y0, y1) = span(box3d.y_min, box3d.y_max, h);
        let z0 = box3d.z_min.max(0) as usize;
        let z1 = (box3d.z_max + 1).clamp(0, d as i64) as usize;
        for z in z0..z1 {
            for y in y0..y1 {
                for x in x0..x1 {
                    counts[mask.get(x, y, z) as usize] += 1;
                }
            }
        }
        // Labels ordered by (rib number, side) for the tie rule.
        let best = (1..=12u8)
            .flat_map(|rib| [encode_label(Side::Left, rib), encode_label(Side::Right, rib)])
            .filter(|&l| counts[l as usize] > 0)
            .fold(None::<u8>, |best, l| match best {
                Some(b) if counts[b as usize] >= counts[l as usize] => Some(b),
                _ => Some(l),
            });
        if let Some((side, rib_number)) = best.and_then(decode_label) {
            return Ok(RibAssignment {
                side,
                rib_number,
                method: RibMethod::MaskOverlap,
            });
        }
    }
    Ok(RibAssignment {
        side: determine_side(center, volume_shape, orientation),
        rib_number: heuristic_rib_number(center[2], volume_shape[2]),
        method: RibMethod::Heuristic,
    })
}
