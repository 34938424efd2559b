//! Per-slice detections to 3D fracture tracks and fixed-size CT patches.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONF_MIN: f64 = 0.5;
pub const DEFAULT_MAX_BOX: f64 = 80.0;
pub const DEFAULT_IOU_MIN: f64 = 0.001;
pub const DEFAULT_CENTER_MAX_MM: f64 = 5.0;
pub const MIN_TRACK_LEN: usize = 4;

pub const HU_MIN: f64 = -200.0;
pub const HU_MAX: f64 = 1000.0;

/// Patch extent in voxels, `[x, y, z]`.
pub const PATCH_DIMS: [usize; 3] = [64, 64, 32];
pub const PATCH_LEN: usize = PATCH_DIMS[0] * PATCH_DIMS[1] * PATCH_DIMS[2];

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("degenerate box ({0}, {1}, {2}, {3})")]
    InvalidBox(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("volume shape {0:?} has a zero dimension")]
    EmptyVolume([usize; 3]),
    #[error("volume holds {actual} voxels but shape {shape:?} needs {expected}")]
    VolumeSize {
        shape: [usize; 3],
        expected: usize,
        actual: usize,
    },
}

/// One 2D box on one axial slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scan_id: String,
    pub slice_index: u32,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn new(
        scan_id: impl Into<String>,
        slice_index: u32,
        bbox: [f64; 4],
        confidence: f64,
    ) -> Result<Self, DetectError> {
        let d = Self {
            scan_id: scan_id.into(),
            slice_index,
            x_min: bbox[0],
            y_min: bbox[1],
            x_max: bbox[2],
            y_max: bbox[3],
            confidence,
        };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<(), DetectError> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(DetectError::InvalidBox(self.x_min, self.y_min, self.x_max, self.y_max));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DetectError::InvalidConfidence(self.confidence));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn iou(&self, other: &Detection) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.width() * self.height() + other.width() * other.height() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Total order used for every tie-break: scan, slice, then box corners
    /// (x_min first) and confidence.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        self.scan_id
            .cmp(&other.scan_id)
            .then(self.slice_index.cmp(&other.slice_index))
            .then(self.x_min.total_cmp(&other.x_min))
            .then(self.y_min.total_cmp(&other.y_min))
            .then(self.x_max.total_cmp(&other.x_max))
            .then(self.y_max.total_cmp(&other.y_max))
            .then(self.confidence.total_cmp(&other.confidence))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub conf_min: f64,
    pub max_width: f64,
    pub max_height: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            conf_min: DEFAULT_CONF_MIN,
            max_width: DEFAULT_MAX_BOX,
            max_height: DEFAULT_MAX_BOX,
        }
    }
}

/// Keep detections with `confidence >= conf_min` and both sides within the
/// size limit. Both bounds are inclusive.
pub fn filter_detections(dets: &[Detection], p: &FilterParams) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= p.conf_min && d.width() <= p.max_width && d.height() <= p.max_height)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub iou_min: f64,
    pub center_max_mm: f64,
    /// In-plane pixel spacing `[x, y]` in millimetres.
    pub pixel_spacing_mm: [f64; 2],
    pub min_track_len: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            iou_min: DEFAULT_IOU_MIN,
            center_max_mm: DEFAULT_CENTER_MAX_MM,
            pixel_spacing_mm: [1.0, 1.0],
            min_track_len: MIN_TRACK_LEN,
        }
    }
}

impl LinkParams {
    pub fn center_distance_mm(&self, a: &Detection, b: &Detection) -> f64 {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let dx = (ax - bx) * self.pixel_spacing_mm[0];
        let dy = (ay - by) * self.pixel_spacing_mm[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Whether two detections on adjacent slices may be linked.
    pub fn links(&self, a: &Detection, b: &Detection) -> bool {
        a.iou(b) >= self.iou_min || self.center_distance_mm(a, b) <= self.center_max_mm
    }
}

/// Envelope of a track: x/y in pixels, z as inclusive slice indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3d {
    pub x_min: f64,
    pub y_min: f64,
    pub z_min: i64,
    pub x_max: f64,
    pub y_max: f64,
    pub z_max: i64,
}

impl Box3d {
    pub fn volume(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
            * (self.y_max - self.y_min).max(0.0)
            * (self.z_max - self.z_min + 1).max(0) as f64
    }

    /// 3D IoU; the z extent counts slices inclusively.
    pub fn iou(&self, o: &Box3d) -> f64 {
        let ix = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let iy = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        let iz = (self.z_max.min(o.z_max) - self.z_min.max(o.z_min) + 1).max(0) as f64;
        let inter = ix * iy * iz;
        let union = self.volume() + o.volume() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn contains_box(&self, d: &Detection) -> bool {
        self.x_min <= d.x_min
            && self.y_min <= d.y_min
            && self.x_max >= d.x_max
            && self.y_max >= d.y_max
            && (self.z_min..=self.z_max).contains(&(d.slice_index as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureTrack {
    pub scan_id: String,
    pub detections: Vec<Detection>,
    pub box3d: Box3d,
    /// Geometric centre voxel `[x, y, z]`.
    pub center: [i64; 3],
}

impl FractureTrack {
    pub fn from_detections(detections: Vec<Detection>) -> Self {
        let (box3d, center) = track_to_box3d(&detections);
        Self {
            scan_id: detections[0].scan_id.clone(),
            detections,
            box3d,
            center,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Tight 3D envelope of the member boxes and its centre, rounded half-up.
///
/// Panics on an empty slice.
pub fn track_to_box3d(dets: &[Detection]) -> (Box3d, [i64; 3]) {
    assert!(!dets.is_empty(), "track without detections");
    let mut b = Box3d {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        z_min: i64::MAX,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
        z_max: i64::MIN,
    };
    for d in dets {
        b.x_min = b.x_min.min(d.x_min);
        b.y_min = b.y_min.min(d.y_min);
        b.x_max = b.x_max.max(d.x_max);
        b.y_max = b.y_max.max(d.y_max);
        b.z_min = b.z_min.min(d.slice_index as i64);
        b.z_max = b.z_max.max(d.slice_index as i64);
    }
    let center = [
        round_half_up(0.5 * (b.x_min + b.x_max)),
        round_half_up(0.5 * (b.y_min + b.y_max)),
        round_half_up(0.5 * (b.z_min + b.z_max) as f64),
    ];
    (b, center)
}

/// Link detections into tracks and return them as index groups into `dets`.
///
/// Detections of different scans never link. Within a scan, each pair of
/// adjacent slices is matched one-to-one, greedily, in order of descending
/// IoU, then ascending centre distance, then the canonical order of the
/// earlier and later detection. Chains shorter than `min_track_len` are
/// dropped. Groups are listed in canonical order of their first detection,
/// members by slice.
pub fn link_track_indices(dets: &[Detection], p: &LinkParams) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].canonical_cmp(&dets[b]).then(a.cmp(&b)));

    // (scan, slice) -> indices in canonical order
    let mut slices: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for &i in &order {
        slices
            .entry((dets[i].scan_id.as_str(), dets[i].slice_index))
            .or_default()
            .push(i);
    }

    let mut next: Vec<Option<usize>> = vec![None; dets.len()];
    let mut has_prev = vec![false; dets.len()];
    for (&(scan, z), here) in &slices {
        let Some(there) = z.checked_add(1).and_then(|z1| slices.get(&(scan, z1))) else {
            continue;
        };
        let mut cands: Vec<(f64, f64, usize, usize)> = Vec::new();
        for &a in here {
            for &b in there {
                if p.links(&dets[a], &dets[b]) {
                    cands.push((dets[a].iou(&dets[b]), p.center_distance_mm(&dets[a], &dets[b]), a, b));
                }
            }
        }
        cands.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.total_cmp(&y.1))
                .then(dets[x.2].canonical_cmp(&dets[y.2]))
                .then(dets[x.3].canonical_cmp(&dets[y.3]))
                .then(x.2.cmp(&y.2))
                .then(x.3.cmp(&y.3))
        });
        for (_, _, a, b) in cands {
            if next[a].is_none() && !has_prev[b] {
                next[a] = Some(b);
                has_prev[b] = true;
            }
        }
    }

    let mut tracks = Vec::new();
    for &start in &order {
        if has_prev[start] {
            continue;
        }
        let mut chain = vec![start];
        let mut cur = start;
        while let Some(n) = next[cur] {
            chain.push(n);
            cur = n;
        }
        if chain.len() >= p.min_track_len {
            tracks.push(chain);
        }
    }
    tracks
}

/// Link detections into [`FractureTrack`]s.
pub fn link_tracks(dets: &[Detection], p: &LinkParams) -> Vec<FractureTrack> {
    link_track_indices(dets, p)
        .into_iter()
        .map(|g| FractureTrack::from_detections(g.into_iter().map(|i| dets[i].clone()).collect()))
        .collect()
}

/// Clamp to the bone window and map linearly onto `[0, 1]`.
pub fn window_hu(v: f64) -> f64 {
    (v.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)
}

/// CT volume of signed 16-bit HU values.
///
/// `shape` is `[H, W, D]`; voxel `(x, y, z)` lives at `(z * H + y) * W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    /// `[x, y, z]` in millimetres.
    pub spacing: [f64; 3],
    pub data: Vec<i16>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], data: Vec<i16>) -> Result<Self, DetectError> {
        if shape.contains(&0) {
            return Err(DetectError::EmptyVolume(shape));
        }
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(DetectError::VolumeSize {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, spacing, data })
    }

    pub fn filled(shape: [usize; 3], value: i16) -> Result<Self, DetectError> {
        Self::new(shape, [1.0; 3], vec![value; shape.iter().product()])
    }

    pub fn width(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[0]
    }

    pub fn depth(&self) -> usize {
        self.shape[2]
    }

    pub fn get(&self, x: i64, y: i64, z: i64) -> Option<i16> {
        let [h, w, d] = self.shape;
        if x < 0 || y < 0 || z < 0 || x as usize >= w || y as usize >= h || z as usize >= d {
            return None;
        }
        Some(self.data[(z as usize * h + y as usize) * w + x as usize])
    }
}

/// 64x64x32 window of HU-windowed intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `(z * 64 + y) * 64 + x` order.
    pub voxels: Vec<f32>,
    /// Scan-space voxel of `voxels[0]`.
    pub origin: [i64; 3],
    /// Voxels that fell outside the volume and were zero-filled.
    pub pad_count: usize,
}

impl Patch {
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[(z * PATCH_DIMS[1] + y) * PATCH_DIMS[0] + x]
    }
}

/// Extract the patch spanning `center - (32, 32, 16) ..= center + (31, 31, 15)`.
pub fn extract_patch(volume: &Volume, center: [i64; 3]) -> Patch {
    let origin = [
        center[0] - (PATCH_DIMS[0] / 2) as i64,
        center[1] - (PATCH_DIMS[1] / 2) as i64,
        center[2] - (PATCH_DIMS[2] / 2) as i64,
    ];
    let mut voxels = Vec::with_capacity(PATCH_LEN);
    let mut pad_count = 0;
    for dz in 0..PATCH_DIMS[2] as i64 {
        for dy in 0..PATCH_DIMS[1] as i64 {
            for dx in 0..PATCH_DIMS[0] as i64 {
                match volume.get(origin[0] + dx, origin[1] + dy, origin[2] + dz) {
                    Some(hu) => voxels.push(window_hu(hu as f64) as f32),
                    None => {
                        pad_count += 1;
                        voxels.push(0.0);
                    }
                }
            }
        }
    }
    Patch {
        voxels,
        origin,
        pad_count,
    }
}
