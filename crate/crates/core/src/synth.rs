//! Seeded generators for detection stacks, CT volumes, rib masks,
//! annotation worksheets and feature-pair datasets.
//!
//! Every generator is a pure function of its config; all randomness comes
//! from [`CounterRng`] with a fixed stream per generator.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::{encode_label, RibMask};
use crate::annotation::{
    AnnotationWorksheet, Displacement, FractureAnnotation, Location, Multiplicity, Side, Vocabularies,
    HEAD_CHARACTERIZATION,
};
use crate::detect::{Detection, LinkParams, Volume};
use crate::model::FeaturePair;
use crate::rng::CounterRng;

const DETECTION_STREAM: u64 = 10;
const VOLUME_STREAM: u64 = 11;
const WORKSHEET_STREAM: u64 = 12;
const FEATURE_STREAM: u64 = 13;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_scans: usize,
    pub slices_per_scan: usize,
    /// Upper bound on boxes per slice.
    pub boxes_per_slice: usize,
    pub n_pairs: usize,
    pub n_clusters: usize,
    /// Norm of the cluster centroids.
    pub separation: f64,
    /// Norm scale of the per-sample image noise.
    pub img_noise: f64,
    /// Norm scale of the per-sample text noise.
    pub txt_noise: f64,
    pub img_dim: usize,
    pub txt_dim: usize,
    pub fractures_per_scan: usize,
    /// `[H, W, D]` of generated volumes.
    pub volume_shape: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_scans: 3,
            slices_per_scan: 10,
            boxes_per_slice: 8,
            n_pairs: 200,
            n_clusters: 4,
            separation: 4.0,
            img_noise: 1.0,
            txt_noise: 0.02,
            img_dim: crate::model::IMAGE_FEATURE_DIM,
            txt_dim: crate::model::TEXT_FEATURE_DIM,
            fractures_per_scan: 6,
            volume_shape: [128, 128, 40],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.n_scans == 0 || self.slices_per_scan == 0 || self.n_pairs == 0 || self.n_clusters == 0 {
            return bad("counts must be positive");
        }
        if self.img_dim == 0 || self.txt_dim == 0 || self.volume_shape.contains(&0) {
            return bad("dimensions must be positive");
        }
        if !(self.separation > 0.0) || !(self.img_noise >= 0.0) || !(self.txt_noise >= 0.0) {
            return bad("separation must be positive and noise non-negative");
        }
        Ok(())
    }

    pub fn scan_id(&self, scan: usize) -> String {
        format!("SYN-{scan:04}")
    }
}

/// Generated detections and the linking oracle's partition of them.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStack {
    pub detections: Vec<Detection>,
    pub partition: Vec<Vec<usize>>,
}

/// Random detections: drifting objects that persist over several slices plus
/// clutter, capped at `boxes_per_slice` per slice.
pub fn gen_detection_stack(cfg: &SynthConfig, params: &LinkParams) -> DetectionStack {
    let mut rng = CounterRng::new(cfg.seed, DETECTION_STREAM);
    let mut detections = Vec::new();
    let field = 96.0;
    for scan in 0..cfg.n_scans {
        let scan_id = cfg.scan_id(scan);
        let mut per_slice = vec![0usize; cfg.slices_per_scan];
        let n_objects = if cfg.boxes_per_slice == 0 { 0 } else { 1 + rng.below(cfg.boxes_per_slice as u64) as usize };
        for _ in 0..n_objects {
            let start = rng.below(cfg.slices_per_scan as u64) as usize;
            let len = 1 + rng.below((cfg.slices_per_scan - start) as u64) as usize;
            let (mut cx, mut cy) = (rng.uniform(10.0, field), rng.uniform(10.0, field));
            let (w, h) = (rng.uniform(4.0, 30.0), rng.uniform(4.0, 30.0));
            for z in start..start + len {
                cx += rng.uniform(-3.0, 3.0);
                cy += rng.uniform(-3.0, 3.0);
                if per_slice[z] < cfg.boxes_per_slice {
                    per_slice[z] += 1;
                    let jw = w * rng.uniform(0.85, 1.15);
                    let jh = h * rng.uniform(0.85, 1.15);
                    detections.push(Detection {
                        scan_id: scan_id.clone(),
                        slice_index: z as u32,
                        x_min: cx - jw / 2.0,
                        y_min: cy - jh / 2.0,
                        x_max: cx + jw / 2.0,
                        y_max: cy + jh / 2.0,
                        confidence: rng.uniform(0.5, 1.0),
                    });
                }
            }
        }
        for (z, count) in per_slice.iter_mut().enumerate() {
            let room = cfg.boxes_per_slice - *count;
            let clutter = if room == 0 { 0 } else { rng.below(room as u64 + 1) as usize };
            for _ in 0..clutter {
                let (x, y) = (rng.uniform(0.0, field), rng.uniform(0.0, field));
                let (w, h) = (rng.uniform(2.0, 40.0), rng.uniform(2.0, 40.0));
                detections.push(Detection {
                    scan_id: scan_id.clone(),
                    slice_index: z as u32,
                    x_min: x,
                    y_min: y,
                    x_max: x + w,
                    y_max: y + h,
                    confidence: rng.uniform(0.0, 1.0),
                });
            }
            *count += clutter;
        }
    }
    let partition = oracle_partition(&detections, params);
    DetectionStack { detections, partition }
}

/// Reference track partition computed by exhaustive search.
///
/// Builds every admissible link between detections on adjacent slices,
/// repeatedly selects the highest-priority link whose endpoints are still
/// free by scanning the full list, then takes connected components of the
/// resulting graph. Components that span fewer than `min_track_len`
/// consecutive slices are dropped.
pub fn oracle_partition(dets: &[Detection], p: &LinkParams) -> Vec<Vec<usize>> {
    struct Edge {
        a: usize,
        b: usize,
        iou: f64,
        dist: f64,
    }
    let corner_key = |d: &Detection| (d.x_min, d.y_min, d.x_max, d.y_max, d.confidence);
    let cmp_det = |i: usize, j: usize| -> Ordering {
        let (a, b) = (&dets[i], &dets[j]);
        let (ka, kb) = (corner_key(a), corner_key(b));
        a.scan_id
            .cmp(&b.scan_id)
            .then(a.slice_index.cmp(&b.slice_index))
            .then(ka.0.total_cmp(&kb.0))
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
            .then(ka.4.total_cmp(&kb.4))
            .then(i.cmp(&j))
    };
    // Ordering::Less means higher priority.
    let priority = |x: &Edge, y: &Edge| -> Ordering {
        y.iou
            .total_cmp(&x.iou)
            .then(x.dist.total_cmp(&y.dist))
            .then(cmp_det(x.a, y.a))
            .then(cmp_det(x.b, y.b))
    };

    let mut edges = Vec::new();
    for (i, a) in dets.iter().enumerate() {
        for (j, b) in dets.iter().enumerate() {
            if a.scan_id == b.scan_id && b.slice_index as u64 == a.slice_index as u64 + 1 && p.links(a, b) {
                edges.push(Edge {
                    a: i,
                    b: j,
                    iou: a.iou(b),
                    dist: p.center_distance_mm(a, b),
                });
            }
        }
    }

    let mut out_used = vec![false; dets.len()];
    let mut in_used = vec![false; dets.len()];
    let mut alive = vec![true; edges.len()];
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); dets.len()];
    loop {
        let mut best: Option<usize> = None;
        for (k, e) in edges.iter().enumerate() {
            if !alive[k] || out_used[e.a] || in_used[e.b] {
                continue;
            }
            if best.is_none_or(|b| priority(e, &edges[b]) == Ordering::Less) {
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        alive[k] = false;
        let e = &edges[k];
        out_used[e.a] = true;
        in_used[e.b] = true;
        adjacency[e.a].push(e.b);
        adjacency[e.b].push(e.a);
    }

    let mut seen = vec![false; dets.len()];
    let mut components = Vec::new();
    for start in 0..dets.len() {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort_by_key(|&i| dets[i].slice_index);
        let consecutive = comp
            .windows(2)
            .all(|w| dets[w[1]].slice_index == dets[w[0]].slice_index + 1);
        if consecutive && comp.len() >= p.min_track_len {
            components.push(comp);
        }
    }
    components.sort_by(|x, y| cmp_det(x[0], y[0]));
    components
}

/// Soft-tissue volume with bright rib bands; bone sits in horizontal bands
/// on both sides of the midline.
pub fn gen_volume(cfg: &SynthConfig, scan: usize) -> Volume {
    let [h, w, d] = cfg.volume_shape;
    let mut rng = CounterRng::new(cfg.seed ^ scan as u64, VOLUME_STREAM);
    let mut data = Vec::with_capacity(h * w * d);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let base = if is_bone(x, y, h, w) { 700.0 } else { 40.0 };
                data.push((base + rng.uniform(-30.0, 30.0)).round() as i16);
            }
        }
        let _ = z;
    }
    Volume::new(cfg.volume_shape, [0.8, 0.8, 1.5], data).expect("shape matches data")
}

fn is_bone(x: usize, y: usize, h: usize, w: usize) -> bool {
    let dx = x as f64 - w as f64 / 2.0;
    let dy = y as f64 - h as f64 / 2.0;
    let r = ((dx / (0.42 * w as f64)).powi(2) + (dy / (0.42 * h as f64)).powi(2)).sqrt();
    (0.85..=1.0).contains(&r)
}

/// Rib labels matching [`gen_volume`]: bone voxels are labelled by side
/// (image-left half is the patient's right) and by a depth band per rib.
pub fn gen_rib_mask(cfg: &SynthConfig) -> RibMask {
    let [h, w, d] = cfg.volume_shape;
    let mut labels = Vec::with_capacity(h * w * d);
    for z in 0..d {
        let rib = (1 + z * 12 / d).min(12) as u8;
        for y in 0..h {
            for x in 0..w {
                labels.push(if is_bone(x, y, h, w) {
                    let side = if x < w / 2 { Side::Right } else { Side::Left };
                    encode_label(side, rib)
                } else {
                    0
                });
            }
        }
    }
    RibMask::new(cfg.volume_shape, labels).expect("labels match shape")
}

/// A valid worksheet with `fractures_per_scan` random fractures.
pub fn gen_worksheet(cfg: &SynthConfig, scan: usize, vocab: &Vocabularies) -> AnnotationWorksheet {
    let mut rng = CounterRng::new(cfg.seed ^ scan as u64, WORKSHEET_STREAM);
    let chars: Vec<&str> = vocab
        .head(HEAD_CHARACTERIZATION)
        .map(|h| h.labels.iter().map(String::as_str).filter(|l| *l != crate::annotation::NO_FRACTURE).collect())
        .unwrap_or_default();
    let scan_id = cfg.scan_id(scan);
    let pick = |rng: &mut CounterRng, n: usize| rng.below(n as u64) as usize;
    let annotations = (0..cfg.fractures_per_scan)
        .map(|i| FractureAnnotation {
            scan_id: scan_id.clone(),
            fracture_serial: i as u32 + 1,
            rib_side: Side::ALL[pick(&mut rng, 2)],
            rib_number: 1 + pick(&mut rng, 12) as u8,
            location: Location::ALL[pick(&mut rng, 3)],
            displacement: Displacement::ALL[pick(&mut rng, 4)],
            characterization: if chars.is_empty() {
                "oblique".to_string()
            } else {
                chars[pick(&mut rng, chars.len())].to_string()
            },
            multiple: Multiplicity::ALL[pick(&mut rng, 2)],
            flail_contributor: rng.next_f64() < 0.15,
            segmental_contributor: rng.next_f64() < 0.2,
        })
        .collect();
    AnnotationWorksheet {
        scan_id,
        annotations,
        voxel_spacing: [0.8, 0.8, 1.5],
        volume_shape: cfg.volume_shape,
    }
}

/// Label vector of cluster `k`: class `k mod n_h` for each head, so cluster 0
/// is negative (class 0) on every head.
pub fn cluster_labels(k: usize, head_sizes: &[usize]) -> Vec<usize> {
    head_sizes.iter().map(|&n| k % n).collect()
}

/// Cluster centroids in image and text space.
pub fn cluster_centroids(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = CounterRng::new(cfg.seed, FEATURE_STREAM);
    let draw = |rng: &mut CounterRng, dim: usize, norm: f64| -> Vec<f64> {
        let s = norm / (dim as f64).sqrt();
        (0..dim).map(|_| s * rng.normal()).collect()
    };
    let img = (0..cfg.n_clusters).map(|_| draw(&mut rng, cfg.img_dim, cfg.separation)).collect();
    let txt = (0..cfg.n_clusters).map(|_| draw(&mut rng, cfg.txt_dim, cfg.separation)).collect();
    (img, txt)
}

/// Clustered feature pairs. Text features are cluster centroids with small
/// noise, image features the matching image centroid with larger noise.
/// Pairs cycle through the clusters in a shuffled order.
pub fn gen_feature_pairs(cfg: &SynthConfig, head_sizes: &[usize]) -> Result<Vec<FeaturePair>, SynthError> {
    cfg.validate()?;
    let max_classes = head_sizes.iter().copied().max().unwrap_or(0);
    if head_sizes.iter().any(|&n| n == 0) || cfg.n_clusters > max_classes {
        return Err(SynthError::InvalidConfig(format!(
            "n_clusters {} needs a head with at least that many classes",
            cfg.n_clusters
        )));
    }
    let (img_c, txt_c) = cluster_centroids(cfg);
    let mut rng = CounterRng::new(cfg.seed, FEATURE_STREAM + 1);
    let mut clusters: Vec<usize> = (0..cfg.n_pairs).map(|i| i % cfg.n_clusters).collect();
    rng.shuffle(&mut clusters);
    let si = cfg.img_noise / (cfg.img_dim as f64).sqrt();
    let st = cfg.txt_noise / (cfg.txt_dim as f64).sqrt();
    let per_scan = cfg.fractures_per_scan.max(1);
    Ok(clusters
        .into_iter()
        .enumerate()
        .map(|(i, k)| FeaturePair {
            scan_id: cfg.scan_id(i / per_scan),
            serial: (i % per_scan) as u32 + 1,
            image: img_c[k].iter().map(|c| c + si * rng.normal()).collect(),
            text: txt_c[k].iter().map(|c| c + st * rng.normal()).collect(),
            labels: cluster_labels(k, head_sizes),
        })
        .collect())
}
