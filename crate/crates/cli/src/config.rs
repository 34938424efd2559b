//! Pipeline configuration file and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ribfrac_core::annotation::{Vocabularies, DEFAULT_CHARACTERIZATIONS};
use ribfrac_core::detect::{FilterParams, LinkParams, DEFAULT_CENTER_MAX_MM, DEFAULT_CONF_MIN, DEFAULT_IOU_MIN};
use ribfrac_core::eval::DEFAULT_IOU3D_MIN;
use ribfrac_core::synth::SynthConfig;
use ribfrac_core::{Orientation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub conf_min: f64,
    pub max_box: f64,
    pub iou_min: f64,
    pub center_max_mm: f64,
    pub pixel_spacing_mm: [f64; 2],
    pub min_track_len: usize,
    pub iou3d_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let link = LinkParams::default();
        Self {
            conf_min: DEFAULT_CONF_MIN,
            max_box: FilterParams::default().max_width,
            iou_min: DEFAULT_IOU_MIN,
            center_max_mm: DEFAULT_CENTER_MAX_MM,
            pixel_spacing_mm: link.pixel_spacing_mm,
            min_track_len: link.min_track_len,
            iou3d_min: DEFAULT_IOU3D_MIN,
        }
    }
}

impl Thresholds {
    pub fn filter(&self) -> FilterParams {
        FilterParams {
            conf_min: self.conf_min,
            max_width: self.max_box,
            max_height: self.max_box,
        }
    }

    pub fn link(&self) -> LinkParams {
        LinkParams {
            iou_min: self.iou_min,
            center_max_mm: self.center_max_mm,
            pixel_spacing_mm: self.pixel_spacing_mm,
            min_track_len: self.min_track_len,
        }
    }

    fn check(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0, 1], got {v}"))
            }
        };
        unit("conf_min", self.conf_min)?;
        unit("iou_min", self.iou_min)?;
        unit("iou3d_min", self.iou3d_min)?;
        if !(self.max_box > 0.0) {
            return Err(format!("max_box must be positive, got {}", self.max_box));
        }
        if !(self.center_max_mm >= 0.0) {
            return Err(format!("center_max_mm must be non-negative, got {}", self.center_max_mm));
        }
        if self.pixel_spacing_mm.iter().any(|s| !(*s > 0.0)) {
            return Err("pixel_spacing_mm must be positive".into());
        }
        if self.min_track_len == 0 {
            return Err("min_track_len must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub characterizations: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            characterizations: DEFAULT_CHARACTERIZATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl VocabConfig {
    pub fn vocabularies(&self) -> Vocabularies {
        let chars: Vec<&str> = self.characterizations.iter().map(String::as_str).collect();
        Vocabularies::with_characterizations(&chars)
    }
}

/// Optional default paths; subcommand arguments take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub detections: Option<PathBuf>,
    pub volumes: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub worksheets: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: usize,
    pub orientation: Orientation,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub vocab: VocabConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            orientation: Orientation::default(),
            paths: Paths::default(),
            thresholds: Thresholds::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            vocab: VocabConfig::default(),
        }
    }
}

/// Command-line values that override config keys.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub iou_min: Option<f64>,
    pub center_max_mm: Option<f64>,
    pub conf_min: Option<f64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
    }

    /// Apply overrides, propagate the seed and check ranges.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, String> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(v) = o.iou_min {
            self.thresholds.iou_min = v;
        }
        if let Some(v) = o.center_max_mm {
            self.thresholds.center_max_mm = v;
        }
        if let Some(v) = o.conf_min {
            self.thresholds.conf_min = v;
        }
        if let Some(p) = &o.out {
            self.paths.out = Some(p.clone());
        }
        self.train.seed = self.seed;
        self.synth.seed = self.seed;

        if self.jobs == 0 {
            return Err("jobs must be at least 1".into());
        }
        self.thresholds.check()?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.synth.validate().map_err(|e| e.to_string())?;
        let problems: Vec<String> = self.vocab.vocabularies().heads.iter().flat_map(|h| h.problems()).collect();
        if !problems.is_empty() {
            return Err(format!("vocabulary: {}", problems.join("; ")));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_defaults() {
        let cfg: PipelineConfig = toml::from_str("seed = 5\n[thresholds]\niou_min = 0.3\nconf_min = 0.6\n").unwrap();
        let o = Overrides {
            iou_min: Some(0.1),
            ..Default::default()
        };
        let r = cfg.resolve(&o).unwrap();
        assert_eq!(r.thresholds.iou_min, 0.1);
        assert_eq!(r.thresholds.conf_min, 0.6);
        assert_eq!(r.thresholds.center_max_mm, DEFAULT_CENTER_MAX_MM);
        assert_eq!((r.seed, r.train.seed, r.synth.seed), (5, 5, 5));
    }

    #[test]
    fn rejects_out_of_range_and_unknown_keys() {
        let o = Overrides {
            conf_min: Some(1.5),
            ..Default::default()
        };
        assert!(PipelineConfig::default().resolve(&o).is_err());
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
        let o = Overrides {
            jobs: Some(0),
            ..Default::default()
        };
        assert!(PipelineConfig::default().resolve(&o).is_err());
    }
}
