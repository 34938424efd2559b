//! Hyperbolic multi-modal model over precomputed encoder features.
//!
//! Image features `v` feed four linear attribute heads directly and, through
//! a separate linear projection, the exponential map onto the hyperboloid.
//! Text features take their own projection onto the same hyperboloid. The
//! objective combines weighted cross-entropy on the heads, a geodesic
//! contrastive term and an entailment-cone term.

pub mod heads;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod train;

use thiserror::Error;

use crate::manifold::{exp_map0, Curvature, HyperbolicPoint};
use crate::rng::CounterRng;

pub use heads::{forward_heads, softmax, weighted_ce, ClassificationHead};
pub use linear::Linear;
pub use loss::{
    batch_objective, contrastive_loss, entailment_loss, ConeParent, LossBreakdown, LossWeights,
    ObjectiveParams, PointLoss,
};
pub use optim::{warmup_lr, Adam};
pub use train::{train, EpochLog, TrainConfig, TrainOutput};

/// Full-size encoder output widths.
pub const IMAGE_FEATURE_DIM: usize = 2048;
pub const TEXT_FEATURE_DIM: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label {label} out of range for head {head} with {classes} classes")]
    InvalidLabel { head: usize, label: usize, classes: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One training sample: encoder outputs for a fracture and its head labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub scan_id: String,
    pub serial: u32,
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    /// Class index per head, in head order.
    pub labels: Vec<usize>,
}

/// Borrowed view of one parameter tensor.
pub struct Param<'a> {
    pub name: String,
    pub values: &'a [f64],
    pub decays: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub decays: bool,
}

/// A named tensor as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicModel {
    pub proj_img: Linear,
    pub proj_txt: Linear,
    /// `ln |kappa|`.
    pub log_c: f64,
    pub heads: Vec<ClassificationHead>,
}

impl HyperbolicModel {
    /// All-zero parameters, unit class weights and `|kappa| = 1`.
    pub fn zeros(img_dim: usize, txt_dim: usize, embed_dim: usize, heads: &[(&str, usize)]) -> Self {
        Self {
            proj_img: Linear::zeros(img_dim, embed_dim),
            proj_txt: Linear::zeros(txt_dim, embed_dim),
            log_c: 0.0,
            heads: heads
                .iter()
                .map(|&(name, n)| ClassificationHead {
                    name: name.to_string(),
                    linear: Linear::zeros(img_dim, n),
                    class_weights: vec![1.0; n],
                })
                .collect(),
        }
    }

    /// Uniform fan-in initialisation drawn from `rng` in a fixed order.
    pub fn init(
        img_dim: usize,
        txt_dim: usize,
        embed_dim: usize,
        heads: &[(&str, usize)],
        kappa_abs: f64,
        rng: &mut CounterRng,
    ) -> Self {
        let mut m = Self::zeros(img_dim, txt_dim, embed_dim, heads);
        m.proj_img = Linear::uniform(img_dim, embed_dim, 1.0, rng);
        m.proj_txt = Linear::uniform(txt_dim, embed_dim, 1.0, rng);
        for h in &mut m.heads {
            h.linear = Linear::uniform(img_dim, h.linear.out_dim, 1.0, rng);
        }
        m.log_c = Curvature::clamp_log(kappa_abs.ln());
        m
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.values.iter_mut().for_each(|x| *x = 0.0);
        }
        for h in &mut z.heads {
            h.class_weights.iter_mut().for_each(|w| *w = 0.0);
        }
        z
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::from_log(self.log_c).expect("log-curvature is finite")
    }

    pub fn image_dim(&self) -> usize {
        self.proj_img.in_dim
    }

    pub fn text_dim(&self) -> usize {
        self.proj_txt.in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_img.out_dim
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.n_classes()).collect()
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<Param<'_>> {
        let mut out = vec![
            Param { name: "proj_img.weight".into(), values: &self.proj_img.weight, decays: true },
            Param { name: "proj_img.bias".into(), values: &self.proj_img.bias, decays: false },
            Param { name: "proj_txt.weight".into(), values: &self.proj_txt.weight, decays: true },
            Param { name: "proj_txt.bias".into(), values: &self.proj_txt.bias, decays: false },
            Param { name: "log_c".into(), values: std::slice::from_ref(&self.log_c), decays: false },
        ];
        for h in &self.heads {
            out.push(Param { name: format!("head.{}.weight", h.name), values: &h.linear.weight, decays: true });
            out.push(Param { name: format!("head.{}.bias", h.name), values: &h.linear.bias, decays: false });
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![
            ParamMut { name: "proj_img.weight".into(), values: &mut self.proj_img.weight, decays: true },
            ParamMut { name: "proj_img.bias".into(), values: &mut self.proj_img.bias, decays: false },
            ParamMut { name: "proj_txt.weight".into(), values: &mut self.proj_txt.weight, decays: true },
            ParamMut { name: "proj_txt.bias".into(), values: &mut self.proj_txt.bias, decays: false },
            ParamMut { name: "log_c".into(), values: std::slice::from_mut(&mut self.log_c), decays: false },
        ];
        for h in &mut self.heads {
            out.push(ParamMut {
                name: format!("head.{}.weight", h.name),
                values: &mut h.linear.weight,
                decays: true,
            });
            out.push(ParamMut { name: format!("head.{}.bias", h.name), values: &mut h.linear.bias, decays: false });
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    pub fn check_pair(&self, p: &FeaturePair) -> Result<(), ModelError> {
        if p.image.len() != self.image_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "image feature",
                expected: self.image_dim(),
                got: p.image.len(),
            });
        }
        if p.text.len() != self.text_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "text feature",
                expected: self.text_dim(),
                got: p.text.len(),
            });
        }
        if p.labels.len() != self.heads.len() {
            return Err(ModelError::DimensionMismatch {
                what: "label vector",
                expected: self.heads.len(),
                got: p.labels.len(),
            });
        }
        for (h, (&label, head)) in p.labels.iter().zip(&self.heads).enumerate() {
            if label >= head.n_classes() {
                return Err(ModelError::InvalidLabel { head: h, label, classes: head.n_classes() });
            }
        }
        if p.image.iter().chain(&p.text).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteInput(format!("pair ({}, {})", p.scan_id, p.serial)));
        }
        Ok(())
    }

    pub fn embed_image(&self, v: &[f64]) -> HyperbolicPoint {
        exp_map0(&self.proj_img.forward(v), self.curvature())
    }

    pub fn embed_text(&self, t: &[f64]) -> HyperbolicPoint {
        exp_map0(&self.proj_txt.forward(t), self.curvature())
    }

    /// Project both modalities of a pair onto the hyperboloid.
    pub fn embed_pair(&self, p: &FeaturePair) -> (HyperbolicPoint, HyperbolicPoint) {
        (self.embed_image(&p.image), self.embed_text(&p.text))
    }

    /// Per-head class probabilities for one image feature.
    pub fn predict_proba(&self, v: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(forward_heads(v, &self.heads)?.iter().map(|l| softmax(l)).collect())
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let lin = |prefix: &str, l: &Linear| {
            vec![
                NamedTensor { name: format!("{prefix}.weight"), shape: vec![l.out_dim, l.in_dim], data: l.weight.clone() },
                NamedTensor { name: format!("{prefix}.bias"), shape: vec![l.out_dim], data: l.bias.clone() },
            ]
        };
        let mut out = lin("proj_img", &self.proj_img);
        out.extend(lin("proj_txt", &self.proj_txt));
        out.push(NamedTensor { name: "log_c".into(), shape: vec![1], data: vec![self.log_c] });
        for h in &self.heads {
            out.extend(lin(&format!("head.{}", h.name), &h.linear));
            out.push(NamedTensor {
                name: format!("head.{}.class_weights", h.name),
                shape: vec![h.class_weights.len()],
                data: h.class_weights.clone(),
            });
        }
        out
    }

    /// Rebuild a model from [`Self::to_tensors`] output. Heads are recovered
    /// in the order their tensors appear.
    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self, ModelError> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor '{name}'")))
        };
        let lin = |prefix: &str| -> Result<Linear, ModelError> {
            let w = find(&format!("{prefix}.weight"))?;
            let b = find(&format!("{prefix}.bias"))?;
            if w.shape.len() != 2 || b.shape != [w.shape[0]] || w.data.len() != w.shape[0] * w.shape[1] {
                return Err(ModelError::Checkpoint(format!("bad shapes for '{prefix}'")));
            }
            Ok(Linear { in_dim: w.shape[1], out_dim: w.shape[0], weight: w.data.clone(), bias: b.data.clone() })
        };
        let proj_img = lin("proj_img")?;
        let proj_txt = lin("proj_txt")?;
        if proj_img.out_dim != proj_txt.out_dim {
            return Err(ModelError::Checkpoint("projection widths differ".into()));
        }
        let log_c = find("log_c")?
            .data
            .first()
            .copied()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ModelError::Checkpoint("bad log_c".into()))?;
        let mut heads = Vec::new();
        for t in tensors {
            let Some(name) = t.name.strip_prefix("head.").and_then(|s| s.strip_suffix(".weight")) else {
                continue;
            };
            let linear = lin(&format!("head.{name}"))?;
            let class_weights = find(&format!("head.{name}.class_weights"))?.data.clone();
            if class_weights.len() != linear.out_dim || linear.in_dim != proj_img.in_dim {
                return Err(ModelError::Checkpoint(format!("bad shapes for head '{name}'")));
            }
            heads.push(ClassificationHead { name: name.to_string(), linear, class_weights });
        }
        Ok(Self { proj_img, proj_txt, log_c, heads })
    }
}
