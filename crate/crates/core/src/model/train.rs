//! Deterministic mini-batch training over feature pairs.

use serde::{Deserialize, Serialize};

use crate::manifold::{self, geodesic_distance, DEFAULT_CONE_K};
use crate::model::heads::inverse_frequency_weights;
use crate::model::loss::{batch_objective, ConeParent, LossBreakdown, LossWeights, ObjectiveParams};
use crate::model::optim::{warmup_lr, Adam};
use crate::model::{FeaturePair, HyperbolicModel, ModelError};
use crate::rng::CounterRng;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub tau: f64,
    pub lambda_ent: f64,
    pub cls_weight: f64,
    pub cont_weight: f64,
    /// Initial `|kappa|`.
    pub kappa_init: f64,
    pub learn_curvature: bool,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub cone_k: f64,
    pub cone_parent: ConeParent,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            warmup_epochs: 5,
            tau: 0.07,
            lambda_ent: 0.2,
            cls_weight: 1.0,
            cont_weight: 1.0,
            kappa_init: 1.0,
            learn_curvature: true,
            embed_dim: 16,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            cone_k: DEFAULT_CONE_K,
            cone_parent: ConeParent::Image,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.lambda_ent >= 0.0 && self.cls_weight >= 0.0 && self.cont_weight >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.kappa_init > 0.0 && self.kappa_init.is_finite()) {
            return bad("kappa_init must be a positive magnitude");
        }
        if !(self.cone_k > 0.0) {
            return bad("cone_k must be positive");
        }
        if self.embed_dim == 0 || self.batch_size == 0 {
            return bad("embed_dim and batch_size must be positive");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            cls: self.cls_weight,
            cont: self.cont_weight,
            ent: self.lambda_ent,
        }
    }

    pub fn objective(&self) -> ObjectiveParams {
        ObjectiveParams {
            weights: self.loss_weights(),
            tau: self.tau,
            cone_k: self.cone_k,
            cone_parent: self.cone_parent,
            learn_curvature: self.learn_curvature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub curvature: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: HyperbolicModel,
    pub log: Vec<EpochLog>,
}

/// Train a fresh model on `data`.
///
/// `heads` names each attribute head and its class count, in label order.
/// Class weights are inverse label frequencies over `data`. Runs are
/// bit-reproducible for a fixed config.
pub fn train(data: &[FeaturePair], heads: &[(&str, usize)], cfg: &TrainConfig) -> Result<TrainOutput, ModelError> {
    cfg.validate()?;
    let first = data.first().ok_or(ModelError::EmptyDataset)?;
    let mut init_rng = CounterRng::new(cfg.seed, INIT_STREAM);
    let mut model = HyperbolicModel::init(
        first.image.len(),
        first.text.len(),
        cfg.embed_dim,
        heads,
        cfg.kappa_init,
        &mut init_rng,
    );
    for p in data {
        model.check_pair(p)?;
    }
    for (h, head) in model.heads.iter_mut().enumerate() {
        head.class_weights = inverse_frequency_weights(data.iter().map(|p| p.labels[h]), head.n_classes());
    }
    let log = fit(&mut model, data, cfg)?;
    Ok(TrainOutput { model, log })
}

/// Continue training `model` in place for `cfg.epochs` epochs.
pub fn fit(model: &mut HyperbolicModel, data: &[FeaturePair], cfg: &TrainConfig) -> Result<Vec<EpochLog>, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let objective = cfg.objective();
    let mut adam = Adam::new(model, cfg.weight_decay);
    let mut shuffle_rng = CounterRng::new(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut lr = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&FeaturePair> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = batch_objective(model, &batch, &objective);
            if !loss.total.is_finite() {
                return Err(ModelError::NonFinite { what: "loss", epoch, step });
            }
            if grad.params().iter().any(|p| p.values.iter().any(|g| !g.is_finite())) {
                return Err(ModelError::NonFinite { what: "gradient", epoch, step });
            }
            let w = batch.len() as f64 / data.len() as f64;
            sum.total += w * loss.total;
            sum.cls += w * loss.cls;
            sum.cont += w * loss.cont;
            sum.ent += w * loss.ent;
            lr = warmup_lr(cfg.lr, cfg.warmup_epochs, epoch, step, steps_per_epoch);
            adam.step(model, &grad, lr);
        }
        log.push(EpochLog {
            epoch,
            lr,
            loss: sum,
            curvature: model.curvature().c(),
        });
    }
    Ok(log)
}

/// Fraction of images whose geodesically nearest text carries the same
/// label vector. Ties go to the lower text index.
pub fn retrieval_top1(model: &HyperbolicModel, data: &[FeaturePair]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let c = model.curvature();
    let texts: Vec<_> = data.iter().map(|p| model.embed_text(&p.text)).collect();
    let hits = data
        .iter()
        .filter(|p| {
            let v = model.embed_image(&p.image);
            let best = texts
                .iter()
                .enumerate()
                .map(|(j, t)| (j, geodesic_distance(&v, t, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            data[best.0].labels == p.labels
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Argmax accuracy of every head.
pub fn head_accuracies(model: &HyperbolicModel, data: &[FeaturePair]) -> Vec<f64> {
    let mut correct = vec![0usize; model.heads.len()];
    for p in data {
        for (h, head) in model.heads.iter().enumerate() {
            if argmax(&head.linear.forward(&p.image)) == p.labels[h] {
                correct[h] += 1;
            }
        }
    }
    correct.iter().map(|&c| c as f64 / data.len().max(1) as f64).collect()
}

/// Fraction of pairs whose child embedding lies inside the parent's cone.
pub fn cone_satisfaction(model: &HyperbolicModel, data: &[FeaturePair], cone_k: f64, parent: ConeParent) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let c = model.curvature();
    let inside = data
        .iter()
        .filter(|p| {
            let (v, t) = model.embed_pair(p);
            let (par, ch) = match parent {
                ConeParent::Image => (v, t),
                ConeParent::Text => (t, v),
            };
            match (manifold::exterior_angle(&par, &ch, c), manifold::half_aperture(&par, c, cone_k)) {
                (Ok(angle), Ok(ap)) => angle <= ap,
                _ => par == ch,
            }
        })
        .count();
    inside as f64 / data.len() as f64
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<FeaturePair> {
        (0..6)
            .map(|i| FeaturePair {
                scan_id: "S".into(),
                serial: i as u32 + 1,
                image: vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.5, i as f64 * 0.1],
                text: vec![if i % 2 == 0 { 0.5 } else { -0.5 }, 0.2],
                labels: vec![i % 2],
            })
            .collect()
    }

    #[test]
    fn zero_epochs_keeps_initialisation() {
        let cfg = TrainConfig { epochs: 0, embed_dim: 2, ..Default::default() };
        let out = train(&toy(), &[("h", 2)], &cfg).unwrap();
        let mut rng = CounterRng::new(cfg.seed, INIT_STREAM);
        let init = HyperbolicModel::init(3, 2, 2, &[("h", 2)], 1.0, &mut rng);
        assert_eq!(out.model.proj_img, init.proj_img);
        assert_eq!(out.model.heads[0].linear, init.heads[0].linear);
        assert!(out.log.is_empty());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = TrainConfig { epochs: 4, embed_dim: 2, batch_size: 4, lr: 1e-2, ..Default::default() };
        let a = train(&toy(), &[("h", 2)], &cfg).unwrap();
        let b = train(&toy(), &[("h", 2)], &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        let c = train(&toy(), &[("h", 2)], &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(train(&[], &[("h", 2)], &TrainConfig::default()).unwrap_err(), ModelError::EmptyDataset);
        let cfg = TrainConfig { tau: 0.0, ..Default::default() };
        assert!(matches!(train(&toy(), &[("h", 2)], &cfg), Err(ModelError::InvalidConfig(_))));
        let mut data = toy();
        data[2].text.push(1.0);
        assert!(matches!(
            train(&data, &[("h", 2)], &TrainConfig::default()),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut data = toy();
        data[0].image[0] = 1e300;
        let cfg = TrainConfig { epochs: 1, embed_dim: 2, ..Default::default() };
        assert!(matches!(train(&data, &[("h", 2)], &cfg), Err(ModelError::NonFinite { .. })));
    }
}
