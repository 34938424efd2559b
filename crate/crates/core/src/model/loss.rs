//! Classification, geodesic contrastive and entailment-cone objectives with
//! hand-derived gradients.

use serde::{Deserialize, Serialize};

use crate::manifold::{
    self, exp_map0, exp_map0_backward, geodesic_distance_grad, Curvature, HyperbolicPoint,
};
use crate::model::heads::{log_sum_exp, weighted_ce};
use crate::model::{FeaturePair, HyperbolicModel};

/// Which embedding of a pair roots the entailment cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeParent {
    /// The text embedding must lie in the image embedding's cone.
    #[default]
    Image,
    Text,
}

/// A scalar loss over embedded points and its gradient with respect to the
/// space components of every point and to `c`.
#[derive(Debug, Clone)]
pub struct PointLoss {
    pub loss: f64,
    pub d_images: Vec<Vec<f64>>,
    pub d_texts: Vec<Vec<f64>>,
    pub d_c: f64,
}

impl PointLoss {
    fn zeros(images: &[HyperbolicPoint], texts: &[HyperbolicPoint]) -> Self {
        Self {
            loss: 0.0,
            d_images: images.iter().map(|p| vec![0.0; p.dim()]).collect(),
            d_texts: texts.iter().map(|p| vec![0.0; p.dim()]).collect(),
            d_c: 0.0,
        }
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, xi) in acc.iter_mut().zip(x) {
        *y += a * xi;
    }
}

/// Symmetric InfoNCE over negated geodesic distances with temperature `tau`.
pub fn contrastive_loss(
    images: &[HyperbolicPoint],
    texts: &[HyperbolicPoint],
    c: Curvature,
    tau: f64,
) -> PointLoss {
    let n = images.len();
    assert_eq!(n, texts.len(), "unpaired batch");
    let mut out = PointLoss::zeros(images, texts);
    if n == 0 {
        return out;
    }
    let grads: Vec<Vec<_>> = images
        .iter()
        .map(|v| texts.iter().map(|t| geodesic_distance_grad(v, t, c)).collect())
        .collect();
    let logit = |i: usize, j: usize| -grads[i][j].value / tau;

    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp((0..n).map(|j| logit(i, j)))).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp((0..n).map(|i| logit(i, j)))).collect();
    let row_loss: f64 = (0..n).map(|i| row_lse[i] - logit(i, i)).sum::<f64>() / n as f64;
    let col_loss: f64 = (0..n).map(|j| col_lse[j] - logit(j, j)).sum::<f64>() / n as f64;
    out.loss = 0.5 * (row_loss + col_loss);

    let scale = 0.5 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let l = logit(i, j);
            let d_logit = scale * (((l - row_lse[i]).exp() - delta) + ((l - col_lse[j]).exp() - delta));
            let d_dist = -d_logit / tau;
            if d_dist == 0.0 {
                continue;
            }
            let g = &grads[i][j];
            axpy(&mut out.d_images[i], d_dist, &g.d_first);
            axpy(&mut out.d_texts[j], d_dist, &g.d_second);
            out.d_c += d_dist * g.d_c;
        }
    }
    out
}

/// Mean hinge `max(0, exterior_angle(parent, child) - half_aperture(parent))`.
///
/// Pairs whose parent sits at the origin or coincides with the child
/// contribute nothing.
pub fn entailment_loss(
    images: &[HyperbolicPoint],
    texts: &[HyperbolicPoint],
    c: Curvature,
    cone_k: f64,
    parent: ConeParent,
) -> PointLoss {
    let n = images.len();
    assert_eq!(n, texts.len(), "unpaired batch");
    let mut out = PointLoss::zeros(images, texts);
    if n == 0 {
        return out;
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let (p, ch) = match parent {
            ConeParent::Image => (&images[i], &texts[i]),
            ConeParent::Text => (&texts[i], &images[i]),
        };
        let Ok(angle) = manifold::exterior_angle_grad(p, ch, c) else {
            continue;
        };
        let Ok((aperture, d_ap, d_ap_c)) = manifold::half_aperture_grad(p, c, cone_k) else {
            continue;
        };
        let violation = angle.value - aperture;
        if violation <= 0.0 {
            continue;
        }
        out.loss += inv_n * violation;
        let (dp, dch) = match parent {
            ConeParent::Image => (&mut out.d_images, &mut out.d_texts),
            ConeParent::Text => (&mut out.d_texts, &mut out.d_images),
        };
        axpy(&mut dp[i], inv_n, &angle.d_first);
        axpy(&mut dp[i], -inv_n, &d_ap);
        axpy(&mut dch[i], inv_n, &angle.d_second);
        out.d_c += inv_n * (angle.d_c - d_ap_c);
    }
    out
}

/// Multipliers on the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub cont: f64,
    pub ent: f64,
}

impl LossWeights {
    pub fn full(lambda_ent: f64) -> Self {
        Self {
            cls: 1.0,
            cont: 1.0,
            ent: lambda_ent,
        }
    }

    pub fn ce_only() -> Self {
        Self {
            cls: 1.0,
            cont: 0.0,
            ent: 0.0,
        }
    }
}

/// Per-term values of one batch evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub cont: f64,
    pub ent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    pub weights: LossWeights,
    pub tau: f64,
    pub cone_k: f64,
    pub cone_parent: ConeParent,
    pub learn_curvature: bool,
}

/// `weights.cls * L_cls + weights.cont * L_cont + weights.ent * L_ent` on a
/// batch, with the gradient for every trainable parameter.
///
/// `L_cls` sums the per-head weighted cross-entropies, each averaged over
/// the batch. The returned gradient has the shape of the model; its class
/// weights are zero.
pub fn batch_objective(
    model: &HyperbolicModel,
    batch: &[&FeaturePair],
    p: &ObjectiveParams,
) -> (LossBreakdown, HyperbolicModel) {
    let mut grad = model.zeros_like();
    let n = batch.len();
    if n == 0 {
        return (LossBreakdown::default(), grad);
    }
    let inv_n = 1.0 / n as f64;
    let c = model.curvature();

    let mut cls = 0.0;
    for (h, head) in model.heads.iter().enumerate() {
        for pair in batch {
            let logits = head.linear.forward(&pair.image);
            let (l, g) = weighted_ce(&logits, pair.labels[h], &head.class_weights);
            cls += l * inv_n;
            grad.heads[h].linear.accumulate(&pair.image, &g, p.weights.cls * inv_n);
        }
    }

    let u_img: Vec<Vec<f64>> = batch.iter().map(|q| model.proj_img.forward(&q.image)).collect();
    let u_txt: Vec<Vec<f64>> = batch.iter().map(|q| model.proj_txt.forward(&q.text)).collect();
    let images: Vec<HyperbolicPoint> = u_img.iter().map(|u| exp_map0(u, c)).collect();
    let texts: Vec<HyperbolicPoint> = u_txt.iter().map(|u| exp_map0(u, c)).collect();

    let cont = contrastive_loss(&images, &texts, c, p.tau);
    let ent = entailment_loss(&images, &texts, c, p.cone_k, p.cone_parent);

    let mut d_c = p.weights.cont * cont.d_c + p.weights.ent * ent.d_c;
    for i in 0..n {
        let mut g_img = vec![0.0; images[i].dim()];
        axpy(&mut g_img, p.weights.cont, &cont.d_images[i]);
        axpy(&mut g_img, p.weights.ent, &ent.d_images[i]);
        let (gu, gc) = exp_map0_backward(&u_img[i], c, &g_img);
        grad.proj_img.accumulate(&batch[i].image, &gu, 1.0);
        d_c += gc;

        let mut g_txt = vec![0.0; texts[i].dim()];
        axpy(&mut g_txt, p.weights.cont, &cont.d_texts[i]);
        axpy(&mut g_txt, p.weights.ent, &ent.d_texts[i]);
        let (gu, gc) = exp_map0_backward(&u_txt[i], c, &g_txt);
        grad.proj_txt.accumulate(&batch[i].text, &gu, 1.0);
        d_c += gc;
    }
    grad.log_c = if p.learn_curvature { d_c * c.c() } else { 0.0 };

    let breakdown = LossBreakdown {
        total: p.weights.cls * cls + p.weights.cont * cont.loss + p.weights.ent * ent.loss,
        cls,
        cont: cont.loss,
        ent: ent.loss,
    };
    (breakdown, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn c1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let v = exp_map0(&[0.3, 0.1], c1());
        let t = exp_map0(&[-0.5, 0.2], c1());
        assert_eq!(contrastive_loss(&[v], &[t], c1(), 0.07).loss, 0.0);
    }

    #[test]
    fn contrastive_uniform_distances() {
        let o = HyperbolicPoint::origin(3, c1());
        let l = contrastive_loss(&[o.clone(), o.clone()], &[o.clone(), o], c1(), 0.07);
        assert!((l.loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn contrastive_large_tau_tends_to_ln_n() {
        let pts: Vec<_> = (0..4).map(|i| exp_map0(&[i as f64 * 0.3, 0.1], c1())).collect();
        let l = contrastive_loss(&pts, &pts, c1(), 1e9).loss;
        assert!((l - 4f64.ln()).abs() < 1e-8);
        let sharp = contrastive_loss(&pts, &pts, c1(), 0.07).loss;
        let smooth = contrastive_loss(&pts, &pts, c1(), 0.14).loss;
        assert!(sharp < smooth);
    }

    #[test]
    fn entailment_radial_cases() {
        let dir = [0.6, 0.8];
        let at = |r: f64| exp_map0(&dir.map(|x| x * r), c1());
        let nested = entailment_loss(&[at(1.0)], &[at(2.0)], c1(), 0.1, ConeParent::Image);
        assert!(nested.loss < 1e-6);

        // Text reflected through the origin.
        let img = at(1.0);
        let txt = exp_map0(&dir.map(|x| -x), c1());
        let l = entailment_loss(&[img.clone()], &[txt], c1(), 0.1, ConeParent::Image);
        let ap = manifold::half_aperture(&img, c1(), 0.1).unwrap();
        assert!((l.loss - (PI - ap)).abs() < 1e-6);

        let flipped = entailment_loss(&[at(2.0)], &[at(1.0)], c1(), 0.1, ConeParent::Text);
        assert!(flipped.loss < 1e-6);
    }

    #[test]
    fn entailment_skips_degenerate_pairs() {
        let o = HyperbolicPoint::origin(2, c1());
        let p = exp_map0(&[0.5, 0.0], c1());
        assert_eq!(entailment_loss(&[o], &[p.clone()], c1(), 0.1, ConeParent::Image).loss, 0.0);
        assert_eq!(entailment_loss(&[p.clone()], &[p], c1(), 0.1, ConeParent::Image).loss, 0.0);
    }
}
