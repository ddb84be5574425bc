//! Softmax over negative squared embedding distances to one anchor per class,
//! its cross-entropy against the true class, and the combined training loss.
//!
//! With `d_i = |q - a_i|^2`, `P_i = exp(-d_i) / sum_j exp(-d_j)` and
//! `L = -ln P_y`, the loss gradient is
//!
//! ```text
//! dL/dq   =  sum_i 2 (t_i - P_i) (q - a_i)
//! dL/da_i = -2 (t_i - P_i) (q - a_i)
//! ```
//!
//! where `t` is the one-hot encoding of `y`.

use crate::embedding::{ClassificationLoss, Dense};
use crate::error::{Error, Result};

pub const DEFAULT_METRIC_WEIGHT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityDistribution {
    pub probs: Vec<f64>,
    pub squared_distances: Vec<f64>,
}

impl SimilarityDistribution {
    pub fn nearest(&self) -> usize {
        crate::embedding::argmax(&self.probs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricLossValue {
    pub loss: f64,
    pub distribution: SimilarityDistribution,
    pub grad_query: Vec<f64>,
    pub grad_anchors: Vec<Vec<f64>>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_inputs<A: AsRef<[f64]>>(query: &[f64], anchors: &[A]) -> Result<()> {
    if anchors.len() < 2 {
        return Err(Error::invalid("anchors", "need at least two classes"));
    }
    for a in anchors {
        let a = a.as_ref();
        if a.len() != query.len() {
            return Err(Error::DimensionMismatch {
                context: "anchor embedding",
                expected: query.len(),
                found: a.len(),
            });
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "anchor embedding".into(),
            });
        }
    }
    if !query.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "query embedding".into(),
        });
    }
    Ok(())
}

/// Softmax of negative squared distances from `query` to each anchor.
///
/// The minimum distance is subtracted before exponentiating, so the nearest
/// anchor contributes `exp(0) = 1` and nothing overflows.
pub fn similarity_distribution<A: AsRef<[f64]>>(query: &[f64], anchors: &[A]) -> Result<SimilarityDistribution> {
    check_inputs(query, anchors)?;
    let squared_distances: Vec<f64> = anchors
        .iter()
        .map(|a| squared_distance(query, a.as_ref()))
        .collect();
    let min = squared_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = squared_distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(SimilarityDistribution {
        probs,
        squared_distances,
    })
}

pub fn metric_loss<A: AsRef<[f64]>>(query: &[f64], anchors: &[A], true_class: usize) -> Result<MetricLossValue> {
    if true_class >= anchors.len() {
        return Err(Error::InvalidLabel {
            label: true_class,
            num_classes: anchors.len(),
        });
    }
    let distribution = similarity_distribution(query, anchors)?;
    let d = &distribution.squared_distances;
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let log_norm = d.iter().map(|di| (min - di).exp()).sum::<f64>().ln();
    let loss = (d[true_class] - min) + log_norm;

    let mut grad_query = vec![0.0; query.len()];
    let grad_anchors = anchors
        .iter()
        .zip(&distribution.probs)
        .enumerate()
        .map(|(i, (a, p))| {
            let t = if i == true_class { 1.0 } else { 0.0 };
            let coeff = 2.0 * (t - p);
            a.as_ref()
                .iter()
                .zip(query)
                .zip(grad_query.iter_mut())
                .map(|((ai, qi), gq)| {
                    let g = coeff * (qi - ai);
                    *gq += g;
                    -g
                })
                .collect()
        })
        .collect();

    Ok(MetricLossValue {
        loss,
        distribution,
        grad_query,
        grad_anchors,
    })
}

/// Classification loss plus `weight` times the metric loss, with gradients
/// expressed with respect to the embeddings and the head.
#[derive(Clone, Debug)]
pub struct CombinedLossValue {
    pub total: f64,
    pub classification: f64,
    pub metric: f64,
    pub grad_query: Vec<f64>,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_head: Dense,
}

pub fn combined_loss(
    classification: &ClassificationLoss,
    metric: Option<&MetricLossValue>,
    weight: f64,
) -> Result<CombinedLossValue> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {weight}")));
    }
    let mut grad_query = classification.grad_embedding.clone();
    let (metric_loss, grad_anchors) = match metric {
        Some(m) if weight > 0.0 => {
            if m.grad_query.len() != grad_query.len() {
                return Err(Error::DimensionMismatch {
                    context: "metric query gradient",
                    expected: grad_query.len(),
                    found: m.grad_query.len(),
                });
            }
            for (g, mg) in grad_query.iter_mut().zip(&m.grad_query) {
                *g += weight * mg;
            }
            let anchors = m
                .grad_anchors
                .iter()
                .map(|ga| ga.iter().map(|v| weight * v).collect())
                .collect();
            (m.loss, anchors)
        }
        Some(m) => (m.loss, m.grad_anchors.iter().map(|ga| vec![0.0; ga.len()]).collect()),
        None => (0.0, Vec::new()),
    };
    let total = if weight > 0.0 {
        classification.loss + weight * metric_loss
    } else {
        classification.loss
    };
    Ok(CombinedLossValue {
        total,
        classification: classification.loss,
        metric: metric_loss,
        grad_query,
        grad_anchors,
        grad_head: classification.grad_head.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{ClassifierHead, Dense};
    use crate::rng::DetRng;

    #[test]
    fn equidistant_pair_is_even() {
        let d = similarity_distribution(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn ln3_gap_gives_three_to_one() {
        let gap = 3f64.ln().sqrt();
        let d = similarity_distribution(&[0.0], &[vec![0.0], vec![gap]]).unwrap();
        assert!((d.probs[0] - 0.75).abs() < 1e-12);
        assert!((d.probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn matches_unstabilized_formula_at_small_scale() {
        let mut rng = DetRng::new(5);
        let q: Vec<f64> = (0..4).map(|_| 0.5 * rng.normal()).collect();
        let anchors: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| 0.5 * rng.normal()).collect()).collect();
        let d = similarity_distribution(&q, &anchors).unwrap();
        let raw: Vec<f64> = anchors
            .iter()
            .map(|a| (-a.iter().zip(&q).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp())
            .collect();
        let z: f64 = raw.iter().sum();
        for (p, r) in d.probs.iter().zip(raw) {
            assert!((p - r / z).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_single_class_and_non_finite() {
        assert!(similarity_distribution(&[0.0], &[vec![1.0]]).is_err());
        assert!(similarity_distribution(&[f64::NAN], &[vec![1.0], vec![2.0]]).is_err());
        assert!(similarity_distribution(&[0.0], &[vec![f64::INFINITY], vec![2.0]]).is_err());
        assert!(metric_loss(&[0.0], &[vec![1.0], vec![2.0]], 2).is_err());
    }

    #[test]
    fn far_anchors_do_not_overflow() {
        let d = similarity_distribution(&[0.0], &[vec![1e3], vec![1e3 + 1.0], vec![-5e3]]).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.probs[0] > 0.99);
    }

    #[test]
    fn equidistant_anchors_give_ln_c() {
        let anchors = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        for y in 0..4 {
            let m = metric_loss(&[0.0, 0.0], &anchors, y).unwrap();
            assert!((m.loss - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn coinciding_true_anchor_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for far in [1.0, 2.0, 4.0, 8.0] {
            let m = metric_loss(&[0.0, 0.0], &[vec![0.0, 0.0], vec![far, 0.0], vec![0.0, far]], 0).unwrap();
            assert!(m.loss < 3f64.ln());
            assert!(m.loss < prev);
            prev = m.loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = DetRng::new(77);
        let e = 5;
        let q: Vec<f64> = (0..e).map(|_| rng.normal()).collect();
        let anchors: Vec<Vec<f64>> = (0..4).map(|_| (0..e).map(|_| rng.normal()).collect()).collect();
        let y = 2;
        let m = metric_loss(&q, &anchors, y).unwrap();
        let h = 1e-5;
        let loss_at = |q: &[f64], a: &[Vec<f64>]| metric_loss(q, a, y).unwrap().loss;
        for i in 0..e {
            let (mut qp, mut qm) = (q.clone(), q.clone());
            qp[i] += h;
            qm[i] -= h;
            let fd = (loss_at(&qp, &anchors) - loss_at(&qm, &anchors)) / (2.0 * h);
            assert!((fd - m.grad_query[i]).abs() / fd.abs().max(1e-6) < 1e-4);
        }
        for k in 0..4 {
            for i in 0..e {
                let (mut ap, mut am) = (anchors.clone(), anchors.clone());
                ap[k][i] += h;
                am[k][i] -= h;
                let fd = (loss_at(&q, &ap) - loss_at(&q, &am)) / (2.0 * h);
                assert!((fd - m.grad_anchors[k][i]).abs() / fd.abs().max(1e-6) < 1e-4);
            }
        }
    }

    fn toy_classification() -> ClassificationLoss {
        let head = ClassifierHead::from_layer(Dense::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap());
        head.loss(&[0.3, -0.2], 1).unwrap()
    }

    #[test]
    fn zero_weight_ignores_metric() {
        let cls = toy_classification();
        let m = metric_loss(&[0.3, -0.2], &[vec![1.0, 1.0], vec![0.0, 0.0]], 1).unwrap();
        let c = combined_loss(&cls, Some(&m), 0.0).unwrap();
        assert_eq!(c.total, cls.loss);
        assert_eq!(c.grad_query, cls.grad_embedding);
        assert!(c.grad_anchors.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_weight_adds_losses() {
        let mut cls = toy_classification();
        cls.loss = 0.5;
        let mut m = metric_loss(&[0.0, 0.0], &[vec![1.0, 0.0], vec![2.0, 0.0]], 0).unwrap();
        m.loss = 0.5;
        assert_eq!(combined_loss(&cls, Some(&m), 1.0).unwrap().total, 1.0);
        assert!(combined_loss(&cls, Some(&m), -0.1).is_err());
    }
}
