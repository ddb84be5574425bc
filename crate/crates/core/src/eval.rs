//! Per-class precision/recall/F1, macro F1 and confusion matrices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::data::{ClassPools, DomainDataset};
use crate::embedding::{argmax, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InferenceRule {
    /// Argmax of the classifier head's softmax.
    Head,
    /// Nearest class centroid of the target-train embeddings.
    NearestAnchor,
}

impl InferenceRule {
    pub fn key(self) -> &'static str {
        match self {
            InferenceRule::Head => "head",
            InferenceRule::NearestAnchor => "anchor",
        }
    }
}

impl fmt::Display for InferenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for InferenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(InferenceRule::Head),
            "anchor" | "nearest-anchor" | "nearestanchor" => Ok(InferenceRule::NearestAnchor),
            _ => Err(Error::invalid("rule", format!("expected head or anchor, got `{s}`"))),
        }
    }
}

/// `c x c` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::new(num_classes);
        for (truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.num_classes {
                return Err(Error::InvalidLabel {
                    label,
                    num_classes: self.num_classes,
                });
            }
        }
        self.counts[truth * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, predicted)).sum()
    }

    /// `(tp, fp, fn)` for one class.
    pub fn class_counts(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.get(class, class);
        (tp, self.column_sum(class) - tp, self.row_sum(class) - tp)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.num_classes).map(|c| c.to_string()).collect();
        writeln!(w, "true\\pred,{}", header.join(","))?;
        for t in 0..self.num_classes {
            let row: Vec<String> = (0..self.num_classes).map(|p| self.get(t, p).to_string()).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `2tp / (2tp + fp + fn)`, or 0 when the denominator is 0.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    pub rule: InferenceRule,
    pub dataset_id: String,
    pub checkpoint_id: String,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, rule: InferenceRule) -> Self {
        let per_class: Vec<ClassMetrics> = (0..confusion.num_classes())
            .map(|c| {
                let (tp, fp, fn_) = confusion.class_counts(c);
                ClassMetrics {
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fn_),
                    f1: f1_from_counts(tp, fp, fn_),
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
        Self {
            per_class,
            macro_f1,
            confusion,
            rule,
            dataset_id: String::new(),
            checkpoint_id: String::new(),
        }
    }

    /// `class,precision,recall,f1` rows followed by `macro,,,<value>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "class,precision,recall,f1")?;
        for (c, m) in self.per_class.iter().enumerate() {
            writeln!(w, "{c},{},{},{}", m.precision, m.recall, m.f1)?;
        }
        writeln!(w, "macro,,,{}", self.macro_f1)
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Percent with one decimal, as used in human-readable tables.
pub fn percent(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

/// Evaluates on the dataset's target evaluation pool.
pub fn evaluate(network: &Network, dataset: &DomainDataset, rule: InferenceRule) -> Result<EvalReport> {
    evaluate_pool(network, dataset, dataset.target_eval(), rule)
}

/// Evaluates on an arbitrary class-indexed pool of `dataset` (e.g. the
/// source pool for sanity checks). Centroids for the nearest-anchor rule
/// always come from the dataset's target training pool.
pub fn evaluate_pool(
    network: &Network,
    dataset: &DomainDataset,
    pool: &ClassPools,
    rule: InferenceRule,
) -> Result<EvalReport> {
    if network.embedding.input_dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint input vs dataset",
            expected: network.embedding.input_dim(),
            found: dataset.dim(),
        });
    }
    if network.num_classes() != dataset.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint classes vs dataset",
            expected: network.num_classes(),
            found: dataset.num_classes(),
        });
    }
    if pool.len() != dataset.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "evaluation pool classes vs dataset",
            expected: dataset.num_classes(),
            found: pool.len(),
        });
    }
    if let Some(class) = pool.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClassPool { class, pool: "evaluation" });
    }
    let centroids = match rule {
        InferenceRule::Head => None,
        InferenceRule::NearestAnchor => Some(class_centroids(network, dataset)?),
    };
    let mut confusion = ConfusionMatrix::new(dataset.num_classes());
    for s in pool.iter().flatten() {
        let predicted = match &centroids {
            None => network.predict(&s.features)?,
            Some(centroids) => nearest_centroid(&network.embedding.forward(&s.features)?, centroids),
        };
        confusion.record(s.label, predicted)?;
    }
    Ok(EvalReport::from_confusion(confusion, rule))
}

/// Mean target-train embedding per class.
pub fn class_centroids(network: &Network, dataset: &DomainDataset) -> Result<Vec<Vec<f64>>> {
    dataset
        .target_train()
        .iter()
        .enumerate()
        .map(|(class, samples)| {
            if samples.is_empty() {
                return Err(Error::EmptyClassPool {
                    class,
                    pool: "target train",
                });
            }
            let mut sum = vec![0.0; network.embedding.output_dim()];
            for s in samples {
                for (acc, v) in sum.iter_mut().zip(network.embedding.forward(&s.features)?) {
                    *acc += v;
                }
            }
            Ok(sum.into_iter().map(|v| v / samples.len() as f64).collect())
        })
        .collect()
}

fn nearest_centroid(embedding: &[f64], centroids: &[Vec<f64>]) -> usize {
    let neg_dist: Vec<f64> = centroids
        .iter()
        .map(|c| -c.iter().zip(embedding).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    argmax(&neg_dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_counts() {
        assert_eq!(f1_from_counts(10, 0, 0), 1.0);
        assert_eq!(f1_from_counts(0, 5, 3), 0.0);
        assert_eq!(f1_from_counts(0, 0, 0), 0.0);
        assert!((f1_from_counts(7, 2, 5) - 14.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor() {
        let pairs = (0..30).map(|i| (i % 3, i % 3));
        let r = EvalReport::from_confusion(ConfusionMatrix::from_pairs(3, pairs).unwrap(), InferenceRule::Head);
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let pairs = (0..20).map(|i| (i % 2, 0));
        let r = EvalReport::from_confusion(ConfusionMatrix::from_pairs(2, pairs).unwrap(), InferenceRule::Head);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[0].recall, 1.0);
    }

    #[test]
    fn confusion_rejects_bad_labels() {
        assert!(ConfusionMatrix::from_pairs(2, [(0, 2)]).is_err());
    }

    #[test]
    fn csv_layout() {
        let pairs = [(0, 0), (1, 0), (1, 1)];
        let r = EvalReport::from_confusion(ConfusionMatrix::from_pairs(2, pairs).unwrap(), InferenceRule::Head);
        let csv = r.csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,precision,recall,f1");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("macro,,,"));
        let mut side = Vec::new();
        r.confusion.write_csv(&mut side).unwrap();
        assert_eq!(String::from_utf8(side).unwrap(), "true\\pred,0,1\n0,1,0\n1,1,1\n");
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.4774), "47.7");
        assert_eq!(percent(1.0), "100.0");
    }
}
