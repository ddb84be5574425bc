//! The five training regimes behind one entry point.
//!
//! Every regime runs single-sample SGD. A step draws one query uniformly
//! (with replacement) from the regime's eligible pool, evaluates the loss and
//! applies `sgd_step`. Random streams are derived from the run seed:
//!
//! | stream | tag | used for                      |
//! |--------|-----|-------------------------------|
//! | init   | 1   | network initialization        |
//! | query  | 2   | query selection               |
//! | anchor | 3   | anchor sampling (metric term) |
//! | tune   | 4   | head-only fine-tuning queries |
//!
//! Baseline and All-Train share the init and query streams, so with an
//! empty target training pool they produce identical networks.

use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::data::{DomainDataset, Sample};
use crate::embedding::{Network, ParameterGradient, DEFAULT_EMBEDDING_DIM, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::metric::{combined_loss, metric_loss, CombinedLossValue, DEFAULT_METRIC_WEIGHT};
use crate::rng::DetRng;
use crate::sampler::{check_probability, AnchorSampler, PooledSampler, PrioritizedSampler};

/// Stream tags for [`DetRng::stream`] under the run seed: initialization,
/// query draws, anchor draws, and the fine-tuning phase.
pub const INIT_STREAM: u64 = 1;
pub const QUERY_STREAM: u64 = 2;
pub const ANCHOR_STREAM: u64 = 3;
pub const TUNE_STREAM: u64 = 4;

pub const DEFAULT_EPOCHS: usize = 8;
pub const DEFAULT_HIDDEN: usize = 8;
/// Target-selection probability used when none is given.
pub const DEFAULT_P: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Baseline,
    Metric,
    AllTrain,
    FineTuned,
    Tmps,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Baseline,
        Regime::Metric,
        Regime::AllTrain,
        Regime::FineTuned,
        Regime::Tmps,
    ];

    /// Lower-case identifier used in files and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Metric => "metric",
            Regime::AllTrain => "alltrain",
            Regime::FineTuned => "finetuned",
            Regime::Tmps => "tmps",
        }
    }

    /// Whether the regime's behavior depends on `p`.
    pub fn uses_p(self) -> bool {
        self == Regime::Tmps
    }

    pub fn id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Baseline => "Baseline",
            Regime::Metric => "Metric",
            Regime::AllTrain => "All-Train",
            Regime::FineTuned => "Fine-Tuned",
            Regime::Tmps => "TMPS",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Regime::ALL
            .into_iter()
            .find(|r| r.key() == norm)
            .ok_or_else(|| Error::invalid("regime", format!("unknown regime `{s}`")))
    }
}

/// Keys read by [`TrainConfig::apply`].
pub const TRAIN_KEYS: [&str; 9] = [
    "regime",
    "epochs",
    "steps_per_epoch",
    "lr",
    "lambda",
    "p",
    "hidden",
    "embedding_dim",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    /// `None` means one pass worth of steps over the eligible pool.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    /// Weight of the metric term.
    pub lambda: f64,
    pub p: f64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Tmps,
            epochs: DEFAULT_EPOCHS,
            steps_per_epoch: None,
            learning_rate: DEFAULT_LEARNING_RATE,
            lambda: DEFAULT_METRIC_WEIGHT,
            p: DEFAULT_P,
            hidden: vec![DEFAULT_HIDDEN],
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability(self.p)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "lr",
                format!("must be finite and > 0, got {}", self.learning_rate),
            ));
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.embedding_dim))
            .collect()
    }

    /// Overrides fields from `kv`: `regime`, `epochs`, `steps_per_epoch`,
    /// `lr`, `lambda`, `p`, `hidden` (comma list, may be empty),
    /// `embedding_dim`, `seed`. Other keys are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(r) = kv.parsed("regime")? {
            self.regime = r;
        }
        if let Some(v) = kv.parsed("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.get("steps_per_epoch") {
            self.steps_per_epoch = match v {
                "" | "auto" => None,
                _ => kv.parsed("steps_per_epoch")?,
            };
        }
        if let Some(v) = kv.parsed("lr")? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.parsed("lambda")? {
            self.lambda = v;
        }
        if let Some(v) = kv.parsed("p")? {
            self.p = v;
        }
        if let Some(v) = kv.parsed_list("hidden")? {
            self.hidden = v;
        }
        if let Some(v) = kv.parsed("embedding_dim")? {
            self.embedding_dim = v;
        }
        if let Some(v) = kv.parsed("seed")? {
            self.seed = v;
        }
        Ok(())
    }

    /// Entries accepted by [`TrainConfig::apply`].
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("regime", self.regime.to_string());
        kv.set("epochs", self.epochs.to_string());
        kv.set(
            "steps_per_epoch",
            self.steps_per_epoch.map(|s| s.to_string()).unwrap_or_else(|| "auto".into()),
        );
        kv.set("lr", self.learning_rate.to_string());
        kv.set("lambda", self.lambda.to_string());
        kv.set("p", self.p.to_string());
        kv.set(
            "hidden",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv.set("embedding_dim", self.embedding_dim.to_string());
        kv.set("seed", self.seed.to_string());
        kv
    }

    pub fn with_regime(&self, regime: Regime) -> Self {
        Self {
            regime,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network,
    pub config: TrainConfig,
    /// Per-step training loss, in step order (both phases for Fine-Tuned).
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    /// Mean loss over the last epoch's worth of steps.
    pub fn final_loss(&self) -> Option<f64> {
        if self.loss_trace.is_empty() {
            return None;
        }
        let window = (self.loss_trace.len() / self.config.epochs.max(1)).max(1);
        let tail = &self.loss_trace[self.loss_trace.len() - window..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Loss and full parameter gradient for one training step.
///
/// The classification term uses the query only; the metric term (present
/// when `anchors` is given and `lambda > 0`) backpropagates into the query
/// and into every anchor embedding.
pub fn step_gradient(
    network: &Network,
    query: &[f64],
    label: usize,
    anchors: Option<&[&[f64]]>,
    lambda: f64,
) -> Result<(CombinedLossValue, ParameterGradient)> {
    let embedding = &network.embedding;
    let query_trace = embedding.forward_trace(query)?;
    let cls = network.head.loss(query_trace.output(), label)?;

    let mut grad = ParameterGradient::zeros_for(network);
    let combined = match anchors {
        Some(anchors) if lambda > 0.0 => {
            if anchors.len() != network.num_classes() {
                return Err(Error::DimensionMismatch {
                    context: "anchor set size",
                    expected: network.num_classes(),
                    found: anchors.len(),
                });
            }
            let traces = anchors
                .iter()
                .map(|a| embedding.forward_trace(a))
                .collect::<Result<Vec<_>>>()?;
            let anchor_embeddings: Vec<&[f64]> = traces.iter().map(|t| t.output()).collect();
            let metric = metric_loss(query_trace.output(), &anchor_embeddings, label)?;
            let combined = combined_loss(&cls, Some(&metric), lambda)?;
            for (trace, g) in traces.iter().zip(&combined.grad_anchors) {
                embedding.backward_trace(trace, g, &mut grad.embedding)?;
            }
            combined
        }
        _ => combined_loss(&cls, None, lambda)?,
    };
    embedding.backward_trace(&query_trace, &combined.grad_query, &mut grad.embedding)?;
    grad.head = combined.grad_head.clone();
    Ok((combined, grad))
}

pub fn train(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    match config.regime {
        Regime::Baseline => train_baseline(dataset, config),
        Regime::Metric => train_metric(dataset, config),
        Regime::AllTrain => train_alltrain(dataset, config),
        Regime::FineTuned => train_finetuned(dataset, config),
        Regime::Tmps => train_tmps(dataset, config),
    }
}

/// The network every regime starts from for `config.seed`.
pub fn initial_network(dataset: &DomainDataset, config: &TrainConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = DetRng::stream(config.seed, INIT_STREAM);
    Network::new(&config.layer_dims(dataset.dim()), dataset.num_classes(), &mut rng)
}

fn flatten<'a>(pools: impl IntoIterator<Item = &'a Vec<Sample>>) -> Vec<&'a Sample> {
    pools.into_iter().flatten().collect()
}

fn union_queries(dataset: &DomainDataset) -> Vec<&Sample> {
    flatten(dataset.source().iter().chain(dataset.target_train()))
}

fn run_sgd<'a>(
    network: &mut Network,
    queries: &[&Sample],
    mut sampler: Option<&mut dyn AnchorSampler<'a>>,
    config: &TrainConfig,
    query_rng: &mut DetRng,
    trace: &mut Vec<f64>,
) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::EmptyPool { pool: "query" });
    }
    let steps = config.steps_per_epoch.unwrap_or(queries.len());
    for epoch in 0..config.epochs {
        for step in 0..steps {
            let query = queries[query_rng.index(queries.len())];
            let anchor_set = match sampler.as_deref_mut() {
                Some(s) => Some(s.sample_anchor_set()?),
                None => None,
            };
            let anchor_features: Option<Vec<&[f64]>> = anchor_set
                .as_ref()
                .map(|set| set.iter().map(|a| a.features.as_slice()).collect());
            let (loss, grad) = step_gradient(
                network,
                &query.features,
                query.label,
                anchor_features.as_deref(),
                config.lambda,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "{} loss at epoch {epoch} step {step} (query id {})",
                        config.regime, query.id
                    ),
                });
            }
            network.sgd_step(&grad, config.learning_rate)?;
            trace.push(loss.total);
        }
    }
    Ok(())
}

/// Classification on the source pool only. Never touches the target pools.
pub fn train_baseline(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    let mut network = initial_network(dataset, config)?;
    let queries = flatten(dataset.source());
    let mut trace = Vec::new();
    let mut rng = DetRng::stream(config.seed, QUERY_STREAM);
    run_sgd(&mut network, &queries, None, config, &mut rng, &mut trace)?;
    Ok(TrainedModel {
        network,
        config: config.with_regime(Regime::Baseline),
        loss_trace: trace,
    })
}

/// Classification on the union of source and target training pools.
pub fn train_alltrain(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    let mut network = initial_network(dataset, config)?;
    let queries = union_queries(dataset);
    let mut trace = Vec::new();
    let mut rng = DetRng::stream(config.seed, QUERY_STREAM);
    run_sgd(&mut network, &queries, None, config, &mut rng, &mut trace)?;
    Ok(TrainedModel {
        network,
        config: config.with_regime(Regime::AllTrain),
        loss_trace: trace,
    })
}

/// Combined loss with anchors drawn uniformly from each class's union pool.
pub fn train_metric(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    let mut network = initial_network(dataset, config)?;
    let queries = union_queries(dataset);
    let mut sampler = PooledSampler::for_dataset(dataset, DetRng::stream(config.seed, ANCHOR_STREAM))?;
    let mut trace = Vec::new();
    let mut rng = DetRng::stream(config.seed, QUERY_STREAM);
    run_sgd(&mut network, &queries, Some(&mut sampler), config, &mut rng, &mut trace)?;
    Ok(TrainedModel {
        network,
        config: config.with_regime(Regime::Metric),
        loss_trace: trace,
    })
}

/// Combined loss with anchors from the prioritized sampler.
pub fn train_tmps(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    check_probability(config.p)?;
    if config.p > 0.0 {
        if let Some(class) = dataset.target_train().iter().position(Vec::is_empty) {
            return Err(Error::EmptyClassPool {
                class,
                pool: "target train",
            });
        }
    }
    let mut network = initial_network(dataset, config)?;
    let queries = union_queries(dataset);
    let mut sampler =
        PrioritizedSampler::for_dataset(dataset, config.p, DetRng::stream(config.seed, ANCHOR_STREAM))?;
    let mut trace = Vec::new();
    let mut rng = DetRng::stream(config.seed, QUERY_STREAM);
    run_sgd(&mut network, &queries, Some(&mut sampler), config, &mut rng, &mut trace)?;
    Ok(TrainedModel {
        network,
        config: config.with_regime(Regime::Tmps),
        loss_trace: trace,
    })
}

/// Baseline training followed by head-only training on the target pool.
pub fn train_finetuned(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainedModel> {
    let targets = flatten(dataset.target_train());
    if targets.is_empty() {
        return Err(Error::EmptyPool { pool: "target train" });
    }
    let base = train_baseline(dataset, config)?;
    let mut tuned = finetune_head(base.network, &targets, config)?;
    let mut trace = base.loss_trace;
    trace.append(&mut tuned.1);
    Ok(TrainedModel {
        network: tuned.0,
        config: config.with_regime(Regime::FineTuned),
        loss_trace: trace,
    })
}

/// Trains only the classifier head of `network` on `queries`; the embedding
/// parameters are left bit-for-bit untouched.
pub fn finetune_head(mut network: Network, queries: &[&Sample], config: &TrainConfig) -> Result<(Network, Vec<f64>)> {
    if queries.is_empty() {
        return Err(Error::EmptyPool { pool: "target train" });
    }
    let embeddings = queries
        .iter()
        .map(|q| network.embedding.forward(&q.features))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = DetRng::stream(config.seed, TUNE_STREAM);
    let steps = config.steps_per_epoch.unwrap_or(queries.len());
    let mut trace = Vec::with_capacity(steps * config.epochs);
    for epoch in 0..config.epochs {
        for step in 0..steps {
            let i = rng.index(queries.len());
            let cls = network.head.loss(&embeddings[i], queries[i].label)?;
            if !cls.loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("fine-tuning loss at epoch {epoch} step {step}"),
                });
            }
            network.sgd_step_head(&cls.grad_head, config.learning_rate)?;
            trace.push(cls.loss);
        }
    }
    Ok((network, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.key().parse::<Regime>().unwrap(), r);
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("All-Train".parse::<Regime>().unwrap(), Regime::AllTrain);
        assert!("nope".parse::<Regime>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        assert!(TrainConfig { p: 1.3, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert_eq!(ok.layer_dims(20), vec![20, 8, 16]);
    }

    #[test]
    fn key_values_round_trip() {
        let config = TrainConfig {
            regime: Regime::FineTuned,
            steps_per_epoch: Some(12),
            hidden: vec![8, 4],
            seed: 99,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        back.apply(&config.to_key_values()).unwrap();
        assert_eq!(back, config);
        let mut none = TrainConfig::default();
        none.apply(&KeyValues::parse("hidden=\n").unwrap()).unwrap();
        assert!(none.hidden.is_empty());
    }

    #[test]
    fn step_gradient_without_anchors_is_classification_only() {
        let mut rng = DetRng::new(3);
        let net = Network::new(&[3, 4, 2], 3, &mut rng).unwrap();
        let x = [0.1, 0.2, 0.3];
        let anchors: Vec<&[f64]> = vec![&x, &x, &x];
        let (a, ga) = step_gradient(&net, &x, 1, None, 1.0).unwrap();
        let (b, gb) = step_gradient(&net, &x, 1, Some(&anchors), 0.0).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(ga, gb);
    }
}
