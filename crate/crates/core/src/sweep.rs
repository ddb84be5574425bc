//! Multi-seed sweeps over training regimes and target-selection probabilities.
//!
//! A sweep trains and evaluates one cell per `(regime, p, seed)`; regimes that
//! ignore `p` get a single cell per seed. Cells are independent and may run
//! in parallel. Seeds are derived with SplitMix64 chains:
//!
//! ```text
//! split_seed(master, seed)              = sm(sm(master ^ SPLIT_TAG) ^ seed)
//! cell_seed(master, regime, p_idx, seed) = sm(sm(sm(sm(master) ^ regime_id) ^ p_idx) ^ seed)
//! ```
//!
//! where `sm` is [`splitmix64`] and `regime_id` is 1..=5 in the order
//! Baseline, Metric, All-Train, Fine-Tuned, TMPS. The target split depends
//! only on the seed, so every regime sees the same split for a given seed;
//! the network initialization and sampling streams depend on the full cell.
//! Adding `p` values does not move existing cells.

use std::io::Write;

use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::{DomainDataset, LabeledPool, DEFAULT_TARGET_PER_CLASS};
use crate::embedding::checkpoint_bytes;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, InferenceRule};
use crate::rng::splitmix64;
use crate::sampler::check_probability;
use crate::train::{train, Regime, TrainConfig};

const SPLIT_TAG: u64 = 0x5350_4c49_54;

pub fn split_seed(master: u64, seed: u64) -> u64 {
    splitmix64(splitmix64(master ^ SPLIT_TAG) ^ seed)
}

pub fn cell_seed(master: u64, regime: Regime, p_index: usize, seed: u64) -> u64 {
    let h = splitmix64(master);
    let h = splitmix64(h ^ regime.id());
    let h = splitmix64(h ^ p_index as u64);
    splitmix64(h ^ seed)
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_p_values() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Keys read by [`SweepSpec::apply`] in addition to the training keys.
pub const SWEEP_KEYS: [&str; 7] = ["p_values", "seeds", "regimes", "rule", "jobs", "k", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub p_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub regimes: Vec<Regime>,
    /// Shared training settings; `regime`, `p` and `seed` are set per cell.
    pub train: TrainConfig,
    pub master_seed: u64,
    pub k: usize,
    pub rule: InferenceRule,
    pub jobs: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            p_values: default_p_values(),
            seeds: (0..5).collect(),
            regimes: Regime::ALL.to_vec(),
            train: TrainConfig::default(),
            master_seed: 0,
            k: DEFAULT_TARGET_PER_CLASS,
            rule: InferenceRule::Head,
            jobs: 1,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.iter().any(|r| r.uses_p()) && self.p_values.is_empty() {
            return Err(Error::invalid("p_values", "at least one value is required"));
        }
        for &p in &self.p_values {
            check_probability(p)?;
        }
        if self.p_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("p_values", "must be strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        if self.regimes.is_empty() {
            return Err(Error::invalid("regimes", "at least one regime is required"));
        }
        let mut sorted = self.regimes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.regimes.len() {
            return Err(Error::invalid("regimes", "duplicate regime"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs", "must be at least 1"));
        }
        self.train.validate()
    }

    /// Overrides fields from `kv`: `p_values`, `seeds`, `regimes`, `rule`,
    /// `jobs`, `k`, `seed` (master seed), and the training keys.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        self.train.apply(kv)?;
        if let Some(v) = kv.parsed_list("p_values")? {
            self.p_values = v;
        }
        if let Some(v) = kv.parsed_list("seeds")? {
            self.seeds = v;
        }
        if let Some(v) = kv.parsed_list("regimes")? {
            self.regimes = v;
        }
        if let Some(v) = kv.parsed("rule")? {
            self.rule = v;
        }
        if let Some(v) = kv.parsed("jobs")? {
            self.jobs = v;
        }
        if let Some(v) = kv.parsed("k")? {
            self.k = v;
        }
        if let Some(v) = kv.parsed("seed")? {
            self.master_seed = v;
        }
        Ok(())
    }

    /// All cells in output order: regimes as listed, then `p`, then seed.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &regime in &self.regimes {
            let ps: Vec<Option<f64>> = if regime.uses_p() {
                self.p_values.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for (p_index, p) in ps.into_iter().enumerate() {
                for &seed in &self.seeds {
                    cells.push(CellKey {
                        regime,
                        p_index,
                        p,
                        seed,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellKey {
    pub regime: Regime,
    pub p_index: usize,
    /// `None` for regimes that ignore `p`.
    pub p: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub key: CellKey,
    pub train_seed: u64,
    pub outcome: std::result::Result<CellOutput, String>,
}

#[derive(Clone, Debug)]
pub struct CellOutput {
    pub report: EvalReport,
    pub checkpoint: Vec<u8>,
    pub final_loss: Option<f64>,
}

impl CellResult {
    pub fn macro_f1(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.report.macro_f1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub regime: Regime,
    pub p: Option<f64>,
    pub mean_macro_f1: f64,
    /// Sample standard deviation (n - 1); 0 for a single seed.
    pub std_macro_f1: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub rows: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn failed_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    pub fn row(&self, regime: Regime, p: Option<f64>) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.regime == regime && r.p == p)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cell(spec: &SweepSpec, datasets: &[(u64, DomainDataset)], key: CellKey) -> CellResult {
    let train_seed = cell_seed(spec.master_seed, key.regime, key.p_index, key.seed);
    let dataset = &datasets
        .iter()
        .find(|(s, _)| *s == key.seed)
        .expect("dataset prepared for every seed")
        .1;
    let config = TrainConfig {
        regime: key.regime,
        p: key.p.unwrap_or(spec.train.p),
        seed: train_seed,
        ..spec.train.clone()
    };
    let outcome = train(dataset, &config)
        .and_then(|model| {
            let mut report = evaluate(&model.network, dataset, spec.rule)?;
            let checkpoint = checkpoint_bytes(&model.network);
            report.checkpoint_id = crate::checksum(&checkpoint);
            Ok(CellOutput {
                report,
                checkpoint,
                final_loss: model.final_loss(),
            })
        })
        .map_err(|e| e.to_string());
    CellResult {
        key,
        train_seed,
        outcome,
    }
}

/// Trains and evaluates every cell of `spec` on splits of `pool`. Failing
/// cells are recorded and do not stop the sweep; a split failure does.
pub fn run_sweep(spec: &SweepSpec, pool: &LabeledPool) -> Result<SweepResult> {
    spec.validate()?;
    let datasets = spec
        .seeds
        .iter()
        .map(|&seed| Ok((seed, pool.split(spec.k, split_seed(spec.master_seed, seed))?)))
        .collect::<Result<Vec<_>>>()?;
    let keys = spec.cells();
    let cells: Vec<CellResult> = if spec.jobs == 1 {
        keys.into_iter().map(|k| run_cell(spec, &datasets, k)).collect()
    } else {
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::invalid("jobs", e.to_string()))?;
        workers.install(|| keys.into_par_iter().map(|k| run_cell(spec, &datasets, k)).collect())
    };
    let rows = aggregate(&cells);
    Ok(SweepResult { cells, rows })
}

/// One row per `(regime, p)` in first-appearance order, over successful cells.
pub fn aggregate(cells: &[CellResult]) -> Vec<AggregateRow> {
    let mut groups: Vec<(Regime, Option<f64>, Vec<f64>)> = Vec::new();
    for cell in cells {
        let idx = match groups
            .iter()
            .position(|(r, p, _)| *r == cell.key.regime && *p == cell.key.p)
        {
            Some(i) => i,
            None => {
                groups.push((cell.key.regime, cell.key.p, Vec::new()));
                groups.len() - 1
            }
        };
        if let Some(f1) = cell.macro_f1() {
            groups[idx].2.push(f1);
        }
    }
    groups
        .into_iter()
        .map(|(regime, p, values)| {
            let (mean, std) = mean_std(&values);
            AggregateRow {
                regime,
                p,
                mean_macro_f1: mean,
                std_macro_f1: std,
                n_seeds: values.len(),
            }
        })
        .collect()
}

fn p_field(p: Option<f64>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

/// `regime,p,mean_macro_f1,std_macro_f1,n_seeds`; `p` is empty for regimes
/// that ignore it.
pub fn write_summary_csv<W: Write>(rows: &[AggregateRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "regime,p,mean_macro_f1,std_macro_f1,n_seeds")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.regime.key(),
            p_field(r.p),
            r.mean_macro_f1,
            r.std_macro_f1,
            r.n_seeds
        )?;
    }
    Ok(())
}

/// One row per cell:
/// `regime,p,seed,train_seed,status,macro_f1,checkpoint_sha256,f1_0..f1_{c-1},error`.
pub fn write_cells_csv<W: Write>(cells: &[CellResult], num_classes: usize, mut w: W) -> std::io::Result<()> {
    let class_cols: Vec<String> = (0..num_classes).map(|c| format!("f1_{c}")).collect();
    writeln!(
        w,
        "regime,p,seed,train_seed,status,macro_f1,checkpoint_sha256,{},error",
        class_cols.join(",")
    )?;
    for cell in cells {
        let prefix = format!(
            "{},{},{},{}",
            cell.key.regime.key(),
            p_field(cell.key.p),
            cell.key.seed,
            cell.train_seed
        );
        match &cell.outcome {
            Ok(out) => {
                let f1s: Vec<String> = out.report.per_class.iter().map(|m| m.f1.to_string()).collect();
                writeln!(
                    w,
                    "{prefix},ok,{},{},{},",
                    out.report.macro_f1, out.report.checkpoint_id,
                    f1s.join(",")
                )?;
            }
            Err(msg) => {
                let blanks = vec![""; num_classes].join(",");
                let msg = msg.replace([',', '\n'], ";");
                writeln!(w, "{prefix},failed,,,{blanks},{msg}")?;
            }
        }
    }
    Ok(())
}

/// A row of `cells.csv` as read back for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub regime: Regime,
    pub p: Option<f64>,
    pub seed: u64,
    pub macro_f1: Option<f64>,
    pub class_f1: Vec<f64>,
}

pub fn read_cells_csv(text: &str) -> Result<Vec<CellRecord>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, h)| h)
        .ok_or_else(|| Error::parse(1, "empty cells file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let class_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("f1_"))
        .map(|(i, _)| i)
        .collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::parse(1, format!("missing column `{name}`")))
    };
    let (ri, pi, si, sti, mi) = (col("regime")?, col("p")?, col("seed")?, col("status")?, col("macro_f1")?);
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let field = |i: usize| fields.get(i).copied().ok_or_else(|| Error::parse(lineno, "short row"));
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::parse(lineno, format!("bad number `{s}`")))
        };
        let regime: Regime = field(ri)?.parse().map_err(|_| Error::parse(lineno, "bad regime"))?;
        let p = match field(pi)? {
            "" => None,
            s => Some(num(s)?),
        };
        let seed = field(si)?
            .parse()
            .map_err(|_| Error::parse(lineno, "bad seed"))?;
        let ok = field(sti)? == "ok";
        let macro_f1 = if ok { Some(num(field(mi)?)?) } else { None };
        let class_f1 = if ok {
            class_cols
                .iter()
                .map(|&i| num(field(i)?))
                .collect::<Result<Vec<f64>>>()?
        } else {
            Vec::new()
        };
        records.push(CellRecord {
            regime,
            p,
            seed,
            macro_f1,
            class_f1,
        });
    }
    Ok(records)
}
