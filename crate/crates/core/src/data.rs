//! Samples, domain-tagged class pools and the source/target split policy.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Default number of labeled target samples per class used for training.
pub const DEFAULT_TARGET_PER_CLASS: usize = 10;

const SPLIT_STREAM: u64 = 0x5350_4c49_54; // "SPLIT"

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn code(self) -> char {
        match self {
            Domain::Source => 'S',
            Domain::Target => 'T',
        }
    }
}

/// A labeled feature vector. `id` is assigned at ingestion and is the only
/// notion of identity used by leakage checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: Domain,
}

/// Per-class sample lists, indexed by class.
pub type ClassPools = Vec<Vec<Sample>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub source: usize,
    pub target_train: usize,
    pub target_eval: usize,
}

/// Everything read from a dataset file before the target pool is split.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPool {
    pub num_classes: usize,
    pub dim: usize,
    pub source: ClassPools,
    pub target: ClassPools,
    /// Comment lines (without the leading `#`) carried along for provenance.
    pub provenance: Vec<String>,
}

impl LabeledPool {
    /// Splits the target pool into `k` training samples per class and an
    /// evaluation remainder.
    pub fn split(&self, k: usize, seed: u64) -> Result<DomainDataset> {
        let (train, eval) = split_target(&self.target, k, seed)?;
        DomainDataset::new(
            self.num_classes,
            self.dim,
            self.source.clone(),
            train,
            eval,
        )
    }

    pub fn sample_count(&self) -> usize {
        self.source.iter().chain(&self.target).map(Vec::len).sum()
    }
}

/// Class-indexed source pool plus disjoint target train/eval pools.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    num_classes: usize,
    dim: usize,
    source: ClassPools,
    target_train: ClassPools,
    target_eval: ClassPools,
}

impl DomainDataset {
    pub fn new(
        num_classes: usize,
        dim: usize,
        source: ClassPools,
        target_train: ClassPools,
        target_eval: ClassPools,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "feature dimension must be positive"));
        }
        check_pools(&source, num_classes, dim, Domain::Source, "source")?;
        check_pools(&target_train, num_classes, dim, Domain::Target, "target train")?;
        check_pools(&target_eval, num_classes, dim, Domain::Target, "target eval")?;
        for (class, pool) in source.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::EmptyClassPool {
                    class,
                    pool: "source",
                });
            }
        }
        let train_ids: HashSet<u64> = target_train.iter().flatten().map(|s| s.id).collect();
        if let Some(s) = target_eval
            .iter()
            .flatten()
            .find(|s| train_ids.contains(&s.id))
        {
            return Err(Error::Leakage { id: s.id });
        }
        Ok(Self {
            num_classes,
            dim,
            source,
            target_train,
            target_eval,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &ClassPools {
        &self.source
    }

    pub fn target_train(&self) -> &ClassPools {
        &self.target_train
    }

    pub fn target_eval(&self) -> &ClassPools {
        &self.target_eval
    }

    /// Same source pool, with both target pools emptied.
    pub fn without_target(&self) -> Self {
        Self {
            target_train: vec![Vec::new(); self.num_classes],
            target_eval: vec![Vec::new(); self.num_classes],
            ..self.clone()
        }
    }

    /// Same source and eval pools, with the target training pool emptied.
    pub fn without_target_train(&self) -> Self {
        Self {
            target_train: vec![Vec::new(); self.num_classes],
            ..self.clone()
        }
    }

    /// Replaces the target pools, re-running all validation.
    pub fn with_target(&self, target_train: ClassPools, target_eval: ClassPools) -> Result<Self> {
        Self::new(
            self.num_classes,
            self.dim,
            self.source.clone(),
            target_train,
            target_eval,
        )
    }

    pub fn class_counts(&self) -> Vec<ClassCounts> {
        class_counts(self)
    }

    /// Re-merges the target pools into an unsplit [`LabeledPool`], ordered by id.
    pub fn to_pool(&self) -> LabeledPool {
        let target = self
            .target_train
            .iter()
            .zip(&self.target_eval)
            .map(|(train, eval)| {
                let mut merged: Vec<Sample> = train.iter().chain(eval).cloned().collect();
                merged.sort_by_key(|s| s.id);
                merged
            })
            .collect();
        LabeledPool {
            num_classes: self.num_classes,
            dim: self.dim,
            source: self.source.clone(),
            target,
            provenance: Vec::new(),
        }
    }
}

fn check_pools(
    pools: &ClassPools,
    num_classes: usize,
    dim: usize,
    domain: Domain,
    pool: &'static str,
) -> Result<()> {
    if pools.len() != num_classes {
        return Err(Error::DimensionMismatch {
            context: "class pool count",
            expected: num_classes,
            found: pools.len(),
        });
    }
    for (class, samples) in pools.iter().enumerate() {
        for s in samples {
            if s.label != class {
                return Err(Error::InvalidLabel {
                    label: s.label,
                    num_classes,
                });
            }
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "sample features",
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if s.domain != domain {
                return Err(Error::WrongDomain {
                    id: s.id,
                    found: s.domain,
                    pool,
                });
            }
        }
    }
    Ok(())
}

/// Draws `k` samples per class without replacement for training and leaves
/// the rest for evaluation. Both halves are returned in id order.
///
/// Classes are processed in index order from a single stream derived from
/// `seed`; within a class the first `k` positions of a partial Fisher-Yates
/// shuffle form the training set.
pub fn split_target(pool: &[Vec<Sample>], k: usize, seed: u64) -> Result<(ClassPools, ClassPools)> {
    let mut rng = DetRng::stream(seed, SPLIT_STREAM);
    let mut train = Vec::with_capacity(pool.len());
    let mut eval = Vec::with_capacity(pool.len());
    for (class, samples) in pool.iter().enumerate() {
        if samples.len() < k + 1 {
            return Err(Error::InsufficientTargetSamples {
                class,
                available: samples.len(),
                required: k + 1,
            });
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in 0..k {
            let j = i + rng.index(order.len() - i);
            order.swap(i, j);
        }
        let mut picked: Vec<Sample> = order[..k].iter().map(|&i| samples[i].clone()).collect();
        let mut rest: Vec<Sample> = order[k..].iter().map(|&i| samples[i].clone()).collect();
        picked.sort_by_key(|s| s.id);
        rest.sort_by_key(|s| s.id);
        train.push(picked);
        eval.push(rest);
    }
    Ok((train, eval))
}

pub fn class_counts(dataset: &DomainDataset) -> Vec<ClassCounts> {
    (0..dataset.num_classes)
        .map(|c| ClassCounts {
            source: dataset.source[c].len(),
            target_train: dataset.target_train[c].len(),
            target_eval: dataset.target_eval[c].len(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset file format
//
//   tmps-dataset v1,dim=D,classes=c
//   # optional comment lines
//   S,label,f0,...,f{D-1}
//   T,label,f0,...,f{D-1}
//
// Sample ids are assigned by data-row order. Labels are mapped densely onto
// 0..c-1 in ascending order of their file values.
// ---------------------------------------------------------------------------

pub const DATASET_MAGIC: &str = "tmps-dataset v1";

pub struct DatasetHeader {
    pub dim: usize,
    pub num_classes: usize,
}

impl fmt::Display for DatasetHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{DATASET_MAGIC},dim={},classes={}", self.dim, self.num_classes)
    }
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let mut parts = line.trim_end().split(',');
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(Error::parse(1, format!("expected header starting with `{DATASET_MAGIC}`")));
    }
    let mut dim = None;
    let mut classes = None;
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field `{part}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::parse(1, format!("header field `{key}` is not a count")))?;
        match key {
            "dim" => dim = Some(value),
            "classes" => classes = Some(value),
            other => return Err(Error::parse(1, format!("unknown header field `{other}`"))),
        }
    }
    match (dim, classes) {
        (Some(dim), Some(num_classes)) if dim > 0 && num_classes >= 2 => {
            Ok(DatasetHeader { dim, num_classes })
        }
        _ => Err(Error::parse(1, "header needs dim >= 1 and classes >= 2")),
    }
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<LabeledPool> {
    let mut lines = reader.lines();
    let first = match lines.next() {
        Some(line) => line.map_err(|e| Error::parse(1, e.to_string()))?,
        None => return Err(Error::parse(1, "empty dataset file")),
    };
    let header = parse_header(&first)?;
    let dim = header.dim;

    let mut provenance = Vec::new();
    let mut rows: Vec<(Domain, u64, Vec<f64>)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            provenance.push(comment.trim().to_string());
            continue;
        }
        let mut fields = line.split(',');
        let domain = match fields.next() {
            Some("S") => Domain::Source,
            Some("T") => Domain::Target,
            other => {
                return Err(Error::parse(
                    lineno,
                    format!("domain must be S or T, found `{}`", other.unwrap_or("")),
                ))
            }
        };
        let label: u64 = fields
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::parse(lineno, "missing or malformed label"))?;
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("bad feature value `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(Error::parse(
                lineno,
                format!("dimension mismatch: header says {dim}, row has {}", features.len()),
            ));
        }
        rows.push((domain, label, features));
    }

    let mut dense = BTreeMap::new();
    for (_, label, _) in &rows {
        dense.entry(*label).or_insert(0usize);
    }
    if dense.len() != header.num_classes {
        return Err(Error::parse(
            1,
            format!(
                "header declares {} classes but {} distinct labels are present",
                header.num_classes,
                dense.len()
            ),
        ));
    }
    for (i, v) in dense.values_mut().enumerate() {
        *v = i;
    }

    let mut source = vec![Vec::new(); header.num_classes];
    let mut target = vec![Vec::new(); header.num_classes];
    for (id, (domain, label, features)) in rows.into_iter().enumerate() {
        let label = dense[&label];
        let sample = Sample {
            id: id as u64,
            features,
            label,
            domain,
        };
        match domain {
            Domain::Source => source[label].push(sample),
            Domain::Target => target[label].push(sample),
        }
    }
    Ok(LabeledPool {
        num_classes: header.num_classes,
        dim,
        source,
        target,
        provenance,
    })
}

/// Writes `pool` in id order so that reading it back reassigns the same ids.
pub fn write_dataset<W: Write>(pool: &LabeledPool, mut w: W) -> std::io::Result<()> {
    let header = DatasetHeader {
        dim: pool.dim,
        num_classes: pool.num_classes,
    };
    writeln!(w, "{header}")?;
    for line in &pool.provenance {
        writeln!(w, "# {line}")?;
    }
    let mut all: Vec<&Sample> = pool.source.iter().chain(&pool.target).flatten().collect();
    all.sort_by_key(|s| s.id);
    let mut row = String::new();
    for s in all {
        row.clear();
        row.push(s.domain.code());
        row.push(',');
        row.push_str(&s.label.to_string());
        for v in &s.features {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn load_dataset(path: &std::path::Path) -> Result<LabeledPool> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file))
}

pub fn save_dataset(pool: &LabeledPool, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(pool, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
