//! Per-class anchor selection.
//!
//! [`PrioritizedSampler`] picks each class anchor from the target training
//! pool with probability `p` and from the source pool otherwise. Each call to
//! `sample_anchor` consumes one Bernoulli draw and then one uniform index
//! draw from the sampler's own stream, in that order.
//!
//! [`PooledSampler`] is the conventional alternative: uniform over the union
//! of both pools, which behaves like the prioritized rule with a per-class
//! `p = |target| / (|source| + |target|)`.

use crate::data::{ClassPools, DomainDataset, Sample};
use crate::error::{Error, Result};
use crate::rng::DetRng;

pub trait AnchorSampler<'a> {
    fn num_classes(&self) -> usize;

    fn sample_anchor(&mut self, class: usize) -> Result<&'a Sample>;

    /// One anchor per class, drawn in class order.
    fn sample_anchor_set(&mut self) -> Result<Vec<&'a Sample>> {
        (0..self.num_classes()).map(|c| self.sample_anchor(c)).collect()
    }
}

pub struct PrioritizedSampler<'a> {
    p: f64,
    rng: DetRng,
    source: &'a ClassPools,
    target: &'a ClassPools,
}

pub fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid("p", format!("must lie in [0, 1], got {p}")))
    }
}

impl<'a> PrioritizedSampler<'a> {
    pub fn new(p: f64, rng: DetRng, source: &'a ClassPools, target: &'a ClassPools) -> Result<Self> {
        check_probability(p)?;
        if source.len() != target.len() {
            return Err(Error::DimensionMismatch {
                context: "sampler class pools",
                expected: source.len(),
                found: target.len(),
            });
        }
        Ok(Self {
            p,
            rng,
            source,
            target,
        })
    }

    pub fn for_dataset(dataset: &'a DomainDataset, p: f64, rng: DetRng) -> Result<Self> {
        Self::new(p, rng, dataset.source(), dataset.target_train())
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl<'a> AnchorSampler<'a> for PrioritizedSampler<'a> {
    fn num_classes(&self) -> usize {
        self.source.len()
    }

    fn sample_anchor(&mut self, class: usize) -> Result<&'a Sample> {
        let source = self.source.get(class).ok_or(Error::InvalidLabel {
            label: class,
            num_classes: self.source.len(),
        })?;
        let target = &self.target[class];
        if source.is_empty() {
            return Err(Error::EmptyClassPool {
                class,
                pool: "source",
            });
        }
        if self.p > 0.0 && target.is_empty() {
            return Err(Error::EmptyClassPool {
                class,
                pool: "target train",
            });
        }
        let pool = if self.rng.bernoulli(self.p) { target } else { source };
        Ok(&pool[self.rng.index(pool.len())])
    }
}

pub struct PooledSampler<'a> {
    rng: DetRng,
    source: &'a ClassPools,
    target: &'a ClassPools,
}

impl<'a> PooledSampler<'a> {
    pub fn new(rng: DetRng, source: &'a ClassPools, target: &'a ClassPools) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::DimensionMismatch {
                context: "sampler class pools",
                expected: source.len(),
                found: target.len(),
            });
        }
        Ok(Self { rng, source, target })
    }

    pub fn for_dataset(dataset: &'a DomainDataset, rng: DetRng) -> Result<Self> {
        Self::new(rng, dataset.source(), dataset.target_train())
    }

    /// Probability that an anchor for `class` comes from the target pool.
    pub fn effective_target_probability(&self, class: usize) -> f64 {
        let t = self.target[class].len();
        let total = t + self.source[class].len();
        if total == 0 {
            0.0
        } else {
            t as f64 / total as f64
        }
    }
}

impl<'a> AnchorSampler<'a> for PooledSampler<'a> {
    fn num_classes(&self) -> usize {
        self.source.len()
    }

    fn sample_anchor(&mut self, class: usize) -> Result<&'a Sample> {
        let source = self.source.get(class).ok_or(Error::InvalidLabel {
            label: class,
            num_classes: self.source.len(),
        })?;
        let target = &self.target[class];
        let total = source.len() + target.len();
        if total == 0 {
            return Err(Error::EmptyClassPool {
                class,
                pool: "source+target",
            });
        }
        let i = self.rng.index(total);
        Ok(if i < source.len() {
            &source[i]
        } else {
            &target[i - source.len()]
        })
    }
}
