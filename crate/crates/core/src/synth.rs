//! Synthetic source/target datasets with a controllable domain gap.
//!
//! The first `dim - nuisance_dims` coordinates are informative: class means
//! are Gaussian with per-coordinate variance `s^2 / (2 * informative)`, so two
//! means are `s` apart in expectation (root mean square). The remaining
//! `nuisance_dims` coordinates carry no class signal.
//!
//! Source samples are `mean + N(0, noise^2)` on informative coordinates and
//! pure noise on nuisance coordinates. Target samples apply one affine map to
//! every class mean: a per-coordinate scale `1 + 0.25 * tanh(shift / s) * u`
//! with `u ~ U(-1, 1)`, then a translation of length `shift` along a random
//! direction. Target nuisance coordinates get a class-independent offset of
//! length `s` along a random direction, plus noise.

use crate::config::KeyValues;
use crate::data::{Domain, DomainDataset, LabeledPool, Sample};
use crate::error::{Error, Result};
use crate::rng::DetRng;

const GEN_STREAM: u64 = 0x5359_4e54_48; // "SYNTH"
const SCALE_SPREAD: f64 = 0.25;

/// Shift of the frozen benchmark: four class separations, large enough that
/// the source-only baseline loses well over 20 macro-F1 points on the target.
pub const BENCHMARK_SHIFT: f64 = 24.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_train_per_class: usize,
    pub target_eval_per_class: usize,
    /// Typical distance between class means.
    pub separation: f64,
    /// Length of the target translation.
    pub shift: f64,
    pub nuisance_dims: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The frozen benchmark configuration.
    fn default() -> Self {
        Self {
            num_classes: 5,
            dim: 20,
            source_per_class: 500,
            target_train_per_class: 10,
            target_eval_per_class: 200,
            separation: 6.0,
            shift: BENCHMARK_SHIFT,
            nuisance_dims: 6,
            noise: 1.0,
            seed: 0,
        }
    }
}

pub const SYNTH_KEYS: [&str; 10] = [
    "classes",
    "dim",
    "source_per_class",
    "k",
    "eval_per_class",
    "separation",
    "shift",
    "nuisance_dims",
    "noise",
    "seed",
];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("classes", "need at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if self.nuisance_dims >= self.dim {
            return Err(Error::invalid(
                "nuisance_dims",
                format!("must leave at least one informative dimension (dim = {})", self.dim),
            ));
        }
        if self.source_per_class == 0 {
            return Err(Error::invalid("source_per_class", "must be positive"));
        }
        if self.target_eval_per_class == 0 {
            return Err(Error::invalid("eval_per_class", "must be positive"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation", "must be finite and > 0"));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::invalid("shift", "must be finite and >= 0"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Overrides fields from `kv`; keys not in [`SYNTH_KEYS`] are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        macro_rules! take {
            ($key:literal, $field:ident) => {
                if let Some(v) = kv.parsed($key)? {
                    self.$field = v;
                }
            };
        }
        take!("classes", num_classes);
        take!("dim", dim);
        take!("source_per_class", source_per_class);
        take!("k", target_train_per_class);
        take!("eval_per_class", target_eval_per_class);
        take!("separation", separation);
        take!("shift", shift);
        take!("nuisance_dims", nuisance_dims);
        take!("noise", noise);
        take!("seed", seed);
        Ok(())
    }

    /// Single-line `key=value` rendering, parseable by [`SynthConfig::apply`].
    pub fn to_line(&self) -> String {
        format!(
            "classes={} dim={} source_per_class={} k={} eval_per_class={} separation={} shift={} nuisance_dims={} noise={} seed={}",
            self.num_classes,
            self.dim,
            self.source_per_class,
            self.target_train_per_class,
            self.target_eval_per_class,
            self.separation,
            self.shift,
            self.nuisance_dims,
            self.noise,
            self.seed
        )
    }

    pub fn total_rows(&self) -> usize {
        self.num_classes * (self.source_per_class + self.target_train_per_class + self.target_eval_per_class)
    }
}

/// Unsplit samples plus a provenance comment line `synth <config>`.
pub fn generate_pool(config: &SynthConfig) -> Result<LabeledPool> {
    config.validate()?;
    let mut rng = DetRng::stream(config.seed, GEN_STREAM);
    let informative = config.dim - config.nuisance_dims;
    let mean_scale = config.separation / (2.0 * informative as f64).sqrt();

    let means: Vec<Vec<f64>> = (0..config.num_classes)
        .map(|_| (0..informative).map(|_| mean_scale * rng.normal()).collect())
        .collect();

    let spread = SCALE_SPREAD * (config.shift / config.separation).tanh();
    let scale: Vec<f64> = (0..informative)
        .map(|_| 1.0 + spread * rng.uniform(-1.0, 1.0))
        .collect();
    let translation = random_direction(&mut rng, informative, config.shift);
    let nuisance_offset = random_direction(&mut rng, config.nuisance_dims, config.separation);

    let mut id = 0u64;
    let mut draw = |rng: &mut DetRng, label: usize, domain: Domain| {
        let mean = &means[label];
        let mut features = Vec::with_capacity(config.dim);
        for j in 0..informative {
            let centre = match domain {
                Domain::Source => mean[j],
                Domain::Target => scale[j] * mean[j] + translation[j],
            };
            features.push(centre + config.noise * rng.normal());
        }
        for j in 0..config.nuisance_dims {
            let centre = match domain {
                Domain::Source => 0.0,
                Domain::Target => nuisance_offset[j],
            };
            features.push(centre + config.noise * rng.normal());
        }
        let sample = Sample {
            id,
            features,
            label,
            domain,
        };
        id += 1;
        sample
    };

    let source = (0..config.num_classes)
        .map(|c| {
            (0..config.source_per_class)
                .map(|_| draw(&mut rng, c, Domain::Source))
                .collect()
        })
        .collect();
    let per_target = config.target_train_per_class + config.target_eval_per_class;
    let target = (0..config.num_classes)
        .map(|c| (0..per_target).map(|_| draw(&mut rng, c, Domain::Target)).collect())
        .collect();

    Ok(LabeledPool {
        num_classes: config.num_classes,
        dim: config.dim,
        source,
        target,
        provenance: vec![format!("synth {}", config.to_line())],
    })
}

/// Generates and splits with `k = target_train_per_class` under `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<DomainDataset> {
    generate_pool(config)?.split(config.target_train_per_class, config.seed)
}

/// Recovers a [`SynthConfig`] from a `synth ...` provenance line.
pub fn config_from_provenance(pool: &LabeledPool) -> Option<SynthConfig> {
    let line = pool.provenance.iter().find_map(|l| l.strip_prefix("synth "))?;
    let kv = KeyValues::parse(&line.split_whitespace().collect::<Vec<_>>().join("\n")).ok()?;
    let mut config = SynthConfig::default();
    config.apply(&kv).ok()?;
    Some(config)
}

fn random_direction(rng: &mut DetRng, dim: usize, length: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    v.into_iter().map(|x| length * x / norm).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance per coordinate; zero for a single sample.
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSummary {
    pub source: MomentSummary,
    /// Target train and eval pools together; `None` when the class has no
    /// target samples.
    pub target: Option<MomentSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub classes: Vec<ClassSummary>,
    /// Mean over classes of the source-to-target centroid distance.
    pub domain_gap: Option<f64>,
}

fn moments<'a>(samples: impl Iterator<Item = &'a Sample>, dim: usize) -> Option<MomentSummary> {
    let samples: Vec<&Sample> = samples.collect();
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![0.0; dim];
    for s in &samples {
        for ((acc, v), m) in variance.iter_mut().zip(&s.features).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|v| *v /= n);
    Some(MomentSummary {
        count: samples.len(),
        mean,
        variance,
    })
}

pub fn describe(dataset: &DomainDataset) -> DatasetSummary {
    let dim = dataset.dim();
    let classes: Vec<ClassSummary> = (0..dataset.num_classes())
        .map(|c| ClassSummary {
            source: moments(dataset.source()[c].iter(), dim).expect("source pools are nonempty"),
            target: moments(
                dataset.target_train()[c].iter().chain(&dataset.target_eval()[c]),
                dim,
            ),
        })
        .collect();
    let gaps: Vec<f64> = classes
        .iter()
        .filter_map(|cs| {
            let t = cs.target.as_ref()?;
            Some(
                cs.source
                    .mean
                    .iter()
                    .zip(&t.mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            )
        })
        .collect();
    let domain_gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
    DatasetSummary { classes, domain_gap }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shift: f64, nuisance: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            source_per_class: 200,
            target_eval_per_class: 190,
            shift,
            nuisance_dims: nuisance,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_match_config() {
        let config = SynthConfig::default();
        let ds = generate(&config).unwrap();
        for c in ds.class_counts() {
            assert_eq!((c.source, c.target_train, c.target_eval), (500, 10, 200));
        }
        assert_eq!(config.total_rows(), 5 * 710);
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = SynthConfig::default();
        assert!(SynthConfig { nuisance_dims: 20, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { noise: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { shift: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { num_classes: 1, ..ok.clone() }.validate().is_err());
        assert!(generate(&SynthConfig { target_eval_per_class: 0, ..ok }).is_err());
    }

    #[test]
    fn no_shift_means_no_gap() {
        for seed in 0..3 {
            let gap = describe(&generate(&small(0.0, 0, seed)).unwrap()).domain_gap.unwrap();
            // centroid noise only: sqrt(20 * (1/200 + 1/200)) ~ 0.45
            assert!(gap < 0.8, "gap {gap}");
        }
    }

    #[test]
    fn shift_of_two_is_recovered() {
        let gaps: Vec<f64> = (0..5)
            .map(|seed| describe(&generate(&small(2.0, 0, seed)).unwrap()).domain_gap.unwrap())
            .collect();
        let mean = gaps.iter().sum::<f64>() / 5.0;
        assert!((mean - 2.0).abs() < 0.4, "{gaps:?}");
    }

    #[test]
    fn single_sample_classes_have_zero_variance() {
        let config = SynthConfig {
            source_per_class: 1,
            target_train_per_class: 0,
            target_eval_per_class: 1,
            ..SynthConfig::default()
        };
        let summary = describe(&generate(&config).unwrap());
        for c in &summary.classes {
            assert!(c.source.variance.iter().all(|v| *v == 0.0));
            assert!(c.target.as_ref().unwrap().variance.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn provenance_round_trip() {
        let config = SynthConfig {
            shift: 2.5,
            seed: 77,
            ..SynthConfig::default()
        };
        let pool = generate_pool(&config).unwrap();
        assert_eq!(config_from_provenance(&pool), Some(config));
    }
}
