use tmps_core::data::{read_dataset, write_dataset, Domain, LabeledPool, Sample};
use tmps_core::eval::{evaluate, evaluate_pool, InferenceRule};
use tmps_core::synth::{describe, generate, generate_pool, SynthConfig};
use tmps_core::train::{train_baseline, TrainConfig};

fn file_bytes(pool: &LabeledPool) -> Vec<u8> {
    let mut out = Vec::new();
    write_dataset(pool, &mut out).unwrap();
    out
}

#[test]
fn label_marginals_match_config_exactly() {
    let config = SynthConfig {
        num_classes: 4,
        source_per_class: 30,
        target_train_per_class: 3,
        target_eval_per_class: 7,
        seed: 5,
        ..SynthConfig::default()
    };
    let ds = generate(&config).unwrap();
    for counts in ds.class_counts() {
        assert_eq!((counts.source, counts.target_train, counts.target_eval), (30, 3, 7));
    }
    let pool = generate_pool(&SynthConfig::default()).unwrap();
    assert_eq!(pool.sample_count(), 5 * (500 + 10 + 200));
}

#[test]
fn fixed_seed_gives_identical_file_and_round_trips() {
    let config = SynthConfig {
        seed: 77,
        ..SynthConfig::default()
    };
    let a = file_bytes(&generate_pool(&config).unwrap());
    assert_eq!(a, file_bytes(&generate_pool(&config).unwrap()));
    let back = read_dataset(a.as_slice()).unwrap();
    assert_eq!(back, generate_pool(&config).unwrap());
    let other = SynthConfig {
        seed: 78,
        ..config
    };
    assert_ne!(a, file_bytes(&generate_pool(&other).unwrap()));
}

/// Two-sample z test per coordinate, Bonferroni-corrected over all
/// coordinates and classes to an overall level of 0.001.
fn domains_differ(source: &[Sample], target: &[Sample], tests: usize) -> bool {
    // Two-sided normal quantile for 0.001 / tests, found by bisection on erfc.
    let alpha = 0.001 / tests as f64;
    let z_crit = {
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if erfc(mid / std::f64::consts::SQRT_2) > alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let dim = source[0].features.len();
    (0..dim).any(|j| {
        let moments = |s: &[Sample]| {
            let n = s.len() as f64;
            let mean = s.iter().map(|x| x.features[j]).sum::<f64>() / n;
            let var = s.iter().map(|x| (x.features[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, var / n)
        };
        let (ms, vs) = moments(source);
        let (mt, vt) = moments(target);
        ((ms - mt) / (vs + vt).sqrt()).abs() > z_crit
    })
}

/// Complementary error function (Numerical Recipes' Chebyshev fit,
/// relative error below 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[test]
fn domains_differ_iff_shift_or_nuisance() {
    for (shift, nuisance, expect) in [(0.0, 0, false), (2.0, 0, true), (0.0, 4, true), (6.0, 6, true)] {
        let config = SynthConfig {
            shift,
            nuisance_dims: nuisance,
            source_per_class: 500,
            target_train_per_class: 10,
            target_eval_per_class: 490,
            seed: 3,
            ..SynthConfig::default()
        };
        let pool = generate_pool(&config).unwrap();
        let tests = config.dim * config.num_classes;
        let differ = (0..config.num_classes).any(|c| domains_differ(&pool.source[c], &pool.target[c], tests));
        assert_eq!(differ, expect, "shift {shift}, nuisance {nuisance}");
    }
}

#[test]
fn estimated_gap_tracks_shift() {
    let gaps: Vec<f64> = (0..5)
        .map(|seed| {
            let config = SynthConfig {
                shift: 2.0,
                nuisance_dims: 0,
                seed,
                ..SynthConfig::default()
            };
            describe(&generate(&config).unwrap()).domain_gap.unwrap()
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean - 2.0).abs() <= 0.4, "mean gap {mean} from {gaps:?}");

    let none = SynthConfig {
        shift: 0.0,
        nuisance_dims: 0,
        ..SynthConfig::default()
    };
    let gap = describe(&generate(&none).unwrap()).domain_gap.unwrap();
    // Centroids of 500 and 210 unit-variance samples in 20 dimensions.
    let noise_floor = (20.0f64 * (1.0 / 500.0 + 1.0 / 210.0)).sqrt();
    assert!(gap < 2.0 * noise_floor, "{gap}");
}

#[test]
fn describe_matches_direct_recomputation() {
    let ds = generate(&SynthConfig {
        num_classes: 2,
        source_per_class: 20,
        target_train_per_class: 2,
        target_eval_per_class: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let summary = describe(&ds);
    let s = &ds.source()[1];
    let mean0 = s.iter().map(|x| x.features[0]).sum::<f64>() / s.len() as f64;
    assert!((summary.classes[1].source.mean[0] - mean0).abs() < 1e-12);
    let target = summary.classes[1].target.as_ref().unwrap();
    assert_eq!(target.count, 5);
    assert!(ds.target_eval()[1].iter().all(|x| x.domain == Domain::Target));
}

/// (source macro F1, target macro F1) of the baseline, averaged over seeds.
fn baseline_gap(shift: f64, nuisance: usize) -> (f64, f64) {
    let mut source = 0.0;
    let mut target = 0.0;
    for seed in 0..5 {
        let ds = generate(&SynthConfig {
            shift,
            nuisance_dims: nuisance,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = train_baseline(&ds, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        source += evaluate_pool(&model.network, &ds, ds.source(), InferenceRule::Head).unwrap().macro_f1;
        target += evaluate(&model.network, &ds, InferenceRule::Head).unwrap().macro_f1;
    }
    (source / 5.0, target / 5.0)
}

#[test]
fn baseline_generalizes_without_a_gap() {
    let (source, target) = baseline_gap(0.0, 0);
    assert!((source - target).abs() <= 0.03, "source {source}, target {target}");
}

#[test]
fn large_shift_costs_the_baseline_twenty_points() {
    let config = SynthConfig::default();
    let (source, target) = baseline_gap(3.0 * config.separation, config.nuisance_dims);
    assert!(source - target >= 0.20, "source {source}, target {target}");
}
