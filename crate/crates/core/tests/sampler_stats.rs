use std::collections::HashMap;

use tmps_core::data::{ClassPools, Domain, Sample};
use tmps_core::rng::DetRng;
use tmps_core::sampler::{AnchorSampler, PooledSampler, PrioritizedSampler};

const DRAWS: usize = 10_000;

fn pools(classes: usize, per_class: usize, domain: Domain, first_id: u64) -> ClassPools {
    (0..classes)
        .map(|label| {
            (0..per_class)
                .map(|i| Sample {
                    id: first_id + (label * per_class + i) as u64,
                    features: vec![label as f64],
                    label,
                    domain,
                })
                .collect()
        })
        .collect()
}

fn within_band(hits: usize, n: usize, p: f64, sigmas: f64) -> bool {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - mean).abs() <= sigmas * sd
}

#[test]
fn target_fraction_tracks_p() {
    let source = pools(1, 500, Domain::Source, 0);
    let target = pools(1, 10, Domain::Target, 1_000);
    for i in 0..=10 {
        let p = i as f64 / 10.0;
        let mut s = PrioritizedSampler::new(p, DetRng::new(40 + i), &source, &target).unwrap();
        let hits = (0..DRAWS)
            .filter(|_| s.sample_anchor(0).unwrap().domain == Domain::Target)
            .count();
        match i {
            0 => assert_eq!(hits, 0),
            10 => assert_eq!(hits, DRAWS),
            _ => assert!(within_band(hits, DRAWS, p, 3.0), "p={p}: {hits}"),
        }
    }
}

#[test]
fn p_seven_tenths_lands_in_documented_interval() {
    let source = pools(1, 500, Domain::Source, 0);
    let target = pools(1, 10, Domain::Target, 1_000);
    let mut s = PrioritizedSampler::new(0.7, DetRng::new(7), &source, &target).unwrap();
    let hits = (0..DRAWS)
        .filter(|_| s.sample_anchor(0).unwrap().domain == Domain::Target)
        .count();
    let fraction = hits as f64 / DRAWS as f64;
    assert!((0.68..=0.72).contains(&fraction), "{fraction}");
}

#[test]
fn anchor_sets_carry_one_label_per_class() {
    let source = pools(3, 4, Domain::Source, 0);
    let target = pools(3, 2, Domain::Target, 100);
    let mut s = PrioritizedSampler::new(0.0, DetRng::new(1), &source, &target).unwrap();
    let set = s.sample_anchor_set().unwrap();
    assert_eq!(set.iter().map(|a| a.label).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(set.iter().all(|a| a.domain == Domain::Source));
}

#[test]
fn domain_patterns_are_independent_across_classes() {
    let source = pools(2, 5, Domain::Source, 0);
    let target = pools(2, 5, Domain::Target, 100);
    let mut s = PrioritizedSampler::new(0.5, DetRng::new(3), &source, &target).unwrap();
    let mut counts = [0usize; 4];
    for _ in 0..DRAWS {
        let set = s.sample_anchor_set().unwrap();
        let code = set
            .iter()
            .enumerate()
            .map(|(i, a)| usize::from(a.domain == Domain::Target) << i)
            .sum::<usize>();
        counts[code] += 1;
    }
    for c in counts {
        assert!(within_band(c, DRAWS, 0.25, 3.0), "{counts:?}");
    }
}

/// Upper 0.1% point of chi-square with 19 degrees of freedom.
const CHI2_19_999: f64 = 43.82;
/// Upper 0.1% point of chi-square with 5 degrees of freedom.
const CHI2_5_999: f64 = 20.52;

fn chi_square(counts: &HashMap<u64, usize>, cells: usize, n: usize) -> f64 {
    let expected = n as f64 / cells as f64;
    assert_eq!(counts.len(), cells, "every element must be drawn");
    counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

#[test]
fn pooled_sampler_is_uniform_over_the_union() {
    let source = pools(1, 15, Domain::Source, 0);
    let target = pools(1, 5, Domain::Target, 100);
    let mut s = PooledSampler::new(DetRng::new(17), &source, &target).unwrap();
    let mut counts = HashMap::new();
    for _ in 0..DRAWS {
        *counts.entry(s.sample_anchor(0).unwrap().id).or_insert(0) += 1;
    }
    let stat = chi_square(&counts, 20, DRAWS);
    assert!(stat < CHI2_19_999, "chi-square {stat}");
}

#[test]
fn within_pool_selection_is_uniform() {
    let source = pools(1, 8, Domain::Source, 0);
    let target = pools(1, 4, Domain::Target, 100);
    let mut s = PrioritizedSampler::new(0.5, DetRng::new(23), &source, &target).unwrap();
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for _ in 0..DRAWS {
        *counts.entry(s.sample_anchor(0).unwrap().id).or_insert(0) += 1;
    }
    for (id, c) in counts {
        let share = if id >= 100 { 0.5 / 4.0 } else { 0.5 / 8.0 };
        assert!(within_band(c, DRAWS, share, 3.0), "id {id}: {c}");
    }
}

#[test]
fn pooled_target_frequency_matches_prioritized_at_target_share() {
    let source = pools(1, 500, Domain::Source, 0);
    let target = pools(1, 10, Domain::Target, 1_000);
    let mut pooled = PooledSampler::new(DetRng::new(5), &source, &target).unwrap();
    let share = pooled.effective_target_probability(0);
    assert!((share - 10.0 / 510.0).abs() < 1e-15);
    assert!(share < 0.02);
    let mut prioritized = PrioritizedSampler::new(share, DetRng::new(6), &source, &target).unwrap();
    let mut hits = |s: &mut dyn AnchorSampler| {
        (0..DRAWS)
            .filter(|_| s.sample_anchor(0).unwrap().domain == Domain::Target)
            .count()
    };
    let a = hits(&mut pooled);
    let b = hits(&mut prioritized);
    assert!(within_band(a, DRAWS, share, 3.0), "pooled {a}");
    assert!(within_band(b, DRAWS, share, 3.0), "prioritized {b}");
    // Difference of two independent binomials.
    let sd = (2.0 * DRAWS as f64 * share * (1.0 - share)).sqrt();
    assert!((a as f64 - b as f64).abs() <= 3.0 * sd);
}

#[test]
fn pooled_without_target_matches_prioritized_at_zero() {
    let source = pools(1, 6, Domain::Source, 0);
    let empty = pools(1, 0, Domain::Target, 100);
    let mut pooled = PooledSampler::new(DetRng::new(8), &source, &empty).unwrap();
    let mut prioritized = PrioritizedSampler::new(0.0, DetRng::new(9), &source, &empty).unwrap();
    for s in [&mut pooled as &mut dyn AnchorSampler, &mut prioritized] {
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for _ in 0..DRAWS {
            *counts.entry(s.sample_anchor(0).unwrap().id).or_insert(0) += 1;
        }
        let stat = chi_square(&counts, 6, DRAWS);
        assert!(stat < CHI2_5_999, "chi-square {stat}: {counts:?}");
    }
}

#[test]
fn identical_seeds_give_identical_identity_sequences() {
    let source = pools(3, 20, Domain::Source, 0);
    let target = pools(3, 5, Domain::Target, 100);
    let ids = |seed| {
        let mut s = PrioritizedSampler::new(0.7, DetRng::new(seed), &source, &target).unwrap();
        (0..200)
            .flat_map(|_| s.sample_anchor_set().unwrap().into_iter().map(|a| a.id).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(12), ids(12));
    assert_ne!(ids(12), ids(13));
}
