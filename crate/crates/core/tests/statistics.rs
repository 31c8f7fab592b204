mod common;

use std::collections::BTreeMap;

use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::seeded;
use priorlab::env::StateId;
use priorlab::evalstats::{area_ratio, iqm, iqm_bootstrap_ci, linspace, performance_profile};
use priorlab::priors::{select_degraded_states, state_distribution};

/// Standard normal draw by Box-Muller.
fn normal(rng: &mut priorlab::rng::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Replicating every value four times makes the quartile cut land on whole
/// elements, so the fractional IQM becomes a plain mean of the middle half.
fn iqm_by_replication(values: &[f64]) -> f64 {
    let mut rep: Vec<f64> = values.iter().flat_map(|&v| [v; 4]).collect();
    rep.sort_by(f64::total_cmp);
    let n = values.len();
    rep[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
}

#[test]
fn iqm_matches_replication_oracle() {
    let mut rng = seeded(1);
    let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(-5.0..5.0)).collect();
    assert!((iqm(&values).unwrap() - iqm_by_replication(&values)).abs() < 1e-12);
    for n in 1..40 {
        let v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        assert!((iqm(&v).unwrap() - iqm_by_replication(&v)).abs() < 1e-12, "n = {n}");
    }
}

#[test]
fn iqm_trivial_cases() {
    assert_eq!(iqm(&[3.0; 7]).unwrap(), 3.0);
    // middle half of 1..=8 is 3, 4, 5, 6
    assert!((iqm(&[8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0]).unwrap() - 4.5).abs() < 1e-15);
    assert!(iqm(&[]).is_err());
}

#[test]
fn area_ratio_trivial_cases() {
    let base: Vec<(f64, f64)> = (1..=100).map(|i| (300.0 * i as f64, (i as f64).sqrt())).collect();
    let same = base.clone();
    let doubled: Vec<(f64, f64)> = base.iter().map(|&(x, y)| (x, 2.0 * y)).collect();
    assert_eq!(area_ratio(&same, &base).unwrap(), 0.0);
    assert!((area_ratio(&doubled, &base).unwrap() - 1.0).abs() < 1e-12);
}

fn ci_width(n: usize, rng: &mut priorlab::rng::Rng) -> (f64, f64, f64) {
    let sample: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let (lo, hi) = iqm_bootstrap_ci(&[sample], 1000, 0.95, rng).unwrap();
    (lo, hi, hi - lo)
}

#[test]
fn bootstrap_interval_covers_the_population_iqm() {
    // the standard normal is symmetric, so its IQM is zero
    let mut rng = seeded(2);
    let trials = 400;
    let covered = (0..trials)
        .filter(|_| {
            let (lo, hi, _) = ci_width(100, &mut rng);
            lo <= 0.0 && 0.0 <= hi
        })
        .count();
    let rate = covered as f64 / trials as f64;
    assert!((0.92..=0.98).contains(&rate), "coverage {rate}");
}

#[test]
fn bootstrap_interval_narrows_with_more_data() {
    let mut rng = seeded(3);
    let small: f64 = (0..20).map(|_| ci_width(100, &mut rng).2).sum::<f64>() / 20.0;
    let large: f64 = (0..20).map(|_| ci_width(1000, &mut rng).2).sum::<f64>() / 20.0;
    // width scales like 1/sqrt(n): expect about 0.32
    assert!(large / small < 0.45, "{small} -> {large}");
}

#[test]
fn stratification_resamples_within_strata() {
    // two constant strata: every resample has exactly half of each
    let strata = vec![vec![0.0; 10], vec![1.0; 10]];
    let (lo, hi) = iqm_bootstrap_ci(&strata, 200, 0.95, &mut seeded(4)).unwrap();
    assert_eq!((lo, hi), (0.5, 0.5));
}

#[test]
fn profile_matches_brute_force_count() {
    let mut rng = seeded(5);
    let values: Vec<f64> = (0..500).map(|_| (rng.gen_range(-10..10) as f64) / 10.0).collect();
    let thresholds = linspace(-1.2, 1.2, 49);
    for (t, frac) in performance_profile(&values, &thresholds) {
        let count = values.iter().filter(|&&v| v >= t).count();
        assert_eq!(frac, count as f64 / values.len() as f64, "threshold {t}");
    }
    let edges = performance_profile(&[0.0, 1.0], &[f64::NEG_INFINITY, 0.0, 0.5, 1.0, 2.0]);
    let fracs: Vec<f64> = edges.iter().map(|e| e.1).collect();
    assert_eq!(fracs, [1.0, 1.0, 0.5, 0.5, 0.0]);
}

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

fn toy_values() -> Vec<(StateId, f64)> {
    [0.0, 0.5, 1.0, 1.5, 2.0, 2.5].iter().enumerate().map(|(i, &v)| (StateId(i as u32), v)).collect()
}

#[test]
fn single_state_selection_follows_the_value_softmax() {
    let values = toy_values();
    let p = state_distribution(&values, 1.0);
    let mut rng = seeded(6);
    let draws = 20_000;
    let mut counts = vec![0.0; values.len()];
    for _ in 0..draws {
        let chosen = select_degraded_states(&values, 1, 1.0, &mut rng).unwrap();
        counts[chosen.iter().next().unwrap().index()] += 1.0;
    }
    let expected: Vec<f64> = p.iter().map(|q| q * draws as f64).collect();
    let pv = chi_square_p(&counts, &expected);
    assert!(pv > 1e-3, "p-value {pv}");
}

#[test]
fn pair_selection_matches_sequential_draws_without_replacement() {
    let values = toy_values();
    let p = state_distribution(&values, 1.0);
    let mut expected = BTreeMap::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            expected.insert((i, j), p[i] * p[j] / (1.0 - p[i]) + p[j] * p[i] / (1.0 - p[j]));
        }
    }
    let mut rng = seeded(7);
    let draws = 20_000;
    let mut counts: BTreeMap<(usize, usize), f64> = expected.keys().map(|&k| (k, 0.0)).collect();
    for _ in 0..draws {
        let chosen: Vec<usize> = select_degraded_states(&values, 2, 1.0, &mut rng).unwrap().iter().map(|s| s.index()).collect();
        *counts.get_mut(&(chosen[0], chosen[1])).unwrap() += 1.0;
    }
    let observed: Vec<f64> = counts.values().copied().collect();
    let exp: Vec<f64> = expected.values().map(|q| q * draws as f64).collect();
    let pv = chi_square_p(&observed, &exp);
    assert!(pv > 1e-3, "p-value {pv}");
}
