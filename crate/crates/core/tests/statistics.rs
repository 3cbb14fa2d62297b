//! Moderate-size Monte Carlo checks that back up the acceptance suite.

use kingman_lab::coalescent::formation_level_law_check;
use kingman_lab::harness::{length_correction, moment_regression, ExperimentConfig, Mode};
use kingman_lab::harness::sample_lengths;
use kingman_lab::rng::{run_replicates, stream};
use kingman_lab::sfs::{corollary_check, MutationConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn formation_level_is_uniform() {
    for (n, k) in [(12, 3), (20, 8)] {
        let est = formation_level_law_check(n, k, 200_000, &mut stream(41, n as u64)).unwrap();
        let per_cell = est.eligible as f64 / est.counts.len() as f64;
        assert!(per_cell >= 50.0, "only {per_cell} expected trees per level");
        let df = (est.counts.len() - 1) as f64;
        let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.999);
        let chi2 = est.chi_square_uniform();
        assert!(chi2 < critical, "n = {n}, k = {k}: chi2 {chi2} >= {critical}");
    }
}

#[test]
fn count_means_match_exact_values() {
    for mode in [Mode::Chain, Mode::Tree] {
        let config = ExperimentConfig::new(200, 3, 4_000, 5).unwrap().with_mode(mode);
        let reg = moment_regression(&config).unwrap();
        assert_eq!(reg.rows.len(), 199 * 3);
        let within = reg.fraction_within(4.0);
        assert!(within >= 0.99, "{mode:?}: only {within} of cells within 4 SE");
    }
}

#[test]
fn time_fluctuation_shrinks_with_n() {
    let at = |n| {
        let config = ExperimentConfig::new(n, 2, 4_000, 9).unwrap().with_mode(Mode::Chain);
        length_correction(&config).unwrap()
    };
    let (small, large) = (at(100), at(10_000));
    for r in 0..2 {
        assert!(large.p95_rescaled[r] < small.p95_rescaled[r], "order {}", r + 1);
        assert!(large.variance[r] < small.variance[r]);
        let target = 2.0 / (r + 1) as f64;
        assert!((large.raw_mean[r] - target).abs() <= 4.0 * large.raw_se[r]);
    }
}

#[test]
fn spectrum_correlation_weakens_with_n() {
    let config = MutationConfig::new(1.0).unwrap();
    let small = corollary_check(10, 2, config, 40_000, 12, None).unwrap();
    let large = corollary_check(2_000, 2, config, 40_000, 13, None).unwrap();
    assert!(large.correlation[0][1].abs() < small.correlation[0][1].abs());
    assert!(large.correlation[0][1].abs() < 0.03);
    for r in 0..2 {
        assert!((large.mean[r] - large.target[r]).abs() <= 4.0 * large.se_mean[r]);
    }
}

/// Exact `Var ℒ^{n,1}`, from the linear drift `E[W_{k-1}(1) | W_k(1) = w] = w (k-2)/k`.
fn external_length_variance(n: usize) -> f64 {
    let nf = n as f64;
    let (mut second, mut mean, mut carry) = (0.0, 0.0, 0.0);
    for k in 2..=n {
        let kf = k as f64;
        let t = 2.0 / (kf * (kf - 1.0));
        if k >= 3 {
            carry = (kf - 2.0) / kf * (carry + 2.0 / ((kf - 1.0) * (kf - 2.0)));
        }
        let m1 = kf * (kf - 1.0) / (nf - 1.0);
        let m2 = m1 + kf * (kf - 1.0).powi(2) * (kf - 2.0) / ((nf - 1.0) * (nf - 2.0));
        mean += m1 * t;
        second += m2 * t * (2.0 * t + 2.0 * carry);
    }
    second - mean * mean
}

#[test]
fn external_length_variance_matches_exact_value() {
    // n = 3: ℒ = 3 X_3 + X_2, one external branch survives to level 2
    let exact3 = 9.0 / 9.0 + 1.0;
    assert!((external_length_variance(3) - exact3).abs() < 1e-12);

    for n in [20usize, 200] {
        let draws = run_replicates(100_000, 60 + n as u64, None, |_, rng| {
            Ok(sample_lengths(Mode::Tree, n, 1, rng)?.raw[0])
        })
        .unwrap();
        let m = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / m;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
        let se = ((m4 - var * var) / m).sqrt();
        let exact = external_length_variance(n);
        assert!((var - exact).abs() <= 4.0 * se, "n = {n}: sample {var} vs exact {exact} (se {se})");
    }
}
