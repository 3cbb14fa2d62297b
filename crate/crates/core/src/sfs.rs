//! Infinite-sites mutations on a coalescent tree and the site frequency
//! spectrum.
//!
//! Mutations fall on each branch as a Poisson process of rate `ν` per unit
//! length. A mutation on a branch of order `r` is carried by exactly `r`
//! leaves, so `M_r(n)` counts mutations on order-`r` branches. In the usual
//! population-genetic scaling `ν = θ/2`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::coalescent::{simulate_order_lengths, InterCoalescenceTimes, MergeHistory};
use crate::error::{invalid, Result};
use crate::numeric::{CompensatedSum, SampleMoments};
use crate::rng::{run_replicates, SimRng};

/// Mutation rate per unit branch length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MutationConfig {
    rate: f64,
}

impl MutationConfig {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(invalid!("mutation rate {rate} must be finite and nonnegative"));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `θ = 2ν`.
    pub fn theta(&self) -> f64 {
        2.0 * self.rate
    }
}

/// `M_r(n)` for `r = 1..n-1`, and their total `S_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SfsCounts {
    /// `m[r - 1] = M_r(n)`.
    pub m: Vec<u64>,
    pub segregating_sites: u64,
}

impl SfsCounts {
    pub fn get(&self, r: usize) -> u64 {
        self.m[r - 1]
    }
}

/// Poisson draw that accepts a zero mean.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Drops mutations on every branch of the tree.
pub fn sample_sfs<R: Rng + ?Sized>(
    history: &MergeHistory,
    times: &InterCoalescenceTimes,
    config: MutationConfig,
    rng: &mut R,
) -> Result<SfsCounts> {
    let n = history.n();
    if times.n() != n {
        return Err(invalid!("history has n = {n}, times have n = {}", times.n()));
    }
    let mut m = vec![0u64; n - 1];
    for branch in history.branches() {
        m[branch.order - 1] += poisson(config.rate * branch.length(times), rng);
    }
    let segregating_sites = m.iter().sum();
    Ok(SfsCounts { m, segregating_sites })
}

/// `E S_n = 2ν Σ_{k=1}^{n-1} 1/k`.
pub fn expected_segregating_sites(n: usize, config: MutationConfig) -> f64 {
    let mut h = CompensatedSum::default();
    for k in (1..n).rev() {
        h.add(1.0 / k as f64);
    }
    2.0 * config.rate * h.value()
}

/// Moments of `(M_1, ..., M_s)` over replicate trees, against the Poisson
/// limit with means and variances `ν·2/r` and no correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollarySummary {
    pub n: usize,
    pub s: usize,
    pub rate: f64,
    pub theta: f64,
    pub replicates: u64,
    pub mean: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Standard error of each sample variance from the fourth central moment.
    pub se_variance: Vec<f64>,
    /// `variance / mean`, NaN when the mean is zero.
    pub dispersion: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    /// `ν·2/r`.
    pub target: Vec<f64>,
}

/// Per replicate, draws `M_r ~ Poisson(ν ℒ^{n,r})` for `r <= s` given one
/// tree's order lengths, and summarizes.
///
/// The count over all order-`r` branches is a sum of independent Poissons,
/// so one draw with the summed length has the same conditional law.
pub fn corollary_check(
    n: usize,
    s: usize,
    config: MutationConfig,
    replicates: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<CorollarySummary> {
    if replicates < 2 {
        return Err(invalid!("need at least two replicates"));
    }
    let rows = run_replicates(replicates, master_seed, workers, |_, rng: &mut SimRng| {
        let lengths = simulate_order_lengths(n, s, rng)?;
        Ok(per_order_counts(&lengths.raw, config, rng))
    })?;
    Ok(summarize(n, s, config, &rows))
}

/// `M_r ~ Poisson(ν·length_r)` for each entry of `lengths`, as floats.
pub fn per_order_counts<R: Rng + ?Sized>(lengths: &[f64], config: MutationConfig, rng: &mut R) -> Vec<f64> {
    lengths.iter().map(|&l| poisson(config.rate * l, rng) as f64).collect()
}

fn summarize(n: usize, s: usize, config: MutationConfig, rows: &[Vec<f64>]) -> CorollarySummary {
    let moments = SampleMoments::from_rows(rows);
    let cov = moments.covariance.clone().expect("at least two rows");
    let count = rows.len() as f64;
    let variance: Vec<f64> = (0..s).map(|i| cov[i][i]).collect();
    let se_variance = (0..s)
        .map(|i| {
            let mut m4 = CompensatedSum::default();
            rows.iter().for_each(|row| m4.add((row[i] - moments.mean[i]).powi(4)));
            let m4 = m4.value() / count;
            ((m4 - variance[i] * variance[i]).max(0.0) / count).sqrt()
        })
        .collect();
    let correlation = (0..s)
        .map(|i| (0..s).map(|j| moments.correlation(i, j).unwrap_or(f64::NAN)).collect())
        .collect();
    CorollarySummary {
        n,
        s,
        rate: config.rate,
        theta: config.theta(),
        replicates: rows.len() as u64,
        se_mean: (0..s).map(|i| moments.se_mean(i).unwrap_or(f64::NAN)).collect(),
        dispersion: (0..s).map(|i| variance[i] / moments.mean[i]).collect(),
        mean: moments.mean,
        variance,
        se_variance,
        covariance: cov,
        correlation,
        target: (1..=s).map(|r| config.rate * 2.0 / r as f64).collect(),
    }
}

/// Runs `replicates` trees of `n` leaves and returns the spectrum of each,
/// restricted to `r <= s`. `S_n` still counts every order.
pub fn sample_sfs_replicates(
    n: usize,
    s: usize,
    config: MutationConfig,
    replicates: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<SfsCounts>> {
    if s == 0 || s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n.saturating_sub(1)));
    }
    run_replicates(replicates, master_seed, workers, |_, rng: &mut SimRng| {
        let history = crate::coalescent::sample_merge_history(n, rng)?;
        let times = crate::coalescent::sample_times(n, rng)?;
        sample_sfs(&history, &times, config, rng)
    })
    .map(|all| {
        all.into_iter()
            .map(|c| SfsCounts { m: c.m[..s].to_vec(), segregating_sites: c.segregating_sites })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalescent::{lengths_from_tree, sample_merge_history, sample_times};
    use crate::rng::stream;

    #[test]
    fn zero_rate_means_no_mutations() {
        let mut rng = stream(1, 0);
        let h = sample_merge_history(30, &mut rng).unwrap();
        let t = sample_times(30, &mut rng).unwrap();
        let c = sample_sfs(&h, &t, MutationConfig::new(0.0).unwrap(), &mut rng).unwrap();
        assert!(c.m.iter().all(|&x| x == 0));
        assert_eq!(c.segregating_sites, 0);
        let summary = corollary_check(20, 3, MutationConfig::new(0.0).unwrap(), 10, 1, Some(1)).unwrap();
        assert!(summary.mean.iter().chain(&summary.variance).all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(MutationConfig::new(-1.0).is_err());
        assert!(MutationConfig::new(f64::NAN).is_err());
        assert_eq!(MutationConfig::new(0.5).unwrap().theta(), 1.0);
    }

    #[test]
    fn segregating_sites_is_the_total() {
        let mut rng = stream(2, 0);
        for _ in 0..20 {
            let h = sample_merge_history(25, &mut rng).unwrap();
            let t = sample_times(25, &mut rng).unwrap();
            let c = sample_sfs(&h, &t, MutationConfig::new(3.0).unwrap(), &mut rng).unwrap();
            assert_eq!(c.m.len(), 24);
            assert_eq!(c.segregating_sites, c.m.iter().sum::<u64>());
        }
    }

    #[test]
    fn frozen_tree_counts_are_poisson() {
        let mut rng = stream(3, 0);
        let h = sample_merge_history(12, &mut rng).unwrap();
        let t = sample_times(12, &mut rng).unwrap();
        let lengths = lengths_from_tree(&h, &t, 3).unwrap().raw;
        let config = MutationConfig::new(2.0).unwrap();
        let reps = 400_000;
        let rows: Vec<Vec<f64>> = (0..reps)
            .map(|_| {
                let c = sample_sfs(&h, &t, config, &mut rng).unwrap();
                (1..=3).map(|r| c.get(r) as f64).collect()
            })
            .collect();
        let m = SampleMoments::from_rows(&rows);
        for r in 0..3 {
            let lambda = 2.0 * lengths[r];
            let se = (lambda / reps as f64).sqrt();
            assert!((m.mean[r] - lambda).abs() <= 3.0 * se, "r = {}: {} vs {lambda}", r + 1, m.mean[r]);
            // Poisson variance has SE about sqrt((λ + 2λ²)/N)
            let var_se = ((lambda + 2.0 * lambda * lambda) / reps as f64).sqrt();
            assert!((m.variance(r).unwrap() - lambda).abs() <= 4.0 * var_se);
        }
    }

    #[test]
    fn spectrum_means_and_segregating_sites() {
        let config = MutationConfig::new(1.0).unwrap();
        let counts = sample_sfs_replicates(100, 3, config, 20_000, 17, None).unwrap();
        let rows: Vec<Vec<f64>> = counts
            .iter()
            .map(|c| c.m.iter().map(|&x| x as f64).chain([c.segregating_sites as f64]).collect())
            .collect();
        let m = SampleMoments::from_rows(&rows);
        for r in 1..=3 {
            let target = 2.0 / r as f64;
            assert!((m.mean[r - 1] - target).abs() <= 3.0 * m.se_mean(r - 1).unwrap(), "r = {r}");
        }
        let es = expected_segregating_sites(100, config);
        assert!((es - 10.3547).abs() < 1e-3);
        assert!((m.mean[3] - es).abs() <= 3.0 * m.se_mean(3).unwrap());
    }

    #[test]
    fn means_scale_with_rate() {
        let one = corollary_check(200, 2, MutationConfig::new(1.0).unwrap(), 4000, 5, None).unwrap();
        let two = corollary_check(200, 2, MutationConfig::new(2.0).unwrap(), 4000, 6, None).unwrap();
        for r in 0..2 {
            let se = (4.0 * one.se_mean[r].powi(2) + two.se_mean[r].powi(2)).sqrt();
            assert!((two.mean[r] - 2.0 * one.mean[r]).abs() <= 3.0 * se);
        }
    }
}
