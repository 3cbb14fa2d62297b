//! Monte Carlo experiments: rescaled order lengths against the normal
//! limit, simulated branch counts against their exact moments, and the
//! size of the gap between raw and smoothed lengths.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::chain::{choose2, simulate_path, step_in_place, BranchCountPath, CountVector};
use crate::coalescent::{expected_time, order_counts, sample_merge_history, simulate_order_lengths, OrderLengths};
use crate::coupling::median;
use crate::error::{invalid, Error, Result};
use crate::moments::{mean_w, to_f64, variance_w};
use crate::numeric::{CompensatedSum, SampleMoments};
use crate::rng::{fold_replicates, run_replicates, SimRng};

/// How replicate branch counts are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Random merge histories.
    Tree,
    /// The branch-count Markov chain, without building trees.
    Chain,
    /// The joint chain coupled to independent external chains.
    Coupled,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Mode::Tree),
            "chain" => Ok(Mode::Chain),
            "coupled" => Ok(Mode::Coupled),
            _ => Err(invalid!("unknown mode {s:?}; expected tree, chain or coupled")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub s: usize,
    pub replicates: u64,
    pub master_seed: u64,
    pub mode: Mode,
    pub mutation_rate: Option<f64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(n: usize, s: usize, replicates: u64, master_seed: u64) -> Result<Self> {
        let config = Self { n, s, replicates, master_seed, mode: Mode::Tree, mutation_rate: None, workers: None };
        config.validate()?;
        Ok(config)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid!("n = {}: need at least two leaves", self.n));
        }
        if self.s == 0 || self.s >= self.n {
            return Err(invalid!("s = {} outside 1..={}", self.s, self.n - 1));
        }
        if self.replicates == 0 {
            return Err(invalid!("need at least one replicate"));
        }
        if let Some(rate) = self.mutation_rate {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(invalid!("mutation rate {rate} must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Raw and smoothed lengths from the branch-count chain with sampled times.
pub fn chain_order_lengths<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<OrderLengths> {
    if n < 2 || s == 0 || s >= n {
        return Err(invalid!("need n >= 2 and 1 <= s < n, got n = {n}, s = {s}"));
    }
    let mut w = CountVector::leaves(n, s).into_counts();
    let mut raw = vec![CompensatedSum::default(); s];
    let mut smoothed = vec![CompensatedSum::default(); s];
    for k in (2..=n).rev() {
        let e: f64 = Exp1.sample(rng);
        let x = e / choose2(k as u64) as f64;
        let mean = expected_time(k);
        for r in 0..s {
            if w[r] > 0 {
                let c = w[r] as f64;
                raw[r].add(c * x);
                smoothed[r].add(c * mean);
            }
        }
        step_in_place(k, &mut w, rng);
    }
    Ok(OrderLengths {
        raw: raw.iter().map(CompensatedSum::value).collect(),
        smoothed: smoothed.iter().map(CompensatedSum::value).collect(),
    })
}

/// One replicate's order lengths under `mode`.
pub fn sample_lengths<R: Rng + ?Sized>(mode: Mode, n: usize, s: usize, rng: &mut R) -> Result<OrderLengths> {
    match mode {
        Mode::Tree => simulate_order_lengths(n, s, rng),
        Mode::Chain => chain_order_lengths(n, s, rng),
        Mode::Coupled => Err(invalid!("coupled mode does not generate order lengths of a single tree")),
    }
}

/// One replicate's branch counts `W_k(r)` under `mode`.
pub fn sample_counts<R: Rng + ?Sized>(mode: Mode, n: usize, s: usize, rng: &mut R) -> Result<BranchCountPath> {
    match mode {
        Mode::Tree => {
            if s == 0 || s >= n {
                return Err(invalid!("s = {s} outside 1..={}", n.saturating_sub(1)));
            }
            order_counts(&sample_merge_history(n, rng)?, s)
        }
        Mode::Chain => simulate_path(n, s, rng),
        Mode::Coupled => Err(invalid!("coupled mode does not generate branch counts of a single tree")),
    }
}

/// `√(n/(4 ln n))`.
pub fn clt_scale(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(invalid!("n = {n}: rescaling needs n >= 3"));
    }
    let n = n as f64;
    Ok((n / (4.0 * n.ln())).sqrt())
}

/// `√(n/(4 ln n))·(ℒ^{n,r} - 2/r)` for `r = 1..=lengths.len()`.
pub fn rescale(lengths: &[f64], n: usize) -> Result<Vec<f64>> {
    let c = clt_scale(n)?;
    Ok(lengths.iter().enumerate().map(|(i, &l)| c * (l - 2.0 / (i + 1) as f64)).collect())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and the
/// standard normal.
pub fn ks_distance_normal(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltSummary {
    pub n: usize,
    pub s: usize,
    pub replicates: u64,
    pub master_seed: u64,
    pub mode: Mode,
    /// Sample mean of the rescaled vector.
    pub mean: Vec<f64>,
    /// Standard errors of `mean`.
    pub se_mean: Vec<f64>,
    /// Sample covariance of the rescaled vector; `None` for one replicate.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub insufficient_sample: bool,
    /// Kolmogorov–Smirnov distance of each marginal to `N(0, 1)`.
    pub ks: Vec<f64>,
    /// Sample mean of the unscaled lengths, with standard errors.
    pub length_mean: Vec<f64>,
    pub length_se: Vec<f64>,
    pub wall_time_secs: f64,
}

/// Simulates replicate trees, rescales their raw order lengths and compares
/// them with the standard normal.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<CltSummary> {
    config.validate()?;
    if config.mode == Mode::Coupled {
        return Err(invalid!("the normal-limit experiment needs tree or chain mode"));
    }
    let start = Instant::now();
    let (n, s, mode) = (config.n, config.s, config.mode);
    let scale = clt_scale(n)?;
    let lengths = run_replicates(config.replicates, config.master_seed, config.workers, |_, rng: &mut SimRng| {
        Ok(sample_lengths(mode, n, s, rng)?.raw)
    })?;
    let rescaled: Vec<Vec<f64>> = lengths
        .iter()
        .map(|l| l.iter().enumerate().map(|(i, &x)| scale * (x - 2.0 / (i + 1) as f64)).collect())
        .collect();
    let m = SampleMoments::from_rows(&rescaled);
    let raw = SampleMoments::from_rows(&lengths);
    let ks = (0..s)
        .map(|r| ks_distance_normal(&rescaled.iter().map(|row| row[r]).collect::<Vec<_>>()))
        .collect();
    Ok(CltSummary {
        n,
        s,
        replicates: config.replicates,
        master_seed: config.master_seed,
        mode,
        se_mean: (0..s).map(|i| m.se_mean(i).unwrap_or(f64::NAN)).collect(),
        insufficient_sample: m.covariance.is_none(),
        covariance: m.covariance,
        mean: m.mean,
        ks,
        length_se: (0..s).map(|i| raw.se_mean(i).unwrap_or(f64::NAN)).collect(),
        length_mean: raw.mean,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Simulated against exact moments of `W_k(r)` at one `(k, r)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub k: usize,
    pub r: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub exact_mean: f64,
    /// `None` where the variance formula does not apply (`n <= 2r`).
    pub exact_variance: Option<f64>,
    /// `(empirical_mean - exact_mean) / √(variance / N)`, using the exact
    /// variance when known and the empirical one otherwise. Zero when both
    /// the spread and the error vanish.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRegression {
    pub n: usize,
    pub s: usize,
    pub replicates: u64,
    pub rows: Vec<MomentRow>,
}

impl MomentRegression {
    /// Fraction of rows with `|z| <= bound`.
    pub fn fraction_within(&self, bound: f64) -> f64 {
        let ok = self.rows.iter().filter(|row| row.z.abs() <= bound).count();
        ok as f64 / self.rows.len() as f64
    }
}

struct CountSums {
    sum: Vec<u64>,
    sq: Vec<u64>,
}

/// Compares the simulated mean of every `W_k(r)`, `2 <= k <= n`, `r <= s`,
/// with its exact value.
pub fn moment_regression(config: &ExperimentConfig) -> Result<MomentRegression> {
    config.validate()?;
    let (n, s, mode) = (config.n, config.s, config.mode);
    let cells = (n - 1) * s;
    let sums = fold_replicates(
        config.replicates,
        config.master_seed,
        config.workers,
        || CountSums { sum: vec![0; cells], sq: vec![0; cells] },
        |acc, _, rng| {
            let path = sample_counts(mode, n, s, rng)?;
            for (k, w) in path.levels().filter(|(k, _)| *k >= 2) {
                let base = (n - k) * s;
                for (r, &c) in w.iter().enumerate() {
                    acc.sum[base + r] += c as u64;
                    acc.sq[base + r] += c as u64 * c as u64;
                }
            }
            Ok(())
        },
        |acc, part| {
            acc.sum.iter_mut().zip(&part.sum).for_each(|(a, b)| *a += b);
            acc.sq.iter_mut().zip(&part.sq).for_each(|(a, b)| *a += b);
        },
    )?;
    let reps = config.replicates as f64;
    let mut rows = Vec::with_capacity(cells);
    for k in (2..=n).rev() {
        for r in 1..=s {
            let i = (n - k) * s + r - 1;
            let empirical_mean = sums.sum[i] as f64 / reps;
            let empirical_variance = if config.replicates > 1 {
                let (sum, sq, m) = (sums.sum[i] as f64, sums.sq[i] as f64, reps);
                ((sq - sum * sum / m) / (m - 1.0)).max(0.0)
            } else {
                f64::NAN
            };
            let exact_mean = to_f64(&mean_w(n, k, r)?);
            let exact_variance = match variance_w(n, k, r) {
                Ok(v) => Some(to_f64(&v.variance)),
                Err(Error::UnsupportedRegime(_)) => None,
                Err(e) => return Err(e),
            };
            let spread = exact_variance.unwrap_or(empirical_variance);
            let err = empirical_mean - exact_mean;
            let z = if err == 0.0 {
                0.0
            } else if spread > 0.0 {
                err / (spread / reps).sqrt()
            } else {
                f64::INFINITY
            };
            rows.push(MomentRow { k, r, empirical_mean, empirical_variance, exact_mean, exact_variance, z });
        }
    }
    Ok(MomentRegression { n, s, replicates: config.replicates, rows })
}

/// Spread of `ℒ^{n,r} - L^{n,r}` (raw minus smoothed length) by order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthCorrection {
    pub n: usize,
    pub replicates: u64,
    /// Sample variance of `ℒ - L`.
    pub variance: Vec<f64>,
    /// `n · variance`.
    pub fitted_constant: Vec<f64>,
    /// 95th percentile of `√(n/ln n)·|ℒ - L|`.
    pub p95_rescaled: Vec<f64>,
    /// Sample mean of `ℒ`, with standard errors.
    pub raw_mean: Vec<f64>,
    pub raw_se: Vec<f64>,
}

pub fn length_correction(config: &ExperimentConfig) -> Result<LengthCorrection> {
    config.validate()?;
    let (n, s, mode) = (config.n, config.s, config.mode);
    let rows = run_replicates(config.replicates, config.master_seed, config.workers, |_, rng: &mut SimRng| {
        let l = sample_lengths(mode, n, s, rng)?;
        Ok((l.raw.clone(), l.raw.iter().zip(&l.smoothed).map(|(a, b)| a - b).collect::<Vec<f64>>()))
    })?;
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let diff: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    let raw_m = SampleMoments::from_rows(&raw);
    let diff_m = SampleMoments::from_rows(&diff);
    let scale = (n as f64 / (n as f64).ln()).sqrt();
    let variance: Vec<f64> = (0..s).map(|r| diff_m.variance(r).unwrap_or(f64::NAN)).collect();
    Ok(LengthCorrection {
        n,
        replicates: config.replicates,
        fitted_constant: variance.iter().map(|v| v * n as f64).collect(),
        variance,
        p95_rescaled: (0..s)
            .map(|r| {
                let mut v: Vec<f64> = diff.iter().map(|row| scale * row[r].abs()).collect();
                v.sort_unstable_by(f64::total_cmp);
                v[((v.len() as f64 * 0.95).ceil() as usize).clamp(1, v.len()) - 1]
            })
            .collect(),
        raw_se: (0..s).map(|r| raw_m.se_mean(r).unwrap_or(f64::NAN)).collect(),
        raw_mean: raw_m.mean,
    })
}

/// Median of each column.
pub fn column_medians(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    (0..d).map(|j| median(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect()
}
