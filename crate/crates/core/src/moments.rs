//! Closed-form moments of the branch counts `W_k(r)` and two exact oracles.
//!
//! All formula evaluation is in big-integer rationals. The oracles compute the
//! joint law of `(W_k(1), ..., W_k(s))` at every level exactly: one by
//! enumerating every merge history, one by pushing probability mass through
//! the chain's one-step law.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::chain::{choose2, transition_law, CountVector};
use crate::error::{invalid, Error, Result};

/// `start (start - 1) ... (start - count + 1)`; zero once a factor reaches zero.
fn falling(start: i64, count: usize) -> BigInt {
    let mut acc = BigInt::one();
    for f in 0..count as i64 {
        let x = start - f;
        if x <= 0 {
            return BigInt::zero();
        }
        acc *= x;
    }
    acc
}

fn ratio(num: BigInt, den: BigInt) -> BigRational {
    BigRational::new(num, den)
}

fn check_nkr(n: usize, k: usize, r: usize) -> Result<()> {
    if r == 0 || n <= r {
        return Err(invalid!("need n > r >= 1, got n = {n}, r = {r}"));
    }
    if k == 0 || k > n {
        return Err(invalid!("level k = {k} outside 1..={n}"));
    }
    Ok(())
}

/// `E(W_k(r)) = [(n-k)...(n-k-r+2)] / [(n-1)...(n-r)] * k (k-1)`.
pub fn mean_w(n: usize, k: usize, r: usize) -> Result<BigRational> {
    check_nkr(n, k, r)?;
    let (n, k) = (n as i64, k as i64);
    let num = falling(n - k, r - 1) * BigInt::from(k * (k - 1));
    Ok(ratio(num, falling(n - 1, r)))
}

/// `E(W_k(r)^2) = E(W_k(r)) + [(n-k)...(n-k-2r+3)] / [(n-1)...(n-2r)] * k (k-1)^2 (k-2)`,
/// valid for `n > 2r`.
pub fn second_moment_w(n: usize, k: usize, r: usize) -> Result<BigRational> {
    check_nkr(n, k, r)?;
    if n <= 2 * r {
        return Err(Error::UnsupportedRegime(format!(
            "second moment needs n > 2r, got n = {n}, r = {r}"
        )));
    }
    let mean = mean_w(n, k, r)?;
    let (n, k) = (n as i64, k as i64);
    let pairs = BigInt::from(k) * BigInt::from(k - 1) * BigInt::from(k - 1) * BigInt::from(k - 2);
    let num = falling(n - k, 2 * r - 2) * pairs;
    Ok(mean + ratio(num, falling(n - 1, 2 * r)))
}

/// Exact variance of `W_k(r)` and its size relative to `k^2 / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub variance: BigRational,
    /// `V(W_k(r)) / (k^2 / n)`.
    pub bound_ratio: f64,
}

pub fn variance_w(n: usize, k: usize, r: usize) -> Result<VarianceReport> {
    let mean = mean_w(n, k, r)?;
    let variance = second_moment_w(n, k, r)? - &mean * &mean;
    let scale = BigRational::new(BigInt::from(k * k), BigInt::from(n));
    let bound_ratio = to_f64(&(&variance / scale));
    Ok(VarianceReport { variance, bound_ratio })
}

/// Every closed-form moment of `W_k(r)` at once.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub mean: BigRational,
    pub second_moment: BigRational,
    pub variance: BigRational,
    pub asymptotic_mean: f64,
}

pub fn moment_report(n: usize, k: usize, r: usize) -> Result<MomentReport> {
    let mean = mean_w(n, k, r)?;
    let second_moment = second_moment_w(n, k, r)?;
    let variance = &second_moment - &mean * &mean;
    Ok(MomentReport { n, k, r, mean, second_moment, variance, asymptotic_mean: asymptotic_mean_w(n, k, r)? })
}

/// `E(L^{n,r}) = sum_{k=2}^n E(W_k(r)) * 2 / (k (k - 1))`.
pub fn mean_length(n: usize, r: usize) -> Result<BigRational> {
    if r == 0 || r >= n {
        return Err(invalid!("need 1 <= r < n, got n = {n}, r = {r}"));
    }
    let mut acc = BigRational::zero();
    for k in 2..=n {
        let time = BigRational::new(BigInt::from(2), BigInt::from(k * (k - 1)));
        acc += mean_w(n, k, r)? * time;
    }
    Ok(acc)
}

/// Leading-order mean `((n - k) / n)^(r - 1) * k^2 / n`.
pub fn asymptotic_mean_w(n: usize, k: usize, r: usize) -> Result<f64> {
    check_nkr(n, k, r)?;
    let (n, k) = (n as f64, k as f64);
    Ok(((n - k) / n).powi(r as i32 - 1) * k * k / n)
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact law of the tracked counts at one level: integer weights over a
/// common denominator.
#[derive(Debug, Clone)]
pub struct LevelLaw {
    level: usize,
    denom: BigUint,
    weights: HashMap<Vec<u32>, BigUint>,
}

impl LevelLaw {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn support_size(&self) -> usize {
        self.weights.len()
    }

    pub fn states(&self) -> impl Iterator<Item = &[u32]> {
        self.weights.keys().map(Vec::as_slice)
    }

    pub fn probability(&self, w: &[u32]) -> BigRational {
        let num = self.weights.get(w).cloned().unwrap_or_default();
        BigRational::new(num.into(), self.denom.clone().into())
    }

    pub fn total_is_one(&self) -> bool {
        self.weights.values().sum::<BigUint>() == self.denom
    }

    /// `E(W(r)^alpha)` at this level.
    pub fn moment(&self, r: usize, alpha: u32) -> BigRational {
        let mut num = BigUint::zero();
        for (w, p) in &self.weights {
            let x = w.get(r - 1).copied().unwrap_or(0);
            if x > 0 {
                num += p * BigUint::from(x).pow(alpha);
            }
        }
        BigRational::new(num.into(), self.denom.clone().into())
    }

    pub fn mean(&self, r: usize) -> BigRational {
        self.moment(r, 1)
    }
}

impl PartialEq for LevelLaw {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level
            && self.weights.len() == other.weights.len()
            && self.weights.iter().all(|(w, p)| {
                other
                    .weights
                    .get(w)
                    .is_some_and(|q| p * &other.denom == q * &self.denom)
            })
    }
}

/// Exact joint law of `(W_k(1), ..., W_k(s))` at every level `k = n..=1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactChainLaw {
    n: usize,
    s: usize,
    levels: Vec<LevelLaw>,
}

impl ExactChainLaw {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn orders(&self) -> usize {
        self.s
    }

    pub fn level(&self, k: usize) -> &LevelLaw {
        &self.levels[self.n - k]
    }

    pub fn levels(&self) -> impl Iterator<Item = &LevelLaw> {
        self.levels.iter()
    }
}

/// Largest `n` the history enumeration accepts (56,700 histories).
pub const ENUMERATION_MAX_N: usize = 7;

/// Exact law by visiting every merge history. All histories are equally
/// likely, so each level's law is a count of history prefixes.
pub fn enumerate_tree_oracle(n: usize, s: usize) -> Result<ExactChainLaw> {
    if n < 2 {
        return Err(invalid!("n = {n}: need at least two leaves"));
    }
    if n > ENUMERATION_MAX_N {
        return Err(Error::ResourceLimit(format!(
            "history enumeration is limited to n <= {ENUMERATION_MAX_N}, got {n}"
        )));
    }
    if s == 0 || s > n {
        return Err(invalid!("s = {s} outside 1..={n}"));
    }
    let mut tallies: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); n];

    fn visit(sizes: &mut Vec<u32>, n: usize, s: usize, tallies: &mut [HashMap<Vec<u32>, u64>]) {
        let k = sizes.len();
        let mut w = vec![0u32; s];
        for &b in sizes.iter() {
            if b as usize <= s {
                w[b as usize - 1] += 1;
            }
        }
        *tallies[n - k].entry(w).or_default() += 1;
        for j in 1..k {
            for i in 0..j {
                let mut next = sizes.clone();
                next[i] += next[j];
                next.remove(j);
                visit(&mut next, n, s, tallies);
            }
        }
    }
    visit(&mut vec![1; n], n, s, &mut tallies);

    let mut denom = BigUint::one();
    let mut levels = Vec::with_capacity(n);
    for (idx, tally) in tallies.into_iter().enumerate() {
        let k = n - idx;
        levels.push(LevelLaw {
            level: k,
            denom: denom.clone(),
            weights: tally.into_iter().map(|(w, c)| (w, BigUint::from(c))).collect(),
        });
        denom *= choose2(k as u64);
    }
    Ok(ExactChainLaw { n, s, levels })
}

/// Cap on distinct states held at one level during propagation.
pub const PROPAGATION_MAX_STATES: usize = 5_000_000;

/// Exact law by forward propagation of the one-step transition law from
/// `(n, 0, ..., 0)`.
pub fn propagate_chain_law(n: usize, s: usize) -> Result<ExactChainLaw> {
    if n < 2 {
        return Err(invalid!("n = {n}: need at least two leaves"));
    }
    if s == 0 || s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n - 1));
    }
    let start = CountVector::leaves(n, s).into_counts();
    let mut current: HashMap<Vec<u32>, BigUint> = HashMap::from([(start, BigUint::one())]);
    let mut denom = BigUint::one();
    let mut levels = Vec::with_capacity(n);
    for k in (1..=n).rev() {
        if k >= 2 {
            let mut next: HashMap<Vec<u32>, BigUint> = HashMap::with_capacity(current.len() * 2);
            for (w, p) in &current {
                let law = transition_law(k, w)?;
                for &(z, q) in law.entries() {
                    let mut to = w.clone();
                    z.apply(&mut to);
                    let add = p * BigUint::from(q);
                    *next.entry(to).or_default() += add;
                }
            }
            if next.len() > PROPAGATION_MAX_STATES {
                return Err(Error::ResourceLimit(format!(
                    "{} states at level {}, above {PROPAGATION_MAX_STATES}",
                    next.len(),
                    k - 1
                )));
            }
            let prev = std::mem::replace(&mut current, next);
            levels.push(LevelLaw { level: k, denom: denom.clone(), weights: prev });
            denom *= choose2(k as u64);
        } else {
            levels.push(LevelLaw { level: 1, denom: denom.clone(), weights: std::mem::take(&mut current) });
        }
    }
    Ok(ExactChainLaw { n, s, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn mean_examples() {
        for n in 2..30 {
            assert_eq!(mean_w(n, n, 1).unwrap(), q(n as i64, 1));
        }
        assert_eq!(mean_w(4, 2, 2).unwrap(), q(2, 3));
        assert_eq!(mean_w(5, 4, 3).unwrap(), q(0, 1));
        assert_eq!(mean_w(10, 5, 1).unwrap(), q(20, 9));
        assert!(mean_w(3, 2, 3).is_err());
        assert!(mean_w(5, 6, 1).is_err());
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment_w(4, 3, 1).unwrap(), q(4, 1));
        assert_eq!(second_moment_w(4, 2, 1).unwrap(), q(2, 3));
        for n in 3..20 {
            assert_eq!(second_moment_w(n, n, 1).unwrap(), q((n * n) as i64, 1));
        }
        assert_eq!(variance_w(4, 3, 1).unwrap().variance, q(0, 1));
    }

    #[test]
    fn formula_boundary_is_refused() {
        // n = 2r puts a zero factor in the denominator of the second-moment formula.
        assert!(matches!(second_moment_w(4, 2, 2), Err(Error::UnsupportedRegime(_))));
        assert!(matches!(variance_w(4, 2, 2), Err(Error::UnsupportedRegime(_))));
        // the oracle still has the answer: W in {0, 2} with probabilities 2/3, 1/3
        let law = enumerate_tree_oracle(4, 3).unwrap();
        let level = law.level(2);
        let var = level.moment(2, 2) - level.mean(2) * level.mean(2);
        assert_eq!(level.mean(2), q(2, 3));
        assert_eq!(level.moment(2, 2), q(4, 3));
        assert_eq!(var, q(8, 9));
    }

    #[test]
    fn mean_length_examples() {
        assert_eq!(mean_length(4, 2).unwrap(), q(1, 1));
        assert_eq!(mean_length(4, 2).unwrap(), q(1, 1) * q(2, 6) + q(2, 3) * q(2, 2));
        for n in 2..40 {
            assert_eq!(mean_length(n, 1).unwrap(), q(2, 1));
        }
        assert!(mean_length(5, 5).is_err());
    }

    #[test]
    fn asymptotic_examples() {
        assert_eq!(asymptotic_mean_w(37, 37, 1).unwrap(), 37.0);
        assert!((asymptotic_mean_w(100, 50, 2).unwrap() - 12.5).abs() < 1e-12);
    }

    #[test]
    fn small_oracles() {
        let law = enumerate_tree_oracle(3, 2).unwrap();
        assert_eq!(law.level(2).probability(&[1, 1]), q(1, 1));
        let law = enumerate_tree_oracle(4, 3).unwrap();
        assert_eq!(law.level(2).probability(&[0, 2, 0]), q(1, 3));
        assert_eq!(law.level(2).probability(&[1, 0, 1]), q(2, 3));
        assert!(matches!(enumerate_tree_oracle(8, 2), Err(Error::ResourceLimit(_))));
        let chain = propagate_chain_law(10, 1).unwrap();
        assert_eq!(chain.level(5).mean(1), q(20, 9));
        assert!(chain.levels().all(LevelLaw::total_is_one));
    }

    #[test]
    fn oracles_agree_small_n() {
        for n in 3..=6 {
            for s in 1..n {
                assert_eq!(enumerate_tree_oracle(n, s).unwrap(), propagate_chain_law(n, s).unwrap(), "n={n} s={s}");
            }
        }
    }
}
