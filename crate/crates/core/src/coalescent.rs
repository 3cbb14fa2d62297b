//! Exact simulation of the Kingman n-coalescent.
//!
//! A tree is a [`MergeHistory`] (which blocks merge, level by level) plus
//! [`InterCoalescenceTimes`] (how long each level lasts). Blocks live in a
//! swap-remove array: at level `k` there are `k` slots, and merging slots
//! `i < j` folds slot `j` into slot `i`, then moves the last slot into `j`.
//! Leaf `a` (1-based) starts in slot `a - 1`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::chain::{choose2, BranchCountPath};
use crate::error::{invalid, Result};
use crate::numeric::{CompensatedSum, ExactSum};

/// Merge sequence of an n-coalescent. Event `j` (0-based) takes level
/// `n - j` to level `n - j - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeHistory {
    n: usize,
    merges: Vec<(u32, u32)>,
}

/// Decodes `u < C(k, 2)` into the slot pair `i < j < k`.
#[inline]
fn decode_pair(u: u64) -> (u32, u32) {
    let mut j = ((1.0 + (1.0 + 8.0 * u as f64).sqrt()) / 2.0) as u64;
    while j * (j - 1) / 2 > u {
        j -= 1;
    }
    while (j + 1) * j / 2 <= u {
        j += 1;
    }
    let i = u - j * (j - 1) / 2;
    (i as u32, j as u32)
}

#[inline]
fn random_pair<R: Rng + ?Sized>(k: usize, rng: &mut R) -> (u32, u32) {
    decode_pair(rng.random_range(0..choose2(k as u64)))
}

/// Draws a merge history: at each level a uniformly random pair of blocks merges.
pub fn sample_merge_history<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<MergeHistory> {
    check_n(n)?;
    let merges = (2..=n).rev().map(|k| random_pair(k, rng)).collect();
    Ok(MergeHistory { n, merges })
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid!("n = {n}: need at least two leaves"));
    }
    if n > u32::MAX as usize {
        return Err(invalid!("n = {n} too large"));
    }
    Ok(())
}

impl MergeHistory {
    /// Builds a history from slot pairs, validating `i < j < k` at every level.
    pub fn from_slot_pairs(n: usize, merges: Vec<(u32, u32)>) -> Result<Self> {
        check_n(n)?;
        if merges.len() != n - 1 {
            return Err(invalid!("{} merges for n = {n}, expected {}", merges.len(), n - 1));
        }
        for (step, &(i, j)) in merges.iter().enumerate() {
            let k = (n - step) as u32;
            if !(i < j && j < k) {
                return Err(invalid!("merge {step}: slots ({i}, {j}) invalid at level {k}"));
            }
        }
        Ok(Self { n, merges })
    }

    /// Builds a history from leaf pairs: each entry merges the block holding
    /// leaf `a` with the block holding leaf `b` (leaves 1-based).
    pub fn from_leaf_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        check_n(n)?;
        if pairs.len() != n - 1 {
            return Err(invalid!("{} merges for n = {n}, expected {}", pairs.len(), n - 1));
        }
        let mut slot_of_leaf: Vec<usize> = (0..n).collect();
        let mut blocks: Vec<Vec<usize>> = (0..n).map(|l| vec![l]).collect();
        let mut merges = Vec::with_capacity(n - 1);
        for &(a, b) in pairs {
            if a == 0 || b == 0 || a > n || b > n {
                return Err(invalid!("leaf pair ({a}, {b}) outside 1..={n}"));
            }
            let (sa, sb) = (slot_of_leaf[a - 1], slot_of_leaf[b - 1]);
            if sa == sb {
                return Err(invalid!("leaves {a} and {b} are already in one block"));
            }
            let (i, j) = (sa.min(sb), sa.max(sb));
            merges.push((i as u32, j as u32));
            let moved = blocks.swap_remove(j);
            for &l in &moved {
                slot_of_leaf[l] = i;
            }
            blocks[i].extend(moved);
            if j < blocks.len() {
                for &l in &blocks[j] {
                    slot_of_leaf[l] = j;
                }
            }
        }
        Ok(Self { n, merges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Replays the history, calling `visit(k, sizes)` for each level `k = n..=1`.
    pub fn for_each_level(&self, mut visit: impl FnMut(usize, &[u32])) {
        let mut sizes = vec![1u32; self.n];
        visit(self.n, &sizes);
        for (step, &(i, j)) in self.merges.iter().enumerate() {
            let (i, j) = (i as usize, j as usize);
            sizes[i] += sizes[j];
            sizes.swap_remove(j);
            visit(self.n - step - 1, &sizes);
        }
    }

    /// Block sizes (orders) at level `k`, in slot order.
    pub fn block_sizes(&self, k: usize) -> Vec<u32> {
        let mut out = Vec::new();
        self.for_each_level(|level, sizes| {
            if level == k {
                out = sizes.to_vec();
            }
        });
        out
    }

    /// Full spectrum at level `k`: entry `r` is the number of blocks of size `r`
    /// (index 0 unused).
    pub fn spectrum(&self, k: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.n + 1];
        for size in self.block_sizes(k) {
            counts[size as usize] += 1;
        }
        counts
    }

    /// Leaf sets (1-based, sorted) of the blocks at level `k`.
    pub fn labelled_blocks(&self, k: usize) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = (1..=self.n).map(|l| vec![l]).collect();
        for &(i, j) in &self.merges[..self.n - k.clamp(1, self.n)] {
            let moved = blocks.swap_remove(j as usize);
            blocks[i as usize].extend(moved);
        }
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks
    }

    /// The branch supporting exactly `leaves`, if that set is ever a block.
    pub fn branch_of(&self, leaves: &[usize]) -> Option<BranchRecord> {
        let mut target: Vec<usize> = leaves.to_vec();
        target.sort_unstable();
        target.dedup();
        if target.is_empty() || target.len() >= self.n {
            return None;
        }
        let mut blocks: Vec<Vec<usize>> = (1..=self.n).map(|l| vec![l]).collect();
        let mut formed_at = None;
        if target.len() == 1 {
            formed_at = Some(self.n);
        }
        for (step, &(i, j)) in self.merges.iter().enumerate() {
            let level_after = self.n - step - 1;
            let (i, j) = (i as usize, j as usize);
            let ends_here = formed_at.is_some() && {
                let mut a = blocks[i].clone();
                let mut b = blocks[j].clone();
                a.sort_unstable();
                b.sort_unstable();
                a == target || b == target
            };
            if ends_here {
                return formed_at.map(|sigma| BranchRecord {
                    order: target.len(),
                    formed_at: sigma,
                    ends_at: level_after,
                });
            }
            let moved = blocks.swap_remove(j);
            blocks[i].extend(moved);
            if formed_at.is_none() {
                let mut b = blocks[i].clone();
                b.sort_unstable();
                if b == target {
                    formed_at = Some(level_after);
                }
            }
        }
        None
    }

    /// Every non-root branch with its order and the levels bounding it.
    pub fn branches(&self) -> Vec<BranchRecord> {
        let n = self.n;
        let mut sizes = vec![1u32; n];
        let mut formed = vec![n; n];
        let mut out = Vec::with_capacity(2 * n - 2);
        for (step, &(i, j)) in self.merges.iter().enumerate() {
            let next = n - step - 1;
            let (i, j) = (i as usize, j as usize);
            for slot in [i, j] {
                out.push(BranchRecord {
                    order: sizes[slot] as usize,
                    formed_at: formed[slot],
                    ends_at: next,
                });
            }
            sizes[i] += sizes[j];
            formed[i] = next;
            sizes.swap_remove(j);
            formed.swap_remove(j);
        }
        out
    }
}

/// Durations `X_k` of levels `k = n, ..., 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterCoalescenceTimes {
    /// `times[k - 2]` is `X_k`.
    times: Vec<f64>,
}

impl InterCoalescenceTimes {
    pub fn new(times_by_level: Vec<f64>) -> Result<Self> {
        if times_by_level.is_empty() {
            return Err(invalid!("need at least one level"));
        }
        if times_by_level.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(invalid!("times must be finite and nonnegative"));
        }
        Ok(Self { times: times_by_level })
    }

    pub fn n(&self) -> usize {
        self.times.len() + 1
    }

    /// `X_k` for `2 <= k <= n`.
    pub fn get(&self, k: usize) -> f64 {
        self.times[k - 2]
    }

    pub fn total_length(&self) -> f64 {
        let mut acc = ExactSum::new();
        for k in 2..=self.n() {
            acc.add_product(k as u64, self.get(k));
        }
        acc.value()
    }
}

/// Mean of `X_k`, `2 / (k (k - 1))`.
#[inline]
pub fn expected_time(k: usize) -> f64 {
    2.0 / (k as f64 * (k as f64 - 1.0))
}

/// Independent `X_k ~ Exp(C(k, 2))`, drawn from level `n` downward.
pub fn sample_times<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<InterCoalescenceTimes> {
    check_n(n)?;
    let mut times = vec![0.0; n - 1];
    for k in (2..=n).rev() {
        let e: f64 = Exp1.sample(rng);
        times[k - 2] = e / choose2(k as u64) as f64;
    }
    Ok(InterCoalescenceTimes { times })
}

/// A branch of order `order`, present at levels `ends_at + 1 ..= formed_at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchRecord {
    pub order: usize,
    pub formed_at: usize,
    pub ends_at: usize,
}

impl BranchRecord {
    /// Sum of `X_l` over the levels the branch spans.
    pub fn length(&self, times: &InterCoalescenceTimes) -> f64 {
        let mut acc = ExactSum::new();
        for l in self.ends_at + 1..=self.formed_at {
            acc.add(times.get(l));
        }
        acc.value()
    }
}

/// Order-`r` lengths for `r = 1..=s`: `raw` with the sampled times, `smoothed`
/// with each `X_k` replaced by its mean.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OrderLengths {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

/// Branch counts `W_k(r)`, `r = 1..=s`, at every level of the history.
///
/// `s = n` records the full spectrum including the root.
pub fn order_counts(history: &MergeHistory, s: usize) -> Result<BranchCountPath> {
    let n = history.n();
    if s == 0 || s > n {
        return Err(invalid!("s = {s} outside 1..={n}"));
    }
    let mut path = BranchCountPath::with_capacity(n, s);
    let mut w = vec![0u32; s];
    history.for_each_level(|_, sizes| {
        w.iter_mut().for_each(|x| *x = 0);
        for &b in sizes {
            if (b as usize) <= s {
                w[b as usize - 1] += 1;
            }
        }
        path.push_level(&w);
    });
    Ok(path)
}

fn check_consistent(history: &MergeHistory, times: &InterCoalescenceTimes, s: usize) -> Result<()> {
    if history.n() != times.n() {
        return Err(invalid!("history has n = {}, times have n = {}", history.n(), times.n()));
    }
    if s == 0 || s >= history.n() {
        return Err(invalid!("s = {s} outside 1..={}", history.n() - 1));
    }
    Ok(())
}

/// `L^{n,r}` summed branch by branch.
pub fn lengths_by_branches(history: &MergeHistory, times: &InterCoalescenceTimes, s: usize) -> Result<Vec<f64>> {
    check_consistent(history, times, s)?;
    let mut acc = vec![ExactSum::new(); s];
    for b in history.branches() {
        if b.order <= s {
            for l in b.ends_at + 1..=b.formed_at {
                acc[b.order - 1].add(times.get(l));
            }
        }
    }
    Ok(acc.iter().map(ExactSum::value).collect())
}

/// `L^{n,r} = sum_k W_k(r) X_k`.
pub fn lengths_by_levels(history: &MergeHistory, times: &InterCoalescenceTimes, s: usize) -> Result<Vec<f64>> {
    check_consistent(history, times, s)?;
    let path = order_counts(history, s)?;
    let mut acc = vec![ExactSum::new(); s];
    for (k, w) in path.levels().filter(|(k, _)| *k >= 2) {
        for (a, &c) in acc.iter_mut().zip(w) {
            a.add_product(c as u64, times.get(k));
        }
    }
    Ok(acc.iter().map(ExactSum::value).collect())
}

/// Raw and smoothed order lengths of a tree.
///
/// The raw lengths are computed level by level and checked against the
/// branch-by-branch sum; both are correctly rounded sums of the same
/// terms, so they agree bit for bit.
pub fn lengths_from_tree(history: &MergeHistory, times: &InterCoalescenceTimes, s: usize) -> Result<OrderLengths> {
    let raw = lengths_by_levels(history, times, s)?;
    let by_branch = lengths_by_branches(history, times, s)?;
    assert_eq!(raw, by_branch, "level sum and branch sum disagree");
    let path = order_counts(history, s)?;
    let mut acc = vec![ExactSum::new(); s];
    for (k, w) in path.levels().filter(|(k, _)| *k >= 2) {
        for (a, &c) in acc.iter_mut().zip(w) {
            a.add_product(c as u64, expected_time(k));
        }
    }
    Ok(OrderLengths { raw, smoothed: acc.iter().map(ExactSum::value).collect() })
}

/// Streams one tree and returns its order lengths for `r = 1..=s` without
/// storing the history. Pair and time draws are interleaved level by
/// level, so the stream differs from [`sample_merge_history`] followed by
/// [`sample_times`], but the law is the same.
pub fn simulate_order_lengths<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<OrderLengths> {
    check_n(n)?;
    if s == 0 || s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n - 1));
    }
    let mut sizes = vec![1u32; n];
    let mut w = vec![0u64; s];
    w[0] = n as u64;
    let mut raw = vec![CompensatedSum::default(); s];
    let mut smoothed = vec![CompensatedSum::default(); s];
    for k in (2..=n).rev() {
        let e: f64 = Exp1.sample(rng);
        let rate = choose2(k as u64) as f64;
        let x = e / rate;
        let mean = 1.0 / rate;
        for r in 0..s {
            if w[r] > 0 {
                let c = w[r] as f64;
                raw[r].add(c * x);
                smoothed[r].add(c * mean);
            }
        }
        let (i, j) = random_pair(k, rng);
        let (i, j) = (i as usize, j as usize);
        let (a, b) = (sizes[i] as usize, sizes[j] as usize);
        if a <= s {
            w[a - 1] -= 1;
        }
        if b <= s {
            w[b - 1] -= 1;
        }
        if a + b <= s {
            w[a + b - 1] += 1;
        }
        sizes[i] += sizes[j];
        sizes.swap_remove(j);
    }
    Ok(OrderLengths {
        raw: raw.iter().map(CompensatedSum::value).collect(),
        smoothed: smoothed.iter().map(CompensatedSum::value).collect(),
    })
}

/// Empirical law of the formation level `sigma(1, 2)` restricted to trees in
/// which `{1, 2}` is a block at level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationLevelEstimate {
    pub n: usize,
    pub k: usize,
    pub replicates: u64,
    /// Trees in which `{1, 2}` is a block at level `k`.
    pub eligible: u64,
    /// `counts[i]` is the tally for level `k + i`, `k..=n-1`.
    pub counts: Vec<u64>,
}

impl FormationLevelEstimate {
    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.k..self.n
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| if self.eligible == 0 { 0.0 } else { c as f64 / self.eligible as f64 })
            .collect()
    }

    /// Pearson statistic against the uniform law on `k..=n-1`.
    pub fn chi_square_uniform(&self) -> f64 {
        let cells = self.counts.len() as f64;
        let expected = self.eligible as f64 / cells;
        self.counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum()
    }
}

/// Tallies `sigma(1, 2)` over trees in which the leaves 1 and 2 form a block
/// that is still present at level `k`.
pub fn formation_level_law_check<R: Rng + ?Sized>(n: usize, k: usize, reps: u64, rng: &mut R) -> Result<FormationLevelEstimate> {
    if k < 2 || k + 1 > n {
        return Err(invalid!("need 2 <= k <= n - 1, got k = {k}, n = {n}"));
    }
    let mut counts = vec![0u64; n - k];
    let mut eligible = 0;
    for _ in 0..reps {
        let history = sample_merge_history(n, rng)?;
        if let Some(b) = history.branch_of(&[1, 2]) {
            if b.formed_at >= k && k > b.ends_at {
                eligible += 1;
                counts[b.formed_at - k] += 1;
            }
        }
    }
    Ok(FormationLevelEstimate { n, k, replicates: reps, eligible, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// The tree drawn in the usual illustration: `{1,2,3,4}` is formed at
    /// level 5 and absorbed at level 3, next to the triple `{5,6,7}`.
    fn illustrated_tree() -> MergeHistory {
        MergeHistory::from_leaf_pairs(
            10,
            &[(5, 6), (5, 7), (1, 2), (1, 3), (1, 4), (8, 9), (1, 10), (5, 8), (1, 5)],
        )
        .unwrap()
    }

    #[test]
    fn decode_covers_all_pairs() {
        for k in 2..60u64 {
            let mut seen = Vec::new();
            for u in 0..choose2(k) {
                let (i, j) = decode_pair(u);
                assert!(i < j && (j as u64) < k);
                seen.push((i, j));
            }
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len() as u64, choose2(k));
        }
    }

    #[test]
    fn illustrated_counts_and_branch() {
        let h = illustrated_tree();
        let path = order_counts(&h, 9).unwrap();
        assert_eq!(&path.at(5)[..5], &[3, 0, 1, 1, 0]);
        let b = h.branch_of(&[1, 2, 3, 4]).unwrap();
        assert_eq!((b.order, b.formed_at, b.ends_at), (4, 5, 3));
        let times = InterCoalescenceTimes::new((2..=10).map(|k| 1.0 / k as f64).collect()).unwrap();
        assert_eq!(b.length(&times), times.get(4) + times.get(5));
        assert!(h.branches().contains(&b));
    }

    #[test]
    fn two_leaves() {
        let mut rng = stream(1, 0);
        let h = sample_merge_history(2, &mut rng).unwrap();
        assert_eq!(h.merges(), &[(0, 1)]);
        let full = order_counts(&h, 2).unwrap();
        assert_eq!(full.at(2), &[2, 0]);
        assert_eq!(full.at(1), &[0, 1]);
        let t = sample_times(2, &mut rng).unwrap();
        let l = lengths_from_tree(&h, &t, 1).unwrap();
        assert_eq!(l.raw[0], 2.0 * t.get(2));
        assert_eq!(l.smoothed[0], 2.0);
    }

    #[test]
    fn hand_traced_four_leaves() {
        let h = MergeHistory::from_leaf_pairs(4, &[(1, 2), (3, 4), (1, 3)]).unwrap();
        let p = order_counts(&h, 3).unwrap();
        assert_eq!(p.at(4), &[4, 0, 0]);
        assert_eq!(p.at(3), &[2, 1, 0]);
        assert_eq!(p.at(2), &[0, 2, 0]);
        assert_eq!(h.spectrum(1)[4], 1);
        assert_eq!(h.labelled_blocks(2), vec![vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn three_leaves_first_merge_uniform() {
        let mut rng = stream(11, 0);
        let mut tally = [0u32; 3];
        let reps = 30_000;
        for _ in 0..reps {
            let h = sample_merge_history(3, &mut rng).unwrap();
            let (i, j) = h.merges()[0];
            tally[(i + j - 1) as usize] += 1;
        }
        for c in tally {
            let p = c as f64 / reps as f64;
            assert!((p - 1.0 / 3.0).abs() < 4.0 * (2.0f64 / 9.0 / reps as f64).sqrt());
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let a = sample_merge_history(50, &mut stream(9, 2)).unwrap();
        let b = sample_merge_history(50, &mut stream(9, 2)).unwrap();
        assert_eq!(a, b);
        let ta = sample_times(50, &mut stream(9, 2)).unwrap();
        let tb = sample_times(50, &mut stream(9, 2)).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn level_identities_hold() {
        let mut rng = stream(5, 0);
        for n in [2usize, 3, 7, 40, 300] {
            let h = sample_merge_history(n, &mut rng).unwrap();
            let full = order_counts(&h, n).unwrap();
            for (k, w) in full.levels() {
                let blocks: u64 = w.iter().map(|&x| x as u64).sum();
                let leaves: u64 = w.iter().enumerate().map(|(r, &x)| (r as u64 + 1) * x as u64).sum();
                assert_eq!(blocks, k as u64);
                assert_eq!(leaves, n as u64);
            }
            assert_eq!(full.count(n, 1), n as u32);
            assert_eq!(full.count(1, n), 1);
            assert!((2..=n).all(|r| full.count(n, r) == 0));
            assert_eq!(h.branches().len(), 2 * n - 2);
        }
    }

    #[test]
    fn branch_and_level_sums_agree_exactly() {
        let mut rng = stream(21, 0);
        for rep in 0..100 {
            let n = 2 + rep % 60;
            let h = sample_merge_history(n, &mut rng).unwrap();
            let t = sample_times(n, &mut rng).unwrap();
            let s = n - 1;
            let a = lengths_by_branches(&h, &t, s).unwrap();
            let b = lengths_by_levels(&h, &t, s).unwrap();
            assert_eq!(a, b);
            let mut total = ExactSum::new();
            a.iter().for_each(|&x| total.add(x));
            let expect = t.total_length();
            assert!((total.value() - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn streaming_matches_stored_tree_statistically() {
        // Same law, different draw order: compare means of the smoothed
        // external length over many trees.
        let (n, reps) = (30usize, 4000u64);
        let mut a = 0.0;
        let mut b = 0.0;
        for rep in 0..reps {
            let mut rng = stream(33, rep);
            a += simulate_order_lengths(n, 2, &mut rng).unwrap().smoothed[1];
            let mut rng = stream(34, rep);
            let h = sample_merge_history(n, &mut rng).unwrap();
            let t = sample_times(n, &mut rng).unwrap();
            b += lengths_from_tree(&h, &t, 2).unwrap().smoothed[1];
        }
        let (a, b) = (a / reps as f64, b / reps as f64);
        // both estimate 1; sd of a single draw is well under 1
        assert!((a - 1.0).abs() < 0.05 && (b - 1.0).abs() < 0.05, "{a} {b}");
    }

    #[test]
    fn times_have_the_right_mean() {
        let mut rng = stream(2, 0);
        let reps = 200_000;
        let mut sum = 0.0;
        for _ in 0..reps {
            sum += sample_times(10, &mut rng).unwrap().get(10);
        }
        let mean = sum / reps as f64;
        let se = (1.0 / 45.0) / (reps as f64).sqrt();
        assert!((mean - 1.0 / 45.0).abs() < 3.0 * se, "{mean}");
        assert_eq!(expected_time(2), 1.0);
        assert_eq!(expected_time(4), 1.0 / 6.0);
    }

    #[test]
    fn formation_level_edges() {
        let mut rng = stream(4, 0);
        let est = formation_level_law_check(3, 2, 2000, &mut rng).unwrap();
        assert_eq!(est.levels().collect::<Vec<_>>(), vec![2]);
        assert!(est.eligible > 0);
        assert_eq!(est.frequencies(), vec![1.0]);
        assert!(formation_level_law_check(5, 5, 10, &mut rng).is_err());
        assert!(formation_level_law_check(5, 1, 10, &mut rng).is_err());
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let mut rng = stream(1, 1);
        let h = sample_merge_history(5, &mut rng).unwrap();
        let t = sample_times(6, &mut rng).unwrap();
        assert!(lengths_from_tree(&h, &t, 2).is_err());
        assert!(sample_merge_history(1, &mut rng).is_err());
        assert!(sample_times(0, &mut rng).is_err());
        assert!(MergeHistory::from_slot_pairs(3, vec![(1, 1), (0, 1)]).is_err());
    }
}
