//! The branch-count Markov chain.
//!
//! For a fixed number of tracked orders `s`, the vector
//! `V_k = (W_k(1), ..., W_k(s))` of branch counts by order is an
//! inhomogeneous Markov chain as the level `k` runs from `n` down to 1.
//! This module evaluates its one-step law in exact integer arithmetic and
//! samples paths from it without building any tree.

use num_rational::Ratio;
use rand::Rng;

use crate::error::{invalid, Result};

/// Largest number of tracked orders a [`Jump`] can encode.
pub const MAX_JUMP_ORDERS: usize = 16;

/// `C(x, 2)`.
#[inline]
pub fn choose2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Branch counts by order at one level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountVector {
    level: usize,
    w: Vec<u32>,
}

impl CountVector {
    pub fn new(level: usize, w: Vec<u32>) -> Result<Self> {
        check_state(level, &w)?;
        Ok(Self { level, w })
    }

    /// The starting state `(n, 0, ..., 0)` at level `n`.
    pub fn leaves(n: usize, s: usize) -> Self {
        let mut w = vec![0; s];
        if s > 0 {
            w[0] = n as u32;
        }
        Self { level: n, w }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn counts(&self) -> &[u32] {
        &self.w
    }

    /// Number of tracked orders.
    pub fn orders(&self) -> usize {
        self.w.len()
    }

    /// `W(r)` for `1 <= r`; orders beyond the tracked range read as zero.
    pub fn get(&self, r: usize) -> u32 {
        read_order(&self.w, r)
    }

    pub fn into_counts(self) -> Vec<u32> {
        self.w
    }
}

#[inline]
fn read_order(w: &[u32], r: usize) -> u32 {
    if r >= 1 && r <= w.len() {
        w[r - 1]
    } else {
        0
    }
}

fn check_state(level: usize, w: &[u32]) -> Result<()> {
    let total: u64 = w.iter().map(|&x| x as u64).sum();
    if total > level as u64 {
        return Err(invalid!(
            "counts {w:?} sum to {total}, more than the {level} branches at this level"
        ));
    }
    Ok(())
}

/// A jump `z` in `{-2, -1, 0, 1}^s`, packed two bits per order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Jump(u32);

impl Jump {
    /// The zero jump for `s` orders.
    pub fn zero(s: usize) -> Self {
        let mut code = 0u32;
        for r in 0..s {
            code |= 2 << (2 * r);
        }
        Jump(code)
    }

    pub fn from_components(z: &[i8]) -> Result<Self> {
        if z.len() > MAX_JUMP_ORDERS {
            return Err(invalid!("jumps support at most {MAX_JUMP_ORDERS} orders"));
        }
        let mut code = 0u32;
        for (r, &c) in z.iter().enumerate() {
            if !(-2..=1).contains(&c) {
                return Err(invalid!("jump component {c} outside -2..=1"));
            }
            code |= ((c + 2) as u32) << (2 * r);
        }
        Ok(Jump(code))
    }

    /// Component for order `r` (1-based).
    #[inline]
    pub fn component(self, r: usize) -> i8 {
        ((self.0 >> (2 * (r - 1))) & 3) as i8 - 2
    }

    pub fn components(self, s: usize) -> Vec<i8> {
        (1..=s).map(|r| self.component(r)).collect()
    }

    #[inline]
    pub(crate) fn shifted(self, r: usize, delta: i8) -> Self {
        // r is 1-based; callers only move within -2..=1
        let shift = 2 * (r - 1);
        let digit = ((self.0 >> shift) & 3) as i8 + delta;
        debug_assert!((0..=3).contains(&digit));
        Jump((self.0 & !(3 << shift)) | ((digit as u32) << shift))
    }

    /// Applies the jump to `w` in place.
    pub fn apply(self, w: &mut [u32]) {
        for (r, x) in w.iter_mut().enumerate() {
            let c = self.component(r + 1) as i64;
            *x = (*x as i64 + c) as u32;
        }
    }
}

/// One merge category of the one-step law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Event {
    /// Two branches of untracked order merge (or nothing tracked is touched).
    Stay,
    /// An order-`i` branch merges with an untracked branch.
    Lose(usize),
    /// Two order-`i` branches merge.
    Pair(usize),
    /// An order-`i` and an order-`j` branch merge, `i < j`.
    Cross(usize, usize),
}

impl Event {
    pub(crate) fn jump(self, s: usize) -> Jump {
        let z = Jump::zero(s);
        match self {
            Event::Stay => z,
            Event::Lose(i) => z.shifted(i, -1),
            Event::Pair(i) => {
                let z = z.shifted(i, -2);
                if 2 * i <= s {
                    z.shifted(2 * i, 1)
                } else {
                    z
                }
            }
            Event::Cross(i, j) => {
                let z = z.shifted(i, -1).shifted(j, -1);
                if i + j <= s {
                    z.shifted(i + j, 1)
                } else {
                    z
                }
            }
        }
    }

    #[inline]
    fn apply(self, w: &mut [u32]) {
        let s = w.len();
        match self {
            Event::Stay => {}
            Event::Lose(i) => w[i - 1] -= 1,
            Event::Pair(i) => {
                w[i - 1] -= 2;
                if 2 * i <= s {
                    w[2 * i - 1] += 1;
                }
            }
            Event::Cross(i, j) => {
                w[i - 1] -= 1;
                w[j - 1] -= 1;
                if i + j <= s {
                    w[i + j - 1] += 1;
                }
            }
        }
    }
}

/// Visits every merge category with its integer weight out of `C(k, 2)`,
/// in a fixed order. Zero-weight categories are skipped. Stops early when
/// `visit` returns `false`.
#[inline]
pub(crate) fn for_each_event(k: u64, w: &[u32], mut visit: impl FnMut(Event, u64) -> bool) {
    let m: u64 = w.iter().map(|&x| x as u64).sum();
    let rest = k - m;
    let stay = choose2(rest);
    if stay > 0 && !visit(Event::Stay, stay) {
        return;
    }
    for (i, &wi) in w.iter().enumerate() {
        let wi = wi as u64;
        if wi == 0 {
            continue;
        }
        let lose = wi * rest;
        if lose > 0 && !visit(Event::Lose(i + 1), lose) {
            return;
        }
        let pair = choose2(wi);
        if pair > 0 && !visit(Event::Pair(i + 1), pair) {
            return;
        }
        for (j, &wj) in w.iter().enumerate().skip(i + 1) {
            let cross = wi * wj as u64;
            if cross > 0 && !visit(Event::Cross(i + 1, j + 1), cross) {
                return;
            }
        }
    }
}

/// Probability law of a jump: integer weights over a common denominator.
///
/// Entries are sorted by jump, carry strictly positive weight, and sum to
/// the denominator exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpLaw {
    s: usize,
    denom: u128,
    entries: Vec<(Jump, u128)>,
}

impl JumpLaw {
    /// Builds a law from unsorted, possibly repeated, weights.
    pub fn from_weights(s: usize, denom: u128, weights: impl IntoIterator<Item = (Jump, u128)>) -> Result<Self> {
        let weights = weights.into_iter();
        let mut entries = Vec::with_capacity(weights.size_hint().0);
        entries.extend(weights.filter(|e| e.1 > 0));
        entries.sort_unstable_by_key(|e| e.0);
        entries.dedup_by(|later, first| {
            if later.0 == first.0 {
                first.1 += later.1;
                true
            } else {
                false
            }
        });
        let total: u128 = entries.iter().map(|e| e.1).sum();
        if total != denom || denom == 0 {
            return Err(invalid!("weights sum to {total}, expected denominator {denom}"));
        }
        Ok(Self { s, denom, entries })
    }

    pub fn orders(&self) -> usize {
        self.s
    }

    pub fn denominator(&self) -> u128 {
        self.denom
    }

    pub fn entries(&self) -> &[(Jump, u128)] {
        &self.entries
    }

    /// Integer weight of `z` over [`JumpLaw::denominator`].
    pub fn weight(&self, z: Jump) -> u128 {
        self.entries
            .binary_search_by_key(&z, |e| e.0)
            .map_or(0, |i| self.entries[i].1)
    }

    pub fn prob(&self, z: Jump) -> Ratio<u128> {
        Ratio::new(self.weight(z), self.denom)
    }

    pub fn total(&self) -> u128 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// `E[z_r]`, enumerated over the support.
    pub fn mean_component(&self, r: usize) -> Ratio<i128> {
        let num: i128 = self
            .entries
            .iter()
            .map(|&(z, p)| z.component(r) as i128 * p as i128)
            .sum();
        Ratio::new(num, self.denom as i128)
    }

    /// Same law over a denominator that is a multiple of the current one.
    pub fn rescaled(&self, denom: u128) -> Result<Self> {
        if denom % self.denom != 0 {
            return Err(invalid!("{denom} is not a multiple of {}", self.denom));
        }
        let f = denom / self.denom;
        let entries = self
            .entries
            .iter()
            .map(|&(z, p)| p.checked_mul(f).map(|q| (z, q)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| invalid!("rescaling to {denom} overflows"))?;
        Ok(Self { s: self.s, denom, entries })
    }

    /// Inverse-CDF draw over the sorted support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Jump {
        let mut u = rng.random_range(0..self.denom);
        for &(z, p) in &self.entries {
            if u < p {
                return z;
            }
            u -= p;
        }
        unreachable!("weights sum to the denominator")
    }
}

/// One-step law of the jump `V_{k-1} - V_k` given `V_k = v`, over `C(k, 2)`.
pub fn transition_law(k: usize, v: &[u32]) -> Result<JumpLaw> {
    if k < 2 {
        return Err(invalid!("no transition out of level {k}"));
    }
    if v.len() > MAX_JUMP_ORDERS || v.is_empty() {
        return Err(invalid!("need 1..={MAX_JUMP_ORDERS} tracked orders, got {}", v.len()));
    }
    check_state(k, v)?;
    let s = v.len();
    let mut weights = Vec::with_capacity(1 + 2 * s + s * s / 2);
    for_each_event(k as u64, v, |e, p| {
        weights.push((e.jump(s), p as u128));
        true
    });
    JumpLaw::from_weights(s, choose2(k as u64) as u128, weights)
}

/// One-step law of the external count alone (`s = 1`).
pub fn external_transition_law(k: usize, w: u32) -> Result<JumpLaw> {
    if w as usize > k {
        return Err(invalid!("{w} external branches at level {k}"));
    }
    transition_law(k, &[w])
}

/// Draws one step of the chain at level `k`, updating `w` to the level `k - 1` state.
///
/// Walks the same categories as [`transition_law`] with a single uniform
/// draw on `[0, C(k, 2))`.
#[inline]
pub fn step_in_place<R: Rng + ?Sized>(k: usize, w: &mut [u32], rng: &mut R) {
    debug_assert!(k >= 2);
    let mut u = rng.random_range(0..choose2(k as u64));
    let mut chosen = Event::Stay;
    for_each_event(k as u64, w, |e, p| {
        if u < p {
            chosen = e;
            false
        } else {
            u -= p;
            true
        }
    });
    chosen.apply(w);
}

/// One step of the external-count chain; returns the new count.
#[inline]
pub fn external_step<R: Rng + ?Sized>(k: usize, w: u32, rng: &mut R) -> u32 {
    let mut x = [w];
    step_in_place(k, &mut x, rng);
    x[0]
}

/// Trajectory of tracked branch counts from a start level down to level 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchCountPath {
    top: usize,
    s: usize,
    counts: Vec<u32>,
}

impl BranchCountPath {
    pub(crate) fn with_capacity(top: usize, s: usize) -> Self {
        Self { top, s, counts: Vec::with_capacity(top * s) }
    }

    pub(crate) fn push_level(&mut self, w: &[u32]) {
        debug_assert_eq!(w.len(), self.s);
        self.counts.extend_from_slice(w);
    }

    /// The level the path starts at (`n` for a full path).
    pub fn top(&self) -> usize {
        self.top
    }

    /// Lowest level recorded.
    pub fn bottom(&self) -> usize {
        self.top + 1 - self.counts.len() / self.s.max(1)
    }

    pub fn orders(&self) -> usize {
        self.s
    }

    /// Counts `(W_k(1), ..., W_k(s))` at level `k`.
    pub fn at(&self, k: usize) -> &[u32] {
        assert!(k <= self.top && k >= self.bottom(), "level {k} outside path");
        let i = (self.top - k) * self.s;
        &self.counts[i..i + self.s]
    }

    /// `W_k(r)`.
    pub fn count(&self, k: usize, r: usize) -> u32 {
        read_order(self.at(k), r)
    }

    /// Levels from the top down.
    pub fn levels(&self) -> impl Iterator<Item = (usize, &[u32])> {
        let top = self.top;
        self.counts
            .chunks_exact(self.s)
            .enumerate()
            .map(move |(i, w)| (top - i, w))
    }

    /// Every consecutive pair of levels differs by a jump in the support
    /// of the one-step law.
    pub fn is_legal(&self) -> bool {
        let levels: Vec<_> = self.levels().collect();
        levels.windows(2).all(|pair| {
            let (k, hi) = pair[0];
            let (_, lo) = pair[1];
            let Ok(law) = transition_law(k, hi) else {
                return false;
            };
            law.entries().iter().any(|&(z, _)| {
                let mut next = hi.to_vec();
                z.apply(&mut next);
                next == lo
            })
        })
    }
}

/// Runs the chain from `(n, 0, ..., 0)` at level `n` down to level 1.
pub fn simulate_path<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<BranchCountPath> {
    if n < 2 {
        return Err(invalid!("n = {n}: need at least two leaves"));
    }
    if s == 0 || s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n - 1));
    }
    let mut path = BranchCountPath::with_capacity(n, s);
    let mut w = CountVector::leaves(n, s).into_counts();
    path.push_level(&w);
    for k in (2..=n).rev() {
        step_in_place(k, &mut w, rng);
        path.push_level(&w);
    }
    Ok(path)
}

/// Number of unordered branch pairs at this state whose merge creates an
/// order-`r` branch. Orders above the tracked range count as zero.
pub fn z_creation(v: &[u32], r: usize) -> Result<u64> {
    if r < 2 {
        return Err(invalid!("order {r} cannot be created by a merge"));
    }
    let mut z = 0u64;
    for i in 1..r {
        let j = r - i;
        if i < j {
            z += read_order(v, i) as u64 * read_order(v, j) as u64;
        }
    }
    if r % 2 == 0 {
        z += choose2(read_order(v, r / 2) as u64);
    }
    Ok(z)
}

/// Conditional drift `E[W_k(r) - W_{k+1}(r) | V_{k+1} = v]`, given the upper
/// level `k + 1`.
pub fn expected_jump(k_plus_1: usize, v: &[u32], r: usize) -> Result<Ratio<i128>> {
    if k_plus_1 < 2 {
        return Err(invalid!("no transition out of level {k_plus_1}"));
    }
    if r == 0 {
        return Err(invalid!("orders start at 1"));
    }
    check_state(k_plus_1, v)?;
    let kk = k_plus_1 as i128;
    let loss = Ratio::new(-2 * read_order(v, r) as i128, kk);
    let creation = if r >= 2 && r <= v.len() {
        Ratio::new(z_creation(v, r)? as i128, choose2(k_plus_1 as u64) as i128)
    } else {
        Ratio::from_integer(0)
    };
    Ok(loss + creation)
}
