//! Maximal coupling of the joint branch-count chain with independent
//! external-count chains.
//!
//! At each level the jump of `V` (law `Q`) and the jump of `Ṽ` (law `Q̃`,
//! a product of `s` external one-step laws) are drawn from the optimal
//! coupling of the two laws: with probability `p = 1 - TV(Q, Q̃)` both take a
//! common jump from `γ_I`, otherwise they draw independently from the
//! positive parts `γ_II` and `γ_III`. Everything up to the random draw is
//! exact integer arithmetic over the denominator `C(k, 2)^s`.

use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;

use crate::chain::{
    choose2, external_step, for_each_event, step_in_place, BranchCountPath, CountVector, Jump, JumpLaw,
    MAX_JUMP_ORDERS,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::CompensatedSum;
use crate::rng::{run_replicates, SimRng};

type Weights = Vec<(Jump, u128)>;

/// Scratch space for building one-step coupling laws without allocating.
#[derive(Debug, Clone, Default)]
struct Workspace {
    q: Weights,
    q_tilde: Weights,
    scratch: Weights,
    diag: Weights,
    over: Weights,
    under: Weights,
    denom: u128,
    diag_mass: u128,
}

fn check_orders(s: usize) -> Result<()> {
    if s == 0 || s > MAX_JUMP_ORDERS {
        return Err(invalid!("need 1..={MAX_JUMP_ORDERS} tracked orders, got {s}"));
    }
    Ok(())
}

fn check_pair(k: usize, v: &[u32], v_tilde: &[u32]) -> Result<()> {
    if k < 2 {
        return Err(invalid!("no transition out of level {k}"));
    }
    check_orders(v.len())?;
    if v.len() != v_tilde.len() {
        return Err(invalid!("{} joint orders but {} external chains", v.len(), v_tilde.len()));
    }
    let total: u64 = v.iter().map(|&x| x as u64).sum();
    if total > k as u64 {
        return Err(invalid!("counts {v:?} exceed the {k} branches at this level"));
    }
    if let Some(w) = v_tilde.iter().find(|&&w| w as usize > k) {
        return Err(invalid!("external count {w} exceeds level {k}"));
    }
    Ok(())
}

fn sort_merge(w: &mut Weights) {
    w.sort_unstable_by_key(|e| e.0);
    w.dedup_by(|later, first| {
        if later.0 == first.0 {
            first.1 += later.1;
            true
        } else {
            false
        }
    });
}

fn level_denominator(k: usize, s: usize) -> Result<(u128, u128)> {
    let c = choose2(k as u64) as u128;
    let scale = c
        .checked_pow(s as u32 - 1)
        .ok_or_else(|| Error::ResourceLimit(format!("C({k},2)^{} overflows 128 bits", s - 1)))?;
    let denom = scale
        .checked_mul(c)
        .ok_or_else(|| Error::ResourceLimit(format!("C({k},2)^{s} overflows 128 bits")))?;
    Ok((denom, scale))
}

impl Workspace {
    fn fill_q(&mut self, k: usize, v: &[u32], scale: u128) {
        let s = v.len();
        self.q.clear();
        self.q.reserve(1 + s * (s + 3) / 2);
        let q = &mut self.q;
        for_each_event(k as u64, v, |e, p| {
            q.push((e.jump(s), p as u128 * scale));
            true
        });
        sort_merge(&mut self.q);
    }

    fn fill_q_tilde(&mut self, k: usize, v_tilde: &[u32]) {
        let k = k as u64;
        // w = 0 leaves one outcome, w = 1 two, otherwise three
        let most: usize = v_tilde.iter().map(|&w| 1 + w.min(2) as usize).product();
        self.q_tilde.clear();
        self.q_tilde.reserve(most);
        self.scratch.reserve(most);
        self.q_tilde.push((Jump::zero(v_tilde.len()), 1));
        for (i, &w) in v_tilde.iter().enumerate() {
            let w = w as u64;
            let outcomes = [(0i8, choose2(k - w)), (-1, w * (k - w)), (-2, choose2(w))];
            self.scratch.clear();
            for &(z, p) in &self.q_tilde {
                for &(delta, q) in &outcomes {
                    if q > 0 {
                        let z = if delta == 0 { z } else { z.shifted(i + 1, delta) };
                        self.scratch.push((z, p * q as u128));
                    }
                }
            }
            std::mem::swap(&mut self.q_tilde, &mut self.scratch);
        }
        self.q_tilde.sort_unstable_by_key(|e| e.0);
    }

    fn split(&mut self) {
        self.diag.clear();
        self.over.clear();
        self.under.clear();
        let (mut i, mut j) = (0, 0);
        let (q, qt) = (&self.q, &self.q_tilde);
        while i < q.len() || j < qt.len() {
            let (z, a, b) = match (q.get(i), qt.get(j)) {
                (Some(&(x, a)), Some(&(y, b))) if x == y => {
                    i += 1;
                    j += 1;
                    (x, a, b)
                }
                (Some(&(x, a)), Some(&(y, _))) if x < y => {
                    i += 1;
                    (x, a, 0)
                }
                (Some(&(x, a)), None) => {
                    i += 1;
                    (x, a, 0)
                }
                (_, Some(&(y, b))) => {
                    j += 1;
                    (y, 0, b)
                }
                (None, None) => unreachable!(),
            };
            let m = a.min(b);
            if m > 0 {
                self.diag.push((z, m));
            }
            if a > b {
                self.over.push((z, a - b));
            } else if b > a {
                self.under.push((z, b - a));
            }
        }
        self.diag_mass = self.diag.iter().map(|e| e.1).sum();
    }

    fn build(&mut self, k: usize, v: &[u32], v_tilde: &[u32]) -> Result<()> {
        check_pair(k, v, v_tilde)?;
        let (denom, scale) = level_denominator(k, v.len())?;
        self.denom = denom;
        self.fill_q(k, v, scale);
        self.fill_q_tilde(k, v_tilde);
        self.split();
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Jump, Jump) {
        let u = rng.random_range(0..self.denom);
        if u < self.diag_mass {
            let z = pick(&self.diag, u);
            return (z, z);
        }
        let rest = self.denom - self.diag_mass;
        let x = pick(&self.over, u - self.diag_mass);
        let y = pick(&self.under, rng.random_range(0..rest));
        (x, y)
    }
}

#[inline]
fn pick(weights: &[(Jump, u128)], mut u: u128) -> Jump {
    for &(z, p) in weights {
        if u < p {
            return z;
        }
        u -= p;
    }
    unreachable!("draw beyond total weight")
}

/// Law of `Ṽ_{k-1} - Ṽ_k` for `s` independent external chains at level `k`,
/// over `C(k, 2)^s`.
pub fn product_external_law(k: usize, v_tilde: &[u32]) -> Result<JumpLaw> {
    if k < 2 {
        return Err(invalid!("no transition out of level {k}"));
    }
    check_orders(v_tilde.len())?;
    if let Some(w) = v_tilde.iter().find(|&&w| w as usize > k) {
        return Err(invalid!("external count {w} exceeds level {k}"));
    }
    let (denom, _) = level_denominator(k, v_tilde.len())?;
    let mut ws = Workspace::default();
    ws.fill_q_tilde(k, v_tilde);
    JumpLaw::from_weights(v_tilde.len(), denom, ws.q_tilde)
}

fn common_scale(p: &JumpLaw, q: &JumpLaw) -> Result<(u128, u128, u128)> {
    if p.orders() != q.orders() {
        return Err(invalid!("laws on {} and {} orders", p.orders(), q.orders()));
    }
    let (a, b) = (p.denominator(), q.denominator());
    let g = num_integer::gcd(a, b);
    let d = (a / g)
        .checked_mul(b)
        .ok_or_else(|| Error::ResourceLimit("common denominator overflows 128 bits".into()))?;
    Ok((d, d / a, d / b))
}

/// Total variation distance `½ Σ_z |P(z) - Q(z)|`, exact.
pub fn tv_distance(p: &JumpLaw, q: &JumpLaw) -> Result<Ratio<u128>> {
    let (d, fp, fq) = common_scale(p, q)?;
    let mut support: Vec<Jump> = p.entries().iter().chain(q.entries()).map(|e| e.0).collect();
    support.sort_unstable();
    support.dedup();
    let mut l1 = 0u128;
    for z in support {
        let (a, b) = (p.weight(z) * fp, q.weight(z) * fq);
        l1 += a.abs_diff(b);
    }
    // Σ (P - Q) = 0 makes the L1 mass even.
    Ok(Ratio::new(l1 / 2, d))
}

/// Total variation distance as `max_A |P(A) - Q(A)|` over every event of the
/// joint support. Exponential in the support size, so limited to 20 points.
pub fn tv_distance_by_events(p: &JumpLaw, q: &JumpLaw) -> Result<Ratio<u128>> {
    let (d, fp, fq) = common_scale(p, q)?;
    let mut support: Vec<Jump> = p.entries().iter().chain(q.entries()).map(|e| e.0).collect();
    support.sort_unstable();
    support.dedup();
    if support.len() > 20 {
        return Err(Error::ResourceLimit(format!("{} support points is too many to enumerate events", support.len())));
    }
    let diffs: Vec<i128> = support
        .iter()
        .map(|&z| (p.weight(z) * fp) as i128 - (q.weight(z) * fq) as i128)
        .collect();
    let mut best = 0i128;
    for mask in 0u32..(1 << diffs.len()) {
        let mass: i128 = (0..diffs.len()).filter(|i| mask >> i & 1 == 1).map(|i| diffs[i]).sum();
        best = best.max(mass.abs());
    }
    Ok(Ratio::new(best as u128, d))
}

/// The optimal coupling of `Q` and `Q̃` at one state, as integer weights over
/// `C(k, 2)^s`.
///
/// `γ_I` carries `min(Q, Q̃)` and has mass `p`; `γ_II` and `γ_III` carry the
/// positive parts `(Q - Q̃)⁺` and `(Q̃ - Q)⁺` and share mass `1 - p`. A part
/// with zero mass is returned as `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingDecomposition {
    s: usize,
    denom: u128,
    diag_mass: u128,
    gamma_i: Weights,
    gamma_ii: Weights,
    gamma_iii: Weights,
}

impl CouplingDecomposition {
    pub fn orders(&self) -> usize {
        self.s
    }

    pub fn denominator(&self) -> u128 {
        self.denom
    }

    /// Probability of a common jump.
    pub fn p(&self) -> Ratio<u128> {
        Ratio::new(self.diag_mass, self.denom)
    }

    pub fn tv(&self) -> Ratio<u128> {
        Ratio::new(self.denom - self.diag_mass, self.denom)
    }

    pub fn gamma_i(&self) -> Option<JumpLaw> {
        law(self.s, self.diag_mass, &self.gamma_i)
    }

    pub fn gamma_ii(&self) -> Option<JumpLaw> {
        law(self.s, self.denom - self.diag_mass, &self.gamma_ii)
    }

    pub fn gamma_iii(&self) -> Option<JumpLaw> {
        law(self.s, self.denom - self.diag_mass, &self.gamma_iii)
    }

    /// Draws `(ΔV, ΔṼ)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Jump, Jump) {
        let u = rng.random_range(0..self.denom);
        if u < self.diag_mass {
            let z = pick(&self.gamma_i, u);
            return (z, z);
        }
        let rest = self.denom - self.diag_mass;
        (pick(&self.gamma_ii, u - self.diag_mass), pick(&self.gamma_iii, rng.random_range(0..rest)))
    }

    /// The full joint law of `(ΔV, ΔṼ)` over `D·(D - m)`, where `D` is the
    /// denominator and `m` the common-jump mass (just `D` when `p = 1`).
    pub fn joint_law(&self) -> Result<CoupledJumpLaw> {
        let rest = self.denom - self.diag_mass;
        if rest == 0 {
            let entries = self.gamma_i.iter().map(|&(z, p)| ((z, z), p)).collect();
            return Ok(CoupledJumpLaw { s: self.s, denom: self.denom, entries });
        }
        let overflow = || Error::ResourceLimit("joint coupling denominator overflows 128 bits".into());
        let denom = self.denom.checked_mul(rest).ok_or_else(overflow)?;
        // Both parts are already sorted by (x, y), so a merge keeps the order.
        let mut off = Vec::with_capacity(self.gamma_ii.len() * self.gamma_iii.len());
        for &(x, a) in &self.gamma_ii {
            for &(y, b) in &self.gamma_iii {
                off.push(((x, y), a.checked_mul(b).ok_or_else(overflow)?));
            }
        }
        let mut entries = Vec::with_capacity(self.gamma_i.len() + off.len());
        let mut diag = self.gamma_i.iter().map(|&(z, p)| ((z, z), p * rest)).peekable();
        for e in off {
            while let Some(d) = diag.next_if(|d| d.0 < e.0) {
                entries.push(d);
            }
            entries.push(e);
        }
        entries.extend(diag);
        Ok(CoupledJumpLaw { s: self.s, denom, entries })
    }
}

fn law(s: usize, mass: u128, weights: &Weights) -> Option<JumpLaw> {
    (mass > 0).then(|| JumpLaw::from_weights(s, mass, weights.iter().copied()).expect("parts sum to their mass"))
}

/// Builds the optimal coupling of the joint one-step law at `(k, v)` with the
/// product external law at `(k, v_tilde)`.
pub fn optimal_coupling(k: usize, v: &CountVector, v_tilde: &[u32]) -> Result<CouplingDecomposition> {
    let mut ws = Workspace::default();
    ws.build(k, v.counts(), v_tilde)?;
    Ok(CouplingDecomposition {
        s: v.orders(),
        denom: ws.denom,
        diag_mass: ws.diag_mass,
        gamma_i: ws.diag,
        gamma_ii: ws.over,
        gamma_iii: ws.under,
    })
}

/// Exact joint law of one coupled step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledJumpLaw {
    s: usize,
    denom: u128,
    entries: Vec<((Jump, Jump), u128)>,
}

impl CoupledJumpLaw {
    pub fn denominator(&self) -> u128 {
        self.denom
    }

    pub fn entries(&self) -> &[((Jump, Jump), u128)] {
        &self.entries
    }

    pub fn first_marginal(&self) -> JumpLaw {
        // entries are sorted by x, so equal x values are adjacent
        let mut weights: Vec<(Jump, u128)> = Vec::new();
        for &((x, _), p) in &self.entries {
            match weights.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => weights.push((x, p)),
            }
        }
        JumpLaw::from_weights(self.s, self.denom, weights).expect("joint weights sum to the denominator")
    }

    pub fn second_marginal(&self) -> JumpLaw {
        JumpLaw::from_weights(self.s, self.denom, self.entries.iter().map(|&((_, y), p)| (y, p)))
            .expect("joint weights sum to the denominator")
    }

    /// `P(ΔV ≠ ΔṼ)`.
    pub fn mismatch(&self) -> Ratio<u128> {
        let m: u128 = self.entries.iter().filter(|e| e.0 .0 != e.0 .1).map(|e| e.1).sum();
        Ratio::new(m, self.denom)
    }
}

/// Current level with the joint counts `v` and the external counts `v_tilde`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoupledState {
    pub level: usize,
    pub v: Vec<u32>,
    pub v_tilde: Vec<u32>,
}

impl CoupledState {
    pub fn new(level: usize, v: Vec<u32>, v_tilde: Vec<u32>) -> Result<Self> {
        check_orders(v.len())?;
        if v.len() != v_tilde.len() {
            return Err(invalid!("{} joint orders but {} external chains", v.len(), v_tilde.len()));
        }
        let v = CountVector::new(level, v)?.into_counts();
        if let Some(w) = v_tilde.iter().find(|&&w| w as usize > level) {
            return Err(invalid!("external count {w} exceeds level {level}"));
        }
        Ok(Self { level, v, v_tilde })
    }

    /// Both chains at the leaves: `V = (n, 0, ..., 0)`, `Ṽ = (n, ..., n)`.
    pub fn leaves(n: usize, s: usize) -> Self {
        Self { level: n, v: CountVector::leaves(n, s).into_counts(), v_tilde: vec![n as u32; s] }
    }
}

/// Steps coupled states in place, reusing its buffers between calls.
#[derive(Debug, Clone, Default)]
pub struct Coupler {
    ws: Workspace,
}

impl Coupler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves `state` from level `k` to `k - 1` and returns the two jumps.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut CoupledState, rng: &mut R) -> Result<(Jump, Jump)> {
        self.ws.build(state.level, &state.v, &state.v_tilde)?;
        let (x, y) = self.ws.sample(rng);
        x.apply(&mut state.v);
        y.apply(&mut state.v_tilde);
        state.level -= 1;
        Ok((x, y))
    }
}

/// One coupled step from `state`.
pub fn coupled_step<R: Rng + ?Sized>(state: &CoupledState, rng: &mut R) -> Result<CoupledState> {
    let mut next = state.clone();
    Coupler::new().step(&mut next, rng)?;
    Ok(next)
}

/// Level bounds `1 <= b < a <= n` of a coupled region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegionConfig {
    pub a: usize,
    pub b: usize,
}

impl RegionConfig {
    pub fn new(n: usize, a: usize, b: usize) -> Result<Self> {
        if !(1 <= b && b < a && a <= n) {
            return Err(invalid!("region needs 1 <= b < a <= n, got a = {a}, b = {b}, n = {n}"));
        }
        Ok(Self { a, b })
    }

    /// `(⌊n / ln² n⌋, ⌈√n⌉)`, without validation.
    pub fn default_bounds(n: usize) -> (usize, usize) {
        let ln = (n as f64).ln();
        let a = (n as f64 / (ln * ln)).floor() as usize;
        (a, (n as f64).sqrt().ceil() as usize)
    }

    /// The middle region. Small `n` put `⌈√n⌉` above `⌊n / ln² n⌋` and are
    /// rejected.
    pub fn default_for(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid!("n = {n}: need at least two leaves"));
        }
        let (a, b) = Self::default_bounds(n);
        Self::new(n, a, b)
    }

    /// Number of levels `k` with `b <= k < a`.
    pub fn steps(&self) -> usize {
        self.a - self.b
    }
}

/// One run of [`simulate_coupled_region`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRegionRun {
    pub n: usize,
    pub region: RegionConfig,
    /// `V_k` for `a >= k >= b`.
    pub joint: BranchCountPath,
    /// `Ṽ_k` for `a >= k >= b`.
    pub external: BranchCountPath,
    /// `ΔW_k(r) ≠ ΔW̃_k(r)` for the jump arriving at level `k`, stored for
    /// `k = a-1, ..., b` and `r = 1..=s`.
    pub mismatch: Vec<bool>,
    /// `L_{a,b}` by order.
    pub length: Vec<f64>,
    /// `L̃_{a,b}` by order.
    pub length_external: Vec<f64>,
}

/// Runs `V` as a true chain from the leaves down to `a` and `s` independent
/// external chains from the leaves down to `a`, then couples the two from
/// `a` down to `b`.
pub fn simulate_coupled_region<R: Rng + ?Sized>(
    n: usize,
    region: RegionConfig,
    s: usize,
    rng: &mut R,
) -> Result<CoupledRegionRun> {
    let region = RegionConfig::new(n, region.a, region.b)?;
    check_orders(s)?;
    if s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n - 1));
    }
    let RegionConfig { a, b } = region;
    let mut state = CoupledState::leaves(n, s);
    for k in (a + 1..=n).rev() {
        step_in_place(k, &mut state.v, rng);
    }
    for w in state.v_tilde.iter_mut() {
        for k in (a + 1..=n).rev() {
            *w = external_step(k, *w, rng);
        }
    }
    state.level = a;

    let mut joint = BranchCountPath::with_capacity(a, s);
    let mut external = BranchCountPath::with_capacity(a, s);
    let mut mismatch = Vec::with_capacity(region.steps() * s);
    let mut length = vec![CompensatedSum::default(); s];
    let mut length_external = vec![CompensatedSum::default(); s];
    let mut coupler = Coupler::new();
    loop {
        let k = state.level;
        joint.push_level(&state.v);
        external.push_level(&state.v_tilde);
        let t = 2.0 / (k as f64 * (k as f64 - 1.0));
        for r in 0..s {
            length[r].add(t * state.v[r] as f64);
            length_external[r].add(t * state.v_tilde[r] as f64);
        }
        if k == b + 1 {
            break;
        }
        let (x, y) = coupler.step(&mut state, rng)?;
        mismatch.extend((1..=s).map(|r| x.component(r) != y.component(r)));
    }
    // the last step arrives at b, whose level lies outside the length sum
    let (x, y) = coupler.step(&mut state, rng)?;
    mismatch.extend((1..=s).map(|r| x.component(r) != y.component(r)));
    joint.push_level(&state.v);
    external.push_level(&state.v_tilde);

    Ok(CoupledRegionRun {
        n,
        region,
        joint,
        external,
        mismatch,
        length: length.iter().map(CompensatedSum::value).collect(),
        length_external: length_external.iter().map(CompensatedSum::value).collect(),
    })
}

/// Per-level tallies over replicates of [`simulate_coupled_region`], for
/// levels `k = a-1, ..., b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouplingDiagnostics {
    pub n: usize,
    pub region: RegionConfig,
    pub s: usize,
    pub replicates: u64,
    /// Replicates with `ΔW_k(r) ≠ ΔW̃_k(r)`.
    pub mismatches: Vec<u64>,
    /// `Σ |W_k(r) - W̃_k(r)|`.
    pub abs_diff: Vec<u64>,
    /// `Σ (W_k(r) - W̃_k(r))`.
    pub diff: Vec<i64>,
    /// `Σ (W_k(r) - W̃_k(r))²`.
    pub sq_diff: Vec<u64>,
}

/// One `(k, r)` row of [`CouplingDiagnostics`] with the bound shapes it is
/// compared against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub k: usize,
    pub r: usize,
    pub mismatch_rate: f64,
    pub mean_abs_diff: f64,
    pub var_diff: f64,
    /// `k/(a√n) + a·k/n² + 1/k`.
    pub mismatch_shape: f64,
    /// `k²/(a√n) + a·k²/n² + 1`.
    pub abs_diff_shape: f64,
    /// `k²/(a√n) + a·k²/n² + k³/(a·n) + 1`.
    pub variance_shape: f64,
}

impl CouplingDiagnostics {
    pub fn new(n: usize, region: RegionConfig, s: usize) -> Self {
        let len = region.steps() * s;
        Self {
            n,
            region,
            s,
            replicates: 0,
            mismatches: vec![0; len],
            abs_diff: vec![0; len],
            diff: vec![0; len],
            sq_diff: vec![0; len],
        }
    }

    pub fn record(&mut self, run: &CoupledRegionRun) {
        let RegionConfig { a, b } = self.region;
        for (i, k) in (b..a).rev().enumerate() {
            let (w, wt) = (run.joint.at(k), run.external.at(k));
            for r in 0..self.s {
                let idx = i * self.s + r;
                let d = w[r] as i64 - wt[r] as i64;
                self.mismatches[idx] += run.mismatch[idx] as u64;
                self.abs_diff[idx] += d.unsigned_abs();
                self.diff[idx] += d;
                self.sq_diff[idx] += (d * d) as u64;
            }
        }
        self.replicates += 1;
    }

    pub fn rows(&self) -> Vec<DiagnosticRow> {
        let RegionConfig { a, b } = self.region;
        let (nf, af) = (self.n as f64, a as f64);
        let reps = self.replicates;
        let mut rows = Vec::with_capacity(self.mismatches.len());
        for (i, k) in (b..a).rev().enumerate() {
            let kf = k as f64;
            let lead = kf * kf / (af * nf.sqrt()) + af * kf * kf / (nf * nf);
            for r in 0..self.s {
                let idx = i * self.s + r;
                let var_diff = if reps > 1 {
                    let (n, sum, sq) = (reps as i128, self.diff[idx] as i128, self.sq_diff[idx] as i128);
                    (n * sq - sum * sum) as f64 / (n * (n - 1)) as f64
                } else {
                    f64::NAN
                };
                rows.push(DiagnosticRow {
                    k,
                    r: r + 1,
                    mismatch_rate: self.mismatches[idx] as f64 / reps as f64,
                    mean_abs_diff: self.abs_diff[idx] as f64 / reps as f64,
                    var_diff,
                    mismatch_shape: kf / (af * nf.sqrt()) + af * kf / (nf * nf) + 1.0 / kf,
                    abs_diff_shape: lead + 1.0,
                    variance_shape: lead + kf.powi(3) / (af * nf) + 1.0,
                });
            }
        }
        rows
    }

    fn fitted(&self, r: usize, f: impl Fn(&DiagnosticRow) -> (f64, f64)) -> f64 {
        self.rows()
            .iter()
            .filter(|row| row.r == r)
            .map(|row| {
                let (x, shape) = f(row);
                x / shape
            })
            .filter(|c| c.is_finite())
            .fold(0.0, f64::max)
    }

    /// Smallest `C` with `mismatch_rate <= C · mismatch_shape` on every row of order `r`.
    pub fn mismatch_constant(&self, r: usize) -> f64 {
        self.fitted(r, |row| (row.mismatch_rate, row.mismatch_shape))
    }

    pub fn abs_diff_constant(&self, r: usize) -> f64 {
        self.fitted(r, |row| (row.mean_abs_diff, row.abs_diff_shape))
    }

    pub fn variance_constant(&self, r: usize) -> f64 {
        self.fitted(r, |row| (row.var_diff, row.variance_shape))
    }
}

/// Aggregate of many coupled-region replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub diagnostics: CouplingDiagnostics,
    /// Per replicate, `L_{a,b}` by order.
    pub length: Vec<Vec<f64>>,
    /// Per replicate, `L̃_{a,b}` by order.
    pub length_external: Vec<Vec<f64>>,
}

/// Runs [`simulate_coupled_region`] for each replicate on its own stream.
pub fn run_coupled_region(
    n: usize,
    region: RegionConfig,
    s: usize,
    replicates: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<RegionSummary> {
    let region = RegionConfig::new(n, region.a, region.b)?;
    let runs = run_replicates(replicates, master_seed, workers, |_, rng: &mut SimRng| {
        simulate_coupled_region(n, region, s, rng)
    })?;
    let mut diagnostics = CouplingDiagnostics::new(n, region, s);
    let mut length = Vec::with_capacity(runs.len());
    let mut length_external = Vec::with_capacity(runs.len());
    for run in runs {
        diagnostics.record(&run);
        length.push(run.length);
        length_external.push(run.length_external);
    }
    Ok(RegionSummary { diagnostics, length, length_external })
}

/// Level boundaries `[n, a, b, 1]` of the three-region split. When `⌈√n⌉`
/// is not below `⌊n / ln² n⌋` the middle region is empty.
pub fn three_region_bounds(n: usize) -> [usize; 4] {
    let (a, b) = RegionConfig::default_bounds(n);
    let a = a.clamp(1, n);
    [n, a, b.min(a).max(1), 1]
}

/// Gap statistics for one order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderGap {
    pub r: usize,
    /// `√(n/ln n)·|(L - mean L) - (L̃ - mean L̃)|` per replicate.
    pub gaps: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub mean_length: f64,
    pub mean_length_external: f64,
    /// Standard errors of the two centering means.
    pub se_length: f64,
    pub se_length_external: f64,
    pub regions: Vec<RegionGap>,
}

/// Variance of the centered length difference collected in one region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGap {
    pub upper: usize,
    pub lower: usize,
    pub variance: f64,
    /// `(1/(a√n) + a/n²)·ln²(a/b) + 1/n + 1/b²` for `a = upper`, `b = lower`.
    pub bound_shape: f64,
    pub fitted_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub n: usize,
    pub s: usize,
    pub replicates: u64,
    pub bounds: [usize; 4],
    pub orders: Vec<OrderGap>,
}

/// Per-region lengths `[region][order]` of one replicate.
type RegionLengths = Vec<Vec<f64>>;

fn coupled_region_lengths(n: usize, s: usize, bounds: [usize; 4], rng: &mut SimRng) -> Result<(RegionLengths, RegionLengths)> {
    let mut sums = vec![vec![CompensatedSum::default(); s]; 3];
    let mut sums_external = sums.clone();
    let mut state = CoupledState::leaves(n, s);
    let mut coupler = Coupler::new();
    loop {
        let k = state.level;
        let region = if k > bounds[1] {
            0
        } else if k > bounds[2] {
            1
        } else {
            2
        };
        let t = 2.0 / (k as f64 * (k as f64 - 1.0));
        for r in 0..s {
            sums[region][r].add(t * state.v[r] as f64);
            sums_external[region][r].add(t * state.v_tilde[r] as f64);
        }
        if k == 2 {
            break;
        }
        coupler.step(&mut state, rng)?;
    }
    let values = |x: Vec<Vec<CompensatedSum>>| x.iter().map(|row| row.iter().map(CompensatedSum::value).collect()).collect();
    Ok((values(sums), values(sums_external)))
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mut sum = CompensatedSum::default();
    xs.clone().for_each(|x| sum.add(x));
    let mean = sum.value() / n;
    let mut ss = CompensatedSum::default();
    xs.for_each(|x| ss.add((x - mean) * (x - mean)));
    let var = if n > 1.0 { ss.value() / (n - 1.0) } else { f64::NAN };
    (mean, (var / n).sqrt())
}

fn sample_variance(xs: &[f64]) -> f64 {
    let (_, se) = mean_and_se(xs.iter().copied());
    se * se * xs.len() as f64
}

/// Median of a non-empty sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Couples `V` and `Ṽ` from the leaves all the way down and compares the
/// centered, `√(n/ln n)`-rescaled lengths by order, along with the
/// per-region variance of the centered difference.
pub fn coupled_length_gap(
    n: usize,
    s: usize,
    replicates: u64,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<GapReport> {
    if n < 100 {
        return Err(invalid!("n = {n}: the length gap needs n >= 100"));
    }
    check_orders(s)?;
    if s >= n {
        return Err(invalid!("s = {s} outside 1..={}", n - 1));
    }
    if replicates < 2 {
        return Err(invalid!("centering needs at least two replicates"));
    }
    let bounds = three_region_bounds(n);
    let runs = run_replicates(replicates, master_seed, workers, |_, rng: &mut SimRng| {
        coupled_region_lengths(n, s, bounds, rng)
    })?;
    let scale = (n as f64 / (n as f64).ln()).sqrt();
    let nf = n as f64;
    let orders = (0..s)
        .map(|r| {
            let total = |x: &RegionLengths| x.iter().map(|region| region[r]).sum::<f64>();
            let l: Vec<f64> = runs.iter().map(|(x, _)| total(x)).collect();
            let lt: Vec<f64> = runs.iter().map(|(_, y)| total(y)).collect();
            let (mean_l, se_l) = mean_and_se(l.iter().copied());
            let (mean_lt, se_lt) = mean_and_se(lt.iter().copied());
            let gaps: Vec<f64> = l
                .iter()
                .zip(&lt)
                .map(|(x, y)| scale * ((x - mean_l) - (y - mean_lt)).abs())
                .collect();
            let regions = (0..3)
                .filter(|&i| bounds[i] > bounds[i + 1])
                .map(|i| {
                    let d: Vec<f64> = runs.iter().map(|(x, y)| x[i][r] - y[i][r]).collect();
                    let variance = sample_variance(&d);
                    let (a, b) = (bounds[i] as f64, bounds[i + 1] as f64);
                    let ln = (a / b).ln();
                    let bound_shape = (1.0 / (a * nf.sqrt()) + a / (nf * nf)) * ln * ln + 1.0 / nf + 1.0 / (b * b);
                    RegionGap { upper: bounds[i], lower: bounds[i + 1], variance, bound_shape, fitted_constant: variance / bound_shape }
                })
                .collect();
            let mut mean = CompensatedSum::default();
            gaps.iter().for_each(|&g| mean.add(g));
            OrderGap {
                r: r + 1,
                median: median(&gaps),
                mean: mean.value() / gaps.len() as f64,
                gaps,
                mean_length: mean_l,
                mean_length_external: mean_lt,
                se_length: se_l,
                se_length_external: se_lt,
                regions,
            }
        })
        .collect();
    Ok(GapReport { n, s, replicates, bounds, orders })
}

/// Enumerates every state at level `k` with `s` orders, joint
/// counts summing to at most `max_total` and each external count at most
/// `min(k, max_total)`, calling `visit` on each.
pub fn for_each_grid_state(k: usize, s: usize, max_total: u32, mut visit: impl FnMut(&[u32], &[u32])) {
    let mut v = vec![0u32; s];
    let mut vt = vec![0u32; s];
    let cap = (k as u32).min(max_total);
    fn counts(i: usize, left: u32, cap: u32, bounded: bool, out: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
        if i == out.len() {
            f(out);
            return;
        }
        let top = if bounded { left } else { cap };
        for x in 0..=top.min(cap) {
            out[i] = x;
            counts(i + 1, if bounded { left - x } else { left }, cap, bounded, out, f);
        }
        out[i] = 0;
    }
    counts(0, cap, cap, true, &mut v, &mut |v| {
        let v = v.to_vec();
        counts(0, cap, cap, false, &mut vt, &mut |vt| visit(&v, vt));
    });
}

fn weight_in(w: &[(Jump, u128)], z: Jump) -> u128 {
    w.binary_search_by_key(&z, |e| e.0).map_or(0, |i| w[i].1)
}

/// Whether the two marginals of `joint` are `q` and `qt`, and the weight
/// off the diagonal. One pass: entries are sorted by the first jump, so the
/// first marginal is a merge walk over `q`.
fn joint_marginals(joint: &CoupledJumpLaw, q: &JumpLaw, qt: &JumpLaw) -> Option<u128> {
    let d = joint.denominator();
    let (f, ft) = (d / q.denominator(), d / qt.denominator());
    if f * q.denominator() != d || ft * qt.denominator() != d {
        return None;
    }
    let (first, second) = (q.entries(), qt.entries());
    let mut acc = vec![0u128; second.len()];
    let (mut i, mut run, mut off) = (0usize, 0u128, 0u128);
    for &((x, y), p) in joint.entries() {
        while first.get(i)?.0 != x {
            if first[i].0 > x || run != first[i].1 * f {
                return None;
            }
            (i, run) = (i + 1, 0);
        }
        run += p;
        acc[second.binary_search_by_key(&y, |e| e.0).ok()?] += p;
        if x != y {
            off += p;
        }
    }
    let first_ok = i + 1 == first.len() && run == first[i].1 * f;
    let second_ok = acc.iter().zip(second).all(|(&a, &(_, w))| a == w * ft);
    (first_ok && second_ok).then_some(off)
}

/// Checks every coupling identity at one state exactly. Returns a
/// description of the first failure.
pub fn check_coupling_identities(k: usize, v: &[u32], v_tilde: &[u32]) -> Result<std::result::Result<(), String>> {
    let cv = CountVector::new(k, v.to_vec())?;
    let d = optimal_coupling(k, &cv, v_tilde)?;
    let q = crate::chain::transition_law(k, v)?.rescaled(d.denominator())?;
    let qt = product_external_law(k, v_tilde)?;
    let fail = |what: &str| Ok(Err(format!("k = {k}, v = {v:?}, v~ = {v_tilde:?}: {what}")));

    let (gi, gii, giii) = (&d.gamma_i, &d.gamma_ii, &d.gamma_iii);
    let mass = |g: &Weights| g.iter().map(|e| e.1).sum::<u128>();
    let rest = d.denom - d.diag_mass;
    if mass(gi) != d.diag_mass || mass(gii) != rest || mass(giii) != rest {
        return fail("γ parts do not carry masses p and 1 - p");
    }
    let mut support: Vec<Jump> = q.entries().iter().chain(qt.entries()).map(|e| e.0).collect();
    support.sort_unstable();
    support.dedup();
    for &z in &support {
        let (a, b, c) = (weight_in(gi, z), weight_in(gii, z), weight_in(giii, z));
        // p·γ_I(z) and (1-p)·γ_II(z) are weights over the common denominator
        if a + b != q.weight(z) {
            return fail("p·γ_I + (1-p)·γ_II differs from Q");
        }
        if a + c != qt.weight(z) {
            return fail("p·γ_I + (1-p)·γ_III differs from Q~");
        }
        if b > 0 && c > 0 {
            return fail("γ_II and γ_III share support");
        }
    }
    if Ratio::from_integer(1) - d.p() != tv_distance(&q, &qt)? {
        return fail("1 - p differs from TV");
    }
    let joint = d.joint_law()?;
    let Some(off) = joint_marginals(&joint, &q, &qt) else {
        return fail("coupled marginals differ from Q, Q~");
    };
    if Ratio::new(off, joint.denominator()) != d.tv() {
        return fail("mismatch probability differs from TV");
    }
    Ok(Ok(()))
}
