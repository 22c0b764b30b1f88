//! Random walks on subgroups of G̃ and their diagnostics.
//!
//! Walks never form the product `gₙ = hₙ₋₁ ∘ … ∘ h₀`. They carry the image
//! `xₙ = gₙ(γ)` of a marked point and update `C_{gₙ}(γ)` with
//! `C_{h∘g}(γ) = C_g(γ) + C_h(g(γ))`.
//!
//! Trajectory `i` of a run with master seed `m` draws from the ChaCha8 stream
//! `i` keyed by `m`, so results do not depend on scheduling.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::{qn_canonical_key, ExtendedPoint, PointKey, Rational};
use crate::piecewise::{configuration, pm_compose, pm_inverse, pm_pow, PiecewiseProjectiveMap};
use crate::psl2::orbit_equivalent;
use crate::schreier::{ComparisonKernel, Step, TreePosition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WalkError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("{gamma} is not in the orbit of {base}")]
    NotInOrbit { gamma: ExtendedPoint, base: ExtendedPoint },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "threads")]
pub enum Execution {
    Sequential,
    /// Falls back to sequential execution without the `parallel` feature.
    Parallel(usize),
}

impl Execution {
    pub fn from_threads(threads: usize) -> Self {
        if threads <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel(threads)
        }
    }
}

/// RNG of trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Runs `m` independent trajectories and returns their results in index order.
pub fn run_trajectories<R, F>(m: u64, master_seed: u64, exec: Execution, job: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> R + Sync + Send,
{
    let run = |i: u64| job(i, &mut trajectory_rng(master_seed, i));
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel(threads) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool");
            pool.install(|| (0..m).into_par_iter().map(run).collect())
        }
        _ => (0..m).map(run).collect(),
    }
}

/// Uniform draw in `(0, 1]`.
fn unit_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

const TABLE_SIZE: usize = 1 << 16;

/// Symmetric power law `P(±m) = m^{−1−α} / (2ζ(1+α))` on ℤ∖{0}.
///
/// Inversion uses exact backward partial sums for `m ≤ 2¹⁶` and the
/// Euler–Maclaurin expansion of the Hurwitz zeta tail beyond. Uniforms below
/// `2⁻³⁰` are refined with fresh draws, so the support is not truncated.
#[derive(Clone, Debug)]
pub struct PowerLawSampler {
    alpha: f64,
    s: f64,
    ln_zeta: f64,
    /// `tail[m] = P(|n| ≥ m)` for `1 ≤ m ≤ TABLE_SIZE + 1`
    tail: Vec<f64>,
}

impl PowerLawSampler {
    pub fn new(alpha: f64) -> Result<Self, WalkError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(WalkError::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        let s = 1.0 + alpha;
        let mut partial = vec![0.0f64; TABLE_SIZE + 2];
        partial[TABLE_SIZE + 1] = hurwitz_em(s, (TABLE_SIZE + 1) as f64);
        for m in (1..=TABLE_SIZE).rev() {
            partial[m] = partial[m + 1] + (m as f64).powf(-s);
        }
        let zeta = partial[1];
        let tail = partial.iter().map(|z| z / zeta).collect();
        Ok(PowerLawSampler {
            alpha,
            s,
            ln_zeta: zeta.ln(),
            tail,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `ζ(1 + α)`.
    pub fn zeta(&self) -> f64 {
        self.ln_zeta.exp()
    }

    /// `P(|n| = m)`.
    pub fn pmf_abs(&self, m: u64) -> f64 {
        (m as f64).powf(-self.s) / self.zeta()
    }

    /// `ln P(|n| ≥ m)` for `m > 2¹⁶`.
    fn ln_tail_far(&self, m: f64) -> f64 {
        ln_hurwitz_em(self.s, m) - self.ln_zeta
    }

    pub fn sample_abs<R: Rng + ?Sized>(&self, rng: &mut R) -> BigInt {
        let threshold = 2f64.powi(-30);
        let mut ln_u = 0.0;
        loop {
            let v = unit_open_closed(rng);
            if v >= threshold {
                ln_u += v.ln();
                break;
            }
            ln_u -= 30.0 * std::f64::consts::LN_2;
        }
        if ln_u >= self.tail[TABLE_SIZE + 1].ln() {
            let u = ln_u.exp();
            // largest m with P(|n| ≥ m) ≥ u
            let m = self.tail[1..=TABLE_SIZE].partition_point(|&t| t >= u);
            return BigInt::from(m.max(1));
        }
        let mut lo = (TABLE_SIZE + 1) as f64;
        let mut hi = lo * 2.0;
        while self.ln_tail_far(hi) >= ln_u {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1.0 && hi - lo > lo * 1e-15 {
            let mid = ((lo + hi) / 2.0).floor();
            if self.ln_tail_far(mid) >= ln_u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        BigInt::from_f64(lo.floor()).expect("finite magnitude")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BigInt {
        let m = self.sample_abs(rng);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    }
}

/// `ζ(s, n) = Σ_{m ≥ n} m^{−s}` by Euler–Maclaurin, accurate for large `n`.
fn hurwitz_em(s: f64, n: f64) -> f64 {
    ln_hurwitz_em(s, n).exp()
}

fn ln_hurwitz_em(s: f64, n: f64) -> f64 {
    let correction =
        (s - 1.0) / (2.0 * n) + s * (s - 1.0) / (12.0 * n * n) - s * (s + 1.0) * (s + 2.0) * (s - 1.0) / (720.0 * n.powi(4));
    (1.0 - s) * n.ln() - (s - 1.0).ln() + correction.ln_1p()
}

/// Symmetric heavy-tailed cyclic component `P(baseⁿ) ∝ |n|^{−1−α}`.
#[derive(Clone, Debug)]
pub struct HeavyTail {
    pub base: PiecewiseProjectiveMap,
    pub alpha: Rational,
    pub weight: Rational,
}

/// Step distribution: weighted atoms, an optional heavy-tailed cyclic part,
/// and optional Poisson(1) smoothing `μ̃ = e⁻¹ Σ μ^{*i}/i!`.
#[derive(Clone, Debug)]
pub struct GroupMeasure {
    atoms: Vec<(PiecewiseProjectiveMap, Rational)>,
    tail: Option<HeavyTail>,
    smoothing: bool,
    cumulative: Vec<f64>,
    sampler: Option<PowerLawSampler>,
}

/// A draw from a [`GroupMeasure`], kept symbolic until needed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Increment {
    Atom(usize),
    TailPower(BigInt),
    /// Applied left to right: the first factor acts first.
    Product(Vec<Increment>),
}

impl GroupMeasure {
    pub fn new(
        atoms: Vec<(PiecewiseProjectiveMap, Rational)>,
        tail: Option<HeavyTail>,
        smoothing: bool,
    ) -> Result<Self, WalkError> {
        let invalid = |m: String| Err(WalkError::InvalidMeasure(m));
        if atoms.iter().any(|(_, w)| !w.is_positive()) {
            return invalid("atom weights must be positive".into());
        }
        let mut total: Rational = atoms.iter().map(|(_, w)| w.clone()).sum();
        let mut sampler = None;
        if let Some(t) = &tail {
            let alpha = t.alpha.to_f64().unwrap_or(f64::NAN);
            if !t.weight.is_positive() {
                return invalid("tail weight must be positive".into());
            }
            sampler = Some(PowerLawSampler::new(alpha).map_err(|e| WalkError::InvalidMeasure(e.to_string()))?);
            total += &t.weight;
        }
        if total != Rational::from_integer(BigInt::from(1)) {
            return invalid(format!("total weight is {total}, expected 1"));
        }
        let mut cumulative = Vec::with_capacity(atoms.len() + 1);
        let mut acc = 0.0;
        for (_, w) in &atoms {
            acc += w.to_f64().unwrap();
            cumulative.push(acc);
        }
        if let Some(t) = &tail {
            acc += t.weight.to_f64().unwrap();
            cumulative.push(acc);
        }
        Ok(GroupMeasure {
            atoms,
            tail,
            smoothing,
            cumulative,
            sampler,
        })
    }

    pub fn point_mass(h: PiecewiseProjectiveMap) -> Self {
        Self::new(vec![(h, Rational::from_integer(BigInt::from(1)))], None, false).expect("valid point mass")
    }

    /// Equal weights on the given maps.
    pub fn uniform(maps: Vec<PiecewiseProjectiveMap>) -> Result<Self, WalkError> {
        if maps.is_empty() {
            return Err(WalkError::InvalidMeasure("no atoms".into()));
        }
        let w = Rational::new(BigInt::from(1), BigInt::from(maps.len()));
        Self::new(maps.into_iter().map(|h| (h, w.clone())).collect(), None, false)
    }

    /// `(1 − ε)` uniform on `{h_s^{±1}, h̃_s^{±1}}` plus `ε` on the power law
    /// of `x ↦ x + 1` with exponent `α`.
    pub fn witness_measure(
        h_s: &PiecewiseProjectiveMap,
        h_tilde: &PiecewiseProjectiveMap,
        epsilon: Rational,
        alpha: Rational,
    ) -> Result<Self, WalkError> {
        let one = Rational::from_integer(BigInt::from(1));
        let each = (&one - &epsilon) / Rational::from_integer(BigInt::from(4));
        let atoms = [h_s.clone(), pm_inverse(h_s), h_tilde.clone(), pm_inverse(h_tilde)]
            .into_iter()
            .map(|h| (h, each.clone()))
            .collect();
        let tail = HeavyTail {
            base: PiecewiseProjectiveMap::translation(1),
            alpha,
            weight: epsilon,
        };
        Self::new(atoms, Some(tail), false)
    }

    pub fn with_smoothing(mut self, smoothing: bool) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn atoms(&self) -> &[(PiecewiseProjectiveMap, Rational)] {
        &self.atoms
    }

    pub fn tail(&self) -> Option<&HeavyTail> {
        self.tail.as_ref()
    }

    pub fn smoothing(&self) -> bool {
        self.smoothing
    }

    pub fn sampler(&self) -> Option<&PowerLawSampler> {
        self.sampler.as_ref()
    }

    fn sample_single<R: Rng + ?Sized>(&self, rng: &mut R) -> Increment {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        if idx < self.atoms.len() {
            Increment::Atom(idx)
        } else {
            Increment::TailPower(self.sampler.as_ref().expect("tail sampler").sample(rng))
        }
    }

    pub fn sample_symbolic<R: Rng + ?Sized>(&self, rng: &mut R) -> Increment {
        if self.smoothing {
            let count = Poisson::new(1.0).expect("valid rate").sample(rng) as usize;
            Increment::Product((0..count).map(|_| self.sample_single(rng)).collect())
        } else {
            self.sample_single(rng)
        }
    }

    /// The group element a symbolic increment stands for.
    pub fn materialize(&self, inc: &Increment) -> PiecewiseProjectiveMap {
        match inc {
            Increment::Atom(i) => self.atoms[*i].0.clone(),
            Increment::TailPower(n) => {
                let base = &self.tail.as_ref().expect("tail present").base;
                match base.as_translation() {
                    Some(shift) => PiecewiseProjectiveMap::translation(shift * n),
                    None => pm_pow(base, n.to_i64().expect("tail exponent of a non-translation base fits i64")),
                }
            }
            Increment::Product(factors) => factors.iter().fold(PiecewiseProjectiveMap::identity(), |acc, f| {
                pm_compose(&self.materialize(f), &acc)
            }),
        }
    }
}

pub fn sample_increment<R: Rng + ?Sized>(mu: &GroupMeasure, rng: &mut R) -> PiecewiseProjectiveMap {
    mu.materialize(&mu.sample_symbolic(rng))
}

/// Current point of a walk with a float shadow used only to skip maps whose
/// breaks are all far away.
#[derive(Clone, Debug)]
pub struct WalkPoint {
    x: ExtendedPoint,
    approx: f64,
}

impl WalkPoint {
    pub fn new(x: ExtendedPoint) -> Self {
        let approx = x.finite().map_or(f64::INFINITY, |q| q.to_f64());
        WalkPoint { x, approx }
    }

    pub fn point(&self) -> &ExtendedPoint {
        &self.x
    }

    fn set(&mut self, x: ExtendedPoint) {
        *self = WalkPoint::new(x);
    }

    fn translate(&mut self, n: &BigInt) {
        if n.is_zero() {
            return;
        }
        if let ExtendedPoint::Finite(q) = &self.x {
            self.set(ExtendedPoint::Finite(q.add_integer(n)));
        }
    }
}

/// An atom with its configuration on the orbit and the float hull of its breaks.
#[derive(Clone, Debug)]
struct AtomView {
    map: PiecewiseProjectiveMap,
    config: HashMap<PointKey, i64>,
    hull: Option<(f64, f64)>,
    left_shift: BigInt,
    right_shift: BigInt,
}

impl AtomView {
    fn new(map: &PiecewiseProjectiveMap, s: &ExtendedPoint) -> Self {
        let config = configuration(map, s).iter().map(|(p, v)| (qn_canonical_key(p), v)).collect();
        let hull = match (map.breaks().first(), map.breaks().last()) {
            (Some(lo), Some(hi)) => Some((lo.to_f64(), hi.to_f64())),
            _ => None,
        };
        let (left_shift, right_shift) = map.end_shifts();
        AtomView {
            map: map.clone(),
            config,
            hull,
            left_shift,
            right_shift,
        }
    }

    /// Applies the atom and returns its configuration value at the old point.
    fn act(&self, pt: &mut WalkPoint) -> i64 {
        if pt.x.is_infinity() {
            let c = self.config.get(&qn_canonical_key(&pt.x)).copied().unwrap_or(0);
            return c;
        }
        match self.hull {
            None => {
                pt.translate(&self.left_shift);
                return 0;
            }
            Some((lo, hi)) => {
                let xf = pt.approx;
                let tol = 1e-6 * (1.0 + xf.abs() + lo.abs().max(hi.abs()));
                if xf + tol < lo {
                    pt.translate(&self.left_shift);
                    return 0;
                }
                if xf - tol > hi {
                    pt.translate(&self.right_shift);
                    return 0;
                }
            }
        }
        let c = if self.config.is_empty() {
            0
        } else {
            self.config.get(&qn_canonical_key(&pt.x)).copied().unwrap_or(0)
        };
        let y = self.map.apply(&pt.x);
        pt.set(y);
        c
    }
}

/// Induced walk of `μ` on the orbit of a base point, with configuration
/// increments relative to that base.
#[derive(Clone, Debug)]
pub struct PointWalker {
    mu: GroupMeasure,
    base: ExtendedPoint,
    atoms: Vec<AtomView>,
    tail_shift: Option<BigInt>,
}

impl PointWalker {
    pub fn new(mu: &GroupMeasure, base: &ExtendedPoint) -> Self {
        let atoms = mu.atoms.iter().map(|(h, _)| AtomView::new(h, base)).collect();
        let tail_shift = mu.tail.as_ref().and_then(|t| t.base.as_translation().cloned());
        PointWalker {
            mu: mu.clone(),
            base: base.clone(),
            atoms,
            tail_shift,
        }
    }

    pub fn measure(&self) -> &GroupMeasure {
        &self.mu
    }

    pub fn base(&self) -> &ExtendedPoint {
        &self.base
    }

    /// Applies `inc` to the point and returns `C_inc(old point)`.
    pub fn apply(&self, inc: &Increment, pt: &mut WalkPoint) -> i64 {
        match inc {
            Increment::Atom(i) => self.atoms[*i].act(pt),
            Increment::TailPower(n) => match &self.tail_shift {
                Some(shift) => {
                    pt.translate(&(shift * n));
                    0
                }
                None => {
                    let h = self.mu.materialize(inc);
                    let c = configuration(&h, &self.base).get(&pt.x);
                    pt.set(h.apply(&pt.x));
                    c
                }
            },
            Increment::Product(factors) => factors.iter().map(|f| self.apply(f, pt)).sum(),
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, pt: &mut WalkPoint, rng: &mut R) -> (Increment, i64) {
        let inc = self.mu.sample_symbolic(rng);
        let c = self.apply(&inc, pt);
        (inc, c)
    }
}

/// Value of `C_{gₙ}` at the marked point `γ`, tracked along the walk.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigTracker {
    pub gamma: ExtendedPoint,
    /// `gₙ(γ)`
    pub x: ExtendedPoint,
    pub value: i64,
    pub steps: u64,
    pub last_change: Option<u64>,
    pub change_log: Vec<u64>,
}

impl ConfigTracker {
    pub fn new(gamma: ExtendedPoint) -> Self {
        ConfigTracker {
            x: gamma.clone(),
            gamma,
            value: 0,
            steps: 0,
            last_change: None,
            change_log: Vec::new(),
        }
    }

    /// No change in `(horizon/2, horizon]`.
    pub fn stabilized_by(&self, horizon: u64) -> bool {
        self.change_log.iter().filter(|&&n| n <= horizon).all(|&n| 2 * n <= horizon)
    }

    /// Value after `horizon` steps.
    pub fn value_at(&self, horizon: u64, values: &[(u64, i64)]) -> i64 {
        values.iter().take_while(|(n, _)| *n <= horizon).last().map_or(0, |(_, v)| *v)
    }
}

fn check_orbit(s: &ExtendedPoint, gamma: &ExtendedPoint) -> Result<(), WalkError> {
    if orbit_equivalent(s, gamma) {
        Ok(())
    } else {
        Err(WalkError::NotInOrbit {
            gamma: gamma.clone(),
            base: s.clone(),
        })
    }
}

/// Runs `T` steps, returning the tracker and the symbolic increments drawn.
pub fn simulate_config_walk_recorded<R: Rng + ?Sized>(
    walker: &PointWalker,
    gamma: &ExtendedPoint,
    steps: u64,
    rng: &mut R,
    record: bool,
) -> Result<(ConfigTracker, Vec<Increment>), WalkError> {
    check_orbit(walker.base(), gamma)?;
    let mut tracker = ConfigTracker::new(gamma.clone());
    let mut pt = WalkPoint::new(gamma.clone());
    let mut log = Vec::new();
    for n in 1..=steps {
        let (inc, c) = walker.step(&mut pt, rng);
        if c != 0 {
            tracker.value += c;
            tracker.last_change = Some(n);
            tracker.change_log.push(n);
        }
        if record {
            log.push(inc);
        }
    }
    tracker.steps = steps;
    tracker.x = pt.x;
    Ok((tracker, log))
}

pub fn simulate_config_walk<R: Rng + ?Sized>(
    mu: &GroupMeasure,
    s: &ExtendedPoint,
    gamma: &ExtendedPoint,
    steps: u64,
    rng: &mut R,
) -> Result<ConfigTracker, WalkError> {
    let walker = PointWalker::new(mu, s);
    simulate_config_walk_recorded(&walker, gamma, steps, rng, false).map(|(t, _)| t)
}

/// A Markov chain on points with a distinguished start.
pub trait PointProcess: Sync {
    type State: Send;
    fn start(&self) -> Self::State;
    fn advance(&self, state: &mut Self::State, rng: &mut ChaCha8Rng);
    fn is_start(&self, state: &Self::State) -> bool;
}

/// The induced walk of a measure started at a point.
pub struct MeasureWalk {
    walker: PointWalker,
    start: ExtendedPoint,
}

impl MeasureWalk {
    pub fn new(mu: &GroupMeasure, start: &ExtendedPoint) -> Self {
        MeasureWalk {
            walker: PointWalker::new(mu, start),
            start: start.clone(),
        }
    }
}

impl PointProcess for MeasureWalk {
    type State = WalkPoint;
    fn start(&self) -> WalkPoint {
        WalkPoint::new(self.start.clone())
    }
    fn advance(&self, state: &mut WalkPoint, rng: &mut ChaCha8Rng) {
        self.walker.step(state, rng);
    }
    fn is_start(&self, state: &WalkPoint) -> bool {
        state.x == self.start
    }
}

/// Simple random walk on the Schreier graph of a verified 2-prechain at `b`,
/// run on the combinatorial tree-with-rays model.
pub struct PrechainTreeWalk;

impl PointProcess for PrechainTreeWalk {
    type State = TreePosition;
    fn start(&self) -> TreePosition {
        TreePosition::root()
    }
    fn advance(&self, state: &mut TreePosition, rng: &mut ChaCha8Rng) {
        state.step(Step::ALL[rng.random_range(0..4)]);
    }
    fn is_start(&self, state: &TreePosition) -> bool {
        state.is_root()
    }
}

/// Simple random walk on ℤ, the orbit of 0 under `x ↦ x ± 1`.
pub struct LatticeWalk;

impl PointProcess for LatticeWalk {
    type State = i64;
    fn start(&self) -> i64 {
        0
    }
    fn advance(&self, state: &mut i64, rng: &mut ChaCha8Rng) {
        *state += if rng.random::<bool>() { 1 } else { -1 };
    }
    fn is_start(&self, state: &i64) -> bool {
        *state == 0
    }
}

/// Walk driven by the comparison kernel `P₂`.
pub struct KernelWalk {
    pub kernel: ComparisonKernel,
}

impl PointProcess for KernelWalk {
    type State = ExtendedPoint;
    fn start(&self) -> ExtendedPoint {
        self.kernel.layout().b.clone()
    }
    fn advance(&self, state: &mut ExtendedPoint, rng: &mut ChaCha8Rng) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for step in Step::ALL {
            acc += self
                .kernel
                .weight(state, step)
                .expect("walk stays in (a, d)")
                .to_f64()
                .unwrap();
            if u < acc {
                *state = self.kernel.apply(state, step);
                return;
            }
        }
    }
    fn is_start(&self, state: &ExtendedPoint) -> bool {
        *state == self.kernel.layout().b
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReturnEstimate {
    pub horizon: u64,
    pub trajectories: u64,
    /// Mean number of `1 ≤ n ≤ horizon` with `xₙ = x₀`.
    pub mean: f64,
    pub stderr: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Return counts at each horizon, from the same trajectories.
pub fn estimate_returns<P: PointProcess>(
    process: &P,
    horizons: &[u64],
    trajectories: u64,
    master_seed: u64,
    exec: Execution,
) -> Vec<ReturnEstimate> {
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let counts = run_trajectories(trajectories, master_seed, exec, |_, rng| {
        let mut state = process.start();
        let mut hits = vec![0u64; horizons.len()];
        for n in 1..=max_h {
            process.advance(&mut state, rng);
            if process.is_start(&state) {
                for (h, slot) in horizons.iter().zip(hits.iter_mut()) {
                    if n <= *h {
                        *slot += 1;
                    }
                }
            }
        }
        hits
    });
    horizons
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let vals: Vec<f64> = counts.iter().map(|c| c[i] as f64).collect();
            let (mean, stderr) = mean_stderr(&vals);
            ReturnEstimate {
                horizon: h,
                trajectories,
                mean,
                stderr,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SummabilityReport {
    pub steps: u64,
    pub trajectories: u64,
    /// Empirical `P(xₙ ∈ supp C_{hₙ})` for `n = 1..=T`.
    pub hit_mass: Vec<f64>,
    /// Partial sums `S_N` of `hit_mass`.
    pub cumulative: Vec<f64>,
    /// `Σ_h μ(h)·|supp C_h ∩ Gs|` over the atoms.
    #[serde(serialize_with = "ser_display")]
    pub f_mu_atoms_l1: Rational,
}

fn ser_display<S: serde::Serializer, T: std::fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

pub fn summability_diagnostic(
    mu: &GroupMeasure,
    s: &ExtendedPoint,
    o: &ExtendedPoint,
    steps: u64,
    trajectories: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<SummabilityReport, WalkError> {
    check_orbit(s, o)?;
    let walker = PointWalker::new(mu, s);
    let hits = run_trajectories(trajectories, master_seed, exec, |_, rng| {
        let mut pt = WalkPoint::new(o.clone());
        (0..steps).map(|_| walker.step(&mut pt, rng).1 != 0).collect::<Vec<bool>>()
    });
    let mut hit_mass = vec![0.0; steps as usize];
    for run in &hits {
        for (slot, &h) in hit_mass.iter_mut().zip(run) {
            if h {
                *slot += 1.0;
            }
        }
    }
    for slot in &mut hit_mass {
        *slot /= trajectories as f64;
    }
    let cumulative = hit_mass
        .iter()
        .scan(0.0, |acc, &h| {
            *acc += h;
            Some(*acc)
        })
        .collect();
    let f_mu_atoms_l1 = mu
        .atoms
        .iter()
        .map(|(h, w)| w * Rational::from_integer(BigInt::from(configuration(h, s).len())))
        .sum();
    Ok(SummabilityReport {
        steps,
        trajectories,
        hit_mass,
        cumulative,
        f_mu_atoms_l1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Succeed,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    pub steps: u64,
    pub trajectories: u64,
    pub stabilization_rule: String,
    pub stabilized: u64,
    pub stabilized_fraction: f64,
    pub non_stabilized_fraction: f64,
    /// Final values `C(s)` of the stabilized runs.
    pub histogram: BTreeMap<i64, u64>,
    /// Values each carrying at least 10% of all runs.
    pub frequent_values: Vec<i64>,
    pub verdict: Verdict,
}

pub const WITNESS_STABILIZED_MIN: f64 = 0.95;
pub const WITNESS_VALUE_FREQ_MIN: f64 = 0.10;

/// Tracks `C_{gₙ}(s)`; succeeds when at least 95% of runs stabilize and two
/// distinct limit values each occur in at least 10% of runs.
pub fn nontriviality_witness(
    mu: &GroupMeasure,
    s: &ExtendedPoint,
    steps: u64,
    trajectories: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<WitnessReport, WalkError> {
    let walker = PointWalker::new(mu, s);
    check_orbit(s, s)?;
    let runs = run_trajectories(trajectories, master_seed, exec, |_, rng| {
        let (t, _) = simulate_config_walk_recorded(&walker, s, steps, rng, false).expect("s is in its own orbit");
        (t.stabilized_by(steps), t.value)
    });
    let mut histogram = BTreeMap::new();
    let mut stabilized = 0u64;
    for &(ok, v) in &runs {
        if ok {
            stabilized += 1;
            *histogram.entry(v).or_insert(0u64) += 1;
        }
    }
    let m = trajectories as f64;
    let frequent_values: Vec<i64> = histogram
        .iter()
        .filter(|(_, &c)| c as f64 >= WITNESS_VALUE_FREQ_MIN * m)
        .map(|(&v, _)| v)
        .collect();
    let stabilized_fraction = stabilized as f64 / m;
    let verdict = if stabilized_fraction >= WITNESS_STABILIZED_MIN && frequent_values.len() >= 2 {
        Verdict::Succeed
    } else {
        Verdict::Fail
    };
    Ok(WitnessReport {
        steps,
        trajectories,
        stabilization_rule: format!("no change of C(s) in steps ({}, {}]", steps / 2, steps),
        stabilized,
        stabilized_fraction,
        non_stabilized_fraction: 1.0 - stabilized_fraction,
        histogram,
        frequent_values,
        verdict,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    pub n: u64,
    pub samples: u64,
    pub distinct: usize,
    /// Plug-in entropy of `μ^{*n}` in nats; biased low.
    pub entropy: f64,
    pub entropy_per_step: f64,
    pub stderr: f64,
    pub caveat: String,
}

/// Plug-in estimate of `H(μ^{*n})` from sampled products keyed by their
/// reduced text form. Diagnostic only.
pub fn entropy_estimate(
    mu: &GroupMeasure,
    n: u64,
    samples: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<EntropyReport, WalkError> {
    if n == 0 || samples == 0 {
        return Err(WalkError::InvalidParameter("n and M must be positive".into()));
    }
    let keys = run_trajectories(samples, master_seed, exec, |_, rng| {
        let mut g = PiecewiseProjectiveMap::identity();
        for _ in 0..n {
            let h = sample_increment(mu, rng);
            g = pm_compose(&h, &g);
        }
        g.to_string()
    });
    let mut counts: HashMap<String, u64> = HashMap::new();
    for k in keys {
        *counts.entry(k).or_insert(0) += 1;
    }
    let m = samples as f64;
    let mut entropy = 0.0;
    let mut second = 0.0;
    for &c in counts.values() {
        let p = c as f64 / m;
        entropy -= p * p.ln();
        second += p * p.ln().powi(2);
    }
    // delta-method standard error of the plug-in estimator
    let stderr = ((second - entropy * entropy).max(0.0) / m).sqrt();
    Ok(EntropyReport {
        n,
        samples,
        distinct: counts.len(),
        entropy,
        entropy_per_step: entropy / n as f64,
        stderr,
        caveat: "plug-in estimate; biased low when the support is undersampled".into(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LamplighterReport {
    pub alpha: f64,
    pub trajectories: u64,
    pub horizons: Vec<u64>,
    pub stabilization_rule: String,
    /// Stabilized fraction of the origin lamp under power-law moves, per horizon.
    pub transient: Vec<f64>,
    /// Same with simple random walk moves.
    pub control: Vec<f64>,
}

/// Origin-lamp change times of one lamplighter trajectory: each step moves by
/// a draw of `jump` or toggles the lamp at the current position, 1:1.
fn lamp_changes<R: Rng + ?Sized, J: Fn(&mut R) -> BigInt>(steps: u64, rng: &mut R, jump: J) -> Vec<u64> {
    let mut pos = BigInt::zero();
    let mut changes = Vec::new();
    for n in 1..=steps {
        if rng.random::<bool>() {
            pos += jump(rng);
        } else if pos.is_zero() {
            changes.push(n);
        }
    }
    changes
}

fn stabilized_fraction(runs: &[Vec<u64>], horizon: u64) -> f64 {
    let ok = runs
        .iter()
        .filter(|c| c.iter().filter(|&&n| n <= horizon).all(|&n| 2 * n <= horizon))
        .count();
    ok as f64 / runs.len() as f64
}

/// Lamplighter over ℤ: transient power-law base walk against the recurrent
/// simple random walk, at each horizon from the same trajectories.
pub fn lamplighter_demo(
    alpha: f64,
    horizons: &[u64],
    trajectories: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<LamplighterReport, WalkError> {
    let sampler = PowerLawSampler::new(alpha)?;
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let transient = run_trajectories(trajectories, master_seed, exec, |_, rng| {
        lamp_changes(max_h, rng, |r| sampler.sample(r))
    });
    let control_seed = master_seed ^ 0x5EED_C0DE;
    let control = run_trajectories(trajectories, control_seed, exec, |_, rng| {
        lamp_changes(max_h, rng, |r| {
            if r.random::<bool>() {
                BigInt::from(1)
            } else {
                BigInt::from(-1)
            }
        })
    });
    Ok(LamplighterReport {
        alpha,
        trajectories,
        horizons: horizons.to_vec(),
        stabilization_rule: "no change of the origin lamp in steps (T/2, T]".into(),
        transient: horizons.iter().map(|&h| stabilized_fraction(&transient, h)).collect(),
        control: horizons.iter().map(|&h| stabilized_fraction(&control, h)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::piecewise::construct_h_s;

    fn pt(s: &str) -> ExtendedPoint {
        s.parse().unwrap()
    }

    #[test]
    fn power_law_table_meets_asymptotics() {
        let p = PowerLawSampler::new(0.8).unwrap();
        let m = (TABLE_SIZE + 1) as f64;
        assert!((p.ln_tail_far(m) - p.tail[TABLE_SIZE + 1].ln()).abs() < 1e-12);
        // ζ(1.8) = 1.8822296...
        assert!((p.zeta() - 1.882_229_618_2).abs() < 1e-8, "{}", p.zeta());
        // direct sum against the expansion well inside the table
        let direct: f64 =
            (1000..=TABLE_SIZE).map(|k| (k as f64).powf(-1.8)).sum::<f64>() + hurwitz_em(1.8, (TABLE_SIZE + 1) as f64);
        assert!((direct / hurwitz_em(1.8, 1000.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_law_draws_are_unbounded_and_symmetric() {
        let p = PowerLawSampler::new(0.5).unwrap();
        let mut rng = trajectory_rng(1, 0);
        let draws: Vec<BigInt> = (0..20_000).map(|_| p.sample(&mut rng)).collect();
        assert!(draws.iter().all(|d| !d.is_zero()));
        assert!(draws.iter().any(|d| d.abs() > BigInt::from(TABLE_SIZE)));
        let pos = draws.iter().filter(|d| d.is_positive()).count() as f64 / 20_000.0;
        assert!((pos - 0.5).abs() < 0.02);
    }

    #[test]
    fn point_mass_walks() {
        let s = pt("0+1*sqrt(3)");
        let h = construct_h_s(&s).unwrap();
        let mut rng = trajectory_rng(3, 0);
        let t = simulate_config_walk(&GroupMeasure::point_mass(h), &s, &s, 50, &mut rng).unwrap();
        assert_eq!((t.value, &t.x), (50, &s));
        let a = GroupMeasure::point_mass(PiecewiseProjectiveMap::translation(1));
        let t = simulate_config_walk(&a, &s, &pt("0+1*sqrt(3)"), 30, &mut rng).unwrap();
        assert_eq!(t.value, 0);
        assert_eq!(t.x, pt("30+1*sqrt(3)"));
        assert!(simulate_config_walk(&a, &s, &pt("0+1*sqrt(2)"), 3, &mut rng).is_err());
    }

    #[test]
    fn trajectories_do_not_depend_on_execution() {
        let job = |i: u64, rng: &mut ChaCha8Rng| (i, rng.random::<u64>());
        let seq = run_trajectories(16, 9, Execution::Sequential, job);
        let par = run_trajectories(16, 9, Execution::Parallel(4), job);
        assert_eq!(seq, par);
    }

    #[test]
    fn measure_validation() {
        let a = PiecewiseProjectiveMap::translation(1);
        let half = Rational::new(BigInt::from(1), BigInt::from(2));
        assert!(GroupMeasure::new(vec![(a.clone(), half.clone())], None, false).is_err());
        let tail = HeavyTail {
            base: a.clone(),
            alpha: Rational::from_integer(BigInt::from(1)),
            weight: half.clone(),
        };
        assert!(GroupMeasure::new(vec![(a, half)], Some(tail), false).is_err());
    }
}
