//! Piecewise PSL₂(ℤ) homeomorphisms of the line fixing ∞.
//!
//! A map is stored in reduced form: finite break points in increasing order
//! and one matrix per closed interval between them. Both unbounded pieces are
//! translations. When they differ the map also breaks at ∞; that break is
//! implicit and counted by [`breakpoint_count`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::{qn_canonical_key, simplest_rational_between, ExtendedPoint, PointKey, QuadraticNumber, Rational};
use crate::psl2::{
    element_fixing_point, germ_exponent, mat_classify, mat_fixed_points, orbit_equivalent, stabilizer_generator, MatrixClass,
    ProjectiveMatrix, Psl2Error,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PiecewiseError {
    #[error("pieces disagree at break {0}")]
    Discontinuous(ExtendedPoint),
    #[error("break points are not strictly increasing at {0}")]
    NotIncreasing(ExtendedPoint),
    #[error("pole of piece {0} lies in the closed interval it covers")]
    PoleInsidePiece(usize),
    #[error("unbounded pieces must be translations")]
    EndGermNotTranslation,
    #[error("malformed map: {0}")]
    Malformed(String),
    #[error("{0} is not fixed by the map")]
    NotFixed(ExtendedPoint),
    #[error("{0} is rational; expected a quadratic irrational")]
    RationalBase(ExtendedPoint),
    #[error("construction failed: {0}")]
    ConstructionFailed(String),
    #[error(transparent)]
    Psl2(#[from] Psl2Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PiecewiseProjectiveMap {
    breaks: Vec<QuadraticNumber>,
    pieces: Vec<ProjectiveMatrix>,
}

/// Validates and reduces a map given by its break points and pieces.
pub fn pm_new(breaks: Vec<ExtendedPoint>, pieces: Vec<ProjectiveMatrix>) -> Result<PiecewiseProjectiveMap, PiecewiseError> {
    if pieces.len() != breaks.len() + 1 {
        return Err(PiecewiseError::Malformed(format!(
            "{} breaks need {} pieces, got {}",
            breaks.len(),
            breaks.len() + 1,
            pieces.len()
        )));
    }
    let mut finite = Vec::with_capacity(breaks.len());
    for b in breaks {
        match b {
            ExtendedPoint::Finite(x) => finite.push(x),
            ExtendedPoint::Infinity => {
                return Err(PiecewiseError::Malformed(
                    "∞ is an implicit break; list finite breaks only".into(),
                ))
            }
        }
    }
    for w in finite.windows(2) {
        if w[0] >= w[1] {
            return Err(PiecewiseError::NotIncreasing(ExtendedPoint::Finite(w[1].clone())));
        }
    }
    if !pieces[0].is_translation() || !pieces[pieces.len() - 1].is_translation() {
        return Err(PiecewiseError::EndGermNotTranslation);
    }
    for (i, m) in pieces.iter().enumerate().skip(1).take(pieces.len().saturating_sub(2)) {
        if let Some(pole) = m.pole() {
            if finite[i - 1] <= pole && pole <= finite[i] {
                return Err(PiecewiseError::PoleInsidePiece(i));
            }
        }
    }
    for (i, b) in finite.iter().enumerate() {
        if pieces[i].apply_finite(b) != pieces[i + 1].apply_finite(b) {
            return Err(PiecewiseError::Discontinuous(ExtendedPoint::Finite(b.clone())));
        }
    }
    Ok(reduce(finite, pieces))
}

/// Drops breaks whose adjacent pieces coincide.
fn reduce(breaks: Vec<QuadraticNumber>, pieces: Vec<ProjectiveMatrix>) -> PiecewiseProjectiveMap {
    let mut out_breaks = Vec::with_capacity(breaks.len());
    let mut pieces_iter = pieces.into_iter();
    let mut out_pieces = vec![pieces_iter.next().expect("at least one piece")];
    for (b, m) in breaks.into_iter().zip(pieces_iter) {
        if *out_pieces.last().unwrap() != m {
            out_breaks.push(b);
            out_pieces.push(m);
        }
    }
    PiecewiseProjectiveMap {
        breaks: out_breaks,
        pieces: out_pieces,
    }
}

impl PiecewiseProjectiveMap {
    pub fn identity() -> Self {
        Self::from_matrix(ProjectiveMatrix::identity())
    }

    /// `x ↦ x + n`.
    pub fn translation(n: impl Into<BigInt>) -> Self {
        Self::from_matrix(ProjectiveMatrix::translation(n))
    }

    fn from_matrix(m: ProjectiveMatrix) -> Self {
        debug_assert!(m.is_translation());
        PiecewiseProjectiveMap {
            breaks: Vec::new(),
            pieces: vec![m],
        }
    }

    pub fn breaks(&self) -> &[QuadraticNumber] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[ProjectiveMatrix] {
        &self.pieces
    }

    pub fn is_identity(&self) -> bool {
        self.breaks.is_empty() && self.pieces[0].is_identity()
    }

    /// Shift of a global translation, `None` when the map has breaks.
    pub fn as_translation(&self) -> Option<&BigInt> {
        if self.breaks.is_empty() {
            self.pieces[0].translation_length()
        } else {
            None
        }
    }

    pub fn left_end(&self) -> &ProjectiveMatrix {
        &self.pieces[0]
    }

    pub fn right_end(&self) -> &ProjectiveMatrix {
        &self.pieces[self.pieces.len() - 1]
    }

    pub fn end_germs_differ(&self) -> bool {
        self.left_end() != self.right_end()
    }

    fn index_left_of(&self, x: &QuadraticNumber) -> usize {
        self.breaks.partition_point(|b| b < x)
    }

    fn index_right_of(&self, x: &QuadraticNumber) -> usize {
        self.breaks.partition_point(|b| b <= x)
    }

    /// Piece in force on `(x − ε, x]`.
    pub fn left_germ(&self, x: &ExtendedPoint) -> &ProjectiveMatrix {
        match x {
            ExtendedPoint::Finite(x) => &self.pieces[self.index_left_of(x)],
            ExtendedPoint::Infinity => self.right_end(),
        }
    }

    /// Piece in force on `[x, x + ε)`.
    pub fn right_germ(&self, x: &ExtendedPoint) -> &ProjectiveMatrix {
        match x {
            ExtendedPoint::Finite(x) => &self.pieces[self.index_right_of(x)],
            ExtendedPoint::Infinity => self.left_end(),
        }
    }

    pub fn apply(&self, x: &ExtendedPoint) -> ExtendedPoint {
        match x {
            ExtendedPoint::Infinity => ExtendedPoint::Infinity,
            ExtendedPoint::Finite(q) => self.apply_finite(q),
        }
    }

    pub fn apply_finite(&self, x: &QuadraticNumber) -> ExtendedPoint {
        self.pieces[self.index_left_of(x)].apply_finite(x)
    }

    /// Open intervals where the map differs from the identity, in increasing
    /// order. `Infinity` stands for −∞ as a left end and +∞ as a right end.
    pub fn support_intervals(&self) -> Vec<(ExtendedPoint, ExtendedPoint)> {
        let mut cuts: Vec<(ExtendedPoint, ExtendedPoint)> = Vec::new();
        for (i, m) in self.pieces.iter().enumerate() {
            if m.is_identity() {
                continue;
            }
            let lo = if i == 0 {
                ExtendedPoint::Infinity
            } else {
                ExtendedPoint::Finite(self.breaks[i - 1].clone())
            };
            let hi = if i == self.breaks.len() {
                ExtendedPoint::Infinity
            } else {
                ExtendedPoint::Finite(self.breaks[i].clone())
            };
            let mut inner: Vec<ExtendedPoint> = mat_fixed_points(m)
                .unwrap_or_default()
                .into_iter()
                .filter(|p| {
                    let ExtendedPoint::Finite(p) = p else { return false };
                    (i == 0 || *p > self.breaks[i - 1]) && (i == self.breaks.len() || *p < self.breaks[i])
                })
                .collect();
            inner.sort();
            let mut start = lo;
            for p in inner {
                cuts.push((start, p.clone()));
                start = p;
            }
            cuts.push((start, hi));
        }
        // merge intervals that meet at a break where the map is not fixed
        let mut merged: Vec<(ExtendedPoint, ExtendedPoint)> = Vec::new();
        for (lo, hi) in cuts {
            if let Some(last) = merged.last_mut() {
                if last.1 == lo && !lo.is_infinity() && self.apply(&lo) != lo {
                    last.1 = hi;
                    continue;
                }
            }
            merged.push((lo, hi));
        }
        merged
    }
}

pub fn pm_apply(f: &PiecewiseProjectiveMap, x: &ExtendedPoint) -> ExtendedPoint {
    f.apply(x)
}

/// `g2 ∘ g1`.
pub fn pm_compose(g2: &PiecewiseProjectiveMap, g1: &PiecewiseProjectiveMap) -> PiecewiseProjectiveMap {
    if g2.breaks.is_empty() && g1.breaks.is_empty() {
        return PiecewiseProjectiveMap::from_matrix(g2.pieces[0].compose(&g1.pieces[0]));
    }
    let g1_inv = pm_inverse(g1);
    let mut candidates: Vec<QuadraticNumber> = g1.breaks.clone();
    for b in &g2.breaks {
        if let ExtendedPoint::Finite(x) = g1_inv.apply_finite(b) {
            candidates.push(x);
        }
    }
    candidates.sort();
    candidates.dedup();
    let mut pieces = Vec::with_capacity(candidates.len() + 1);
    pieces.push(g2.left_end().compose(g1.left_end()));
    for c in &candidates {
        let cp = ExtendedPoint::Finite(c.clone());
        let inner = g1.right_germ(&cp);
        let outer = g2.right_germ(&inner.apply(&cp));
        pieces.push(outer.compose(inner));
    }
    reduce(candidates, pieces)
}

pub fn pm_inverse(f: &PiecewiseProjectiveMap) -> PiecewiseProjectiveMap {
    let breaks = f
        .breaks
        .iter()
        .map(|b| match f.apply_finite(b) {
            ExtendedPoint::Finite(y) => y,
            ExtendedPoint::Infinity => unreachable!("valid maps send finite breaks to finite points"),
        })
        .collect();
    PiecewiseProjectiveMap {
        breaks,
        pieces: f.pieces.iter().map(ProjectiveMatrix::inverse).collect(),
    }
}

pub fn pm_pow(f: &PiecewiseProjectiveMap, n: i64) -> PiecewiseProjectiveMap {
    let mut base = if n < 0 { pm_inverse(f) } else { f.clone() };
    let mut e = n.unsigned_abs();
    let mut acc = PiecewiseProjectiveMap::identity();
    while e > 0 {
        if e & 1 == 1 {
            acc = pm_compose(&acc, &base);
        }
        e >>= 1;
        if e > 0 {
            base = pm_compose(&base, &base);
        }
    }
    acc
}

/// `f` on `(a, b)` and the identity elsewhere.
pub fn pm_restrict(
    f: &PiecewiseProjectiveMap,
    a: &ExtendedPoint,
    b: &ExtendedPoint,
) -> Result<PiecewiseProjectiveMap, PiecewiseError> {
    for p in [a, b] {
        if f.apply(p) != *p || p.is_infinity() {
            return Err(PiecewiseError::NotFixed(p.clone()));
        }
    }
    if a >= b {
        return Err(PiecewiseError::Malformed(format!("restriction interval ({a}, {b}) is empty")));
    }
    let (qa, qb) = (a.finite().unwrap(), b.finite().unwrap());
    let mut breaks = vec![qa.clone()];
    let mut pieces = vec![ProjectiveMatrix::identity(), f.right_germ(a).clone()];
    for x in f.breaks.iter().filter(|x| *x > qa && *x < qb) {
        breaks.push(x.clone());
        pieces.push(f.pieces[f.index_right_of(x)].clone());
    }
    breaks.push(qb.clone());
    pieces.push(ProjectiveMatrix::identity());
    Ok(reduce(breaks, pieces))
}

/// `Br(f)`: finite breaks plus the break at ∞ when the end germs differ.
pub fn breakpoint_count(f: &PiecewiseProjectiveMap) -> usize {
    f.breaks.len() + usize::from(f.end_germs_differ())
}

impl fmt::Display for PiecewiseProjectiveMap {
    /// `piece ; break ; piece ; … ; piece`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pieces[0])?;
        for (b, m) in self.breaks.iter().zip(&self.pieces[1..]) {
            write!(f, " ; {b} ; {m}")?;
        }
        Ok(())
    }
}

impl FromStr for PiecewiseProjectiveMap {
    type Err = PiecewiseError;
    fn from_str(s: &str) -> Result<Self, PiecewiseError> {
        let parts: Vec<&str> = s.split(';').map(str::trim).collect();
        if parts.len().is_multiple_of(2) {
            return Err(PiecewiseError::Malformed(format!(
                "expected alternating pieces and breaks: {s:?}"
            )));
        }
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if i % 2 == 0 {
                pieces.push(p.parse::<ProjectiveMatrix>()?);
            } else {
                breaks.push(
                    p.parse::<ExtendedPoint>()
                        .map_err(|e| PiecewiseError::Malformed(e.to_string()))?,
                );
            }
        }
        pm_new(breaks, pieces)
    }
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    breaks: Vec<ExtendedPoint>,
    pieces: Vec<ProjectiveMatrix>,
}

impl Serialize for PiecewiseProjectiveMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MapRepr {
            breaks: self.breaks.iter().cloned().map(ExtendedPoint::Finite).collect(),
            pieces: self.pieces.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PiecewiseProjectiveMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = MapRepr::deserialize(d)?;
        pm_new(r.breaks, r.pieces).map_err(serde::de::Error::custom)
    }
}

/// Finite integer-valued function on the orbit of `base`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    base: ExtendedPoint,
    entries: BTreeMap<PointKey, i64>,
}

impl Configuration {
    pub fn empty(base: ExtendedPoint) -> Self {
        Configuration {
            base,
            entries: BTreeMap::new(),
        }
    }

    /// `δ_base`.
    pub fn delta(base: ExtendedPoint) -> Self {
        let mut c = Self::empty(base.clone());
        c.add(&base, 1);
        c
    }

    pub fn base(&self) -> &ExtendedPoint {
        &self.base
    }

    /// Square-free radicand of the base field, 1 for rational bases and ∞.
    pub fn field(&self) -> u64 {
        self.base.finite().map_or(1, QuadraticNumber::radicand)
    }

    pub fn get(&self, x: &ExtendedPoint) -> i64 {
        self.entries.get(&qn_canonical_key(x)).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Points with nonzero value, in canonical key order.
    pub fn iter(&self) -> impl Iterator<Item = (&ExtendedPoint, i64)> {
        self.entries.iter().map(|(k, v)| (k.point(), *v))
    }

    pub fn add(&mut self, x: &ExtendedPoint, v: i64) {
        if v == 0 {
            return;
        }
        let key = qn_canonical_key(x);
        let slot = self.entries.entry(key.clone()).or_insert(0);
        *slot += v;
        if *slot == 0 {
            self.entries.remove(&key);
        }
    }

    /// `Σ |C(x)|`.
    pub fn l1_norm(&self) -> u64 {
        self.entries.values().map(|v| v.unsigned_abs()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    base: ExtendedPoint,
    field: u64,
    entries: Vec<(ExtendedPoint, i64)>,
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ConfigRepr {
            base: self.base.clone(),
            field: self.field(),
            entries: self.iter().map(|(p, v)| (p.clone(), v)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ConfigRepr::deserialize(d)?;
        let mut c = Configuration::empty(r.base);
        for (p, v) in r.entries {
            c.add(&p, v);
        }
        Ok(c)
    }
}

/// Slope-change exponent of `f` at `x`: `germ_exponent(L⁻¹·R, x)` with `L`, `R`
/// the left and right germs.
pub fn slope_change(f: &PiecewiseProjectiveMap, x: &ExtendedPoint) -> Result<i64, Psl2Error> {
    let change = f.left_germ(x).inverse().compose(f.right_germ(x));
    germ_exponent(&change, x)
}

/// `C_f` restricted to the orbit of `s`.
pub fn configuration(f: &PiecewiseProjectiveMap, s: &ExtendedPoint) -> Configuration {
    let mut c = Configuration::empty(s.clone());
    for b in &f.breaks {
        let p = ExtendedPoint::Finite(b.clone());
        if orbit_equivalent(&p, s) {
            c.add(&p, slope_change(f, &p).expect("slope change at a break fixes it"));
        }
    }
    if f.end_germs_differ() && s.is_rational_or_infinity() {
        let p = ExtendedPoint::Infinity;
        c.add(&p, slope_change(f, &p).expect("end germs are translations"));
    }
    c
}

/// `C_g + S^g C` with `(S^g C)(γ) = C(g(γ))`. For `C = C_h` this is `C_{h∘g}`.
pub fn config_act(g: &PiecewiseProjectiveMap, c: &Configuration) -> Configuration {
    let g_inv = pm_inverse(g);
    let mut out = configuration(g, &c.base);
    for (p, v) in c.iter() {
        out.add(&g_inv.apply(p), v);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Membership {
    /// Breaks are quadratic irrationals and the end germs agree.
    HZ,
    /// Breaks are quadratic irrationals, rationals or ∞.
    Gtilde,
    /// Trivial configuration on the orbit of the point.
    Hs(ExtendedPoint),
}

pub fn membership(f: &PiecewiseProjectiveMap, kind: &Membership) -> bool {
    match kind {
        Membership::HZ => !f.end_germs_differ() && f.breaks.iter().all(|b| !b.is_rational()),
        // every representable map already qualifies
        Membership::Gtilde => true,
        Membership::Hs(s) => configuration(f, s).is_empty(),
    }
}

fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

/// Which side of `s` its conjugate lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HsBranch {
    /// `s < s̄`: the junction `s̃` lies in `(t̄, s̄)`.
    ConjugateAbove,
    /// `s̄ < s`: the junction `s̃` lies in `(s, −d/c)`.
    ConjugateBelow,
}

/// `h_s` together with the data of its construction.
#[derive(Clone, Debug, Serialize)]
pub struct HsConstruction {
    pub map: PiecewiseProjectiveMap,
    pub branch: HsBranch,
    pub prime: u64,
    pub generator: ProjectiveMatrix,
    pub j: ProjectiveMatrix,
    pub junction: ExtendedPoint,
    pub t: ExtendedPoint,
    pub t_bar: ExtendedPoint,
}

fn rational_qn(r: &Rational) -> QuadraticNumber {
    QuadraticNumber::from_rational(r)
}

fn f64_to_rational(x: f64) -> Rational {
    Rational::from_float(x).expect("finite float")
}

/// `m − r√l`, `m + r√l`.
fn conjugate_pair(m: &Rational, r: &Rational, l: u64) -> (QuadraticNumber, QuadraticNumber) {
    let lo = QuadraticNumber::new(m.clone(), -r.clone(), l);
    let hi = QuadraticNumber::new(m.clone(), r.clone(), l);
    (lo, hi)
}

/// A hyperbolic element fixing `t̄ < t` and pushing `(t̄, t)` upward.
fn upward_element(t: &QuadraticNumber, mid: &Rational) -> Result<ProjectiveMatrix, Psl2Error> {
    let j = element_fixing_point(&ExtendedPoint::Finite(t.clone()))?;
    let m = ExtendedPoint::Finite(rational_qn(mid));
    Ok(if j.apply(&m) > m { j } else { j.inverse() })
}

/// The unique fixed point of `M` strictly inside `(lo, hi)`, if irrational.
fn fixed_point_between(m: &ProjectiveMatrix, lo: &ExtendedPoint, hi: &ExtendedPoint) -> Option<QuadraticNumber> {
    if mat_classify(m) != MatrixClass::Hyperbolic {
        return None;
    }
    let inside: Vec<QuadraticNumber> = mat_fixed_points(m)
        .ok()?
        .into_iter()
        .filter(|p| p > lo && p < hi)
        .filter_map(|p| p.finite().cloned())
        .collect();
    (inside.len() == 1).then(|| inside.into_iter().next().unwrap())
}

/// Builds `h_s`: the identity up to `s`, the canonical stabilizer generator
/// `g` on `[s, s̃]`, a hyperbolic `j` with fixed points `t̄ < t` in `ℚ(√l)` on
/// `[s̃, t]`, and the identity from `t` on. `l` runs over primes above `k`.
pub fn construct_h_s_detailed(s: &ExtendedPoint) -> Result<HsConstruction, PiecewiseError> {
    let x = match s {
        ExtendedPoint::Finite(x) if !x.is_rational() => x.clone(),
        _ => return Err(PiecewiseError::RationalBase(s.clone())),
    };
    let k = x.radicand();
    let g = stabilizer_generator(s)?.generator;
    let x_bar = x.conjugate();
    let branch = if x < x_bar {
        HsBranch::ConjugateAbove
    } else {
        HsBranch::ConjugateBelow
    };
    let pole = g.pole().expect("hyperbolic elements move ∞");
    // [lo_gap, hi_gap] is where t̄ must land; spread is the minimal value of t − t̄
    let (lo_gap, hi_gap, spread) = match branch {
        HsBranch::ConjugateAbove => (x.clone(), x_bar.clone(), &x_bar - &x),
        HsBranch::ConjugateBelow => {
            if pole <= x {
                return Err(PiecewiseError::ConstructionFailed(format!(
                    "pole {pole} of the generator is left of {x}"
                )));
            }
            (x_bar.clone(), x.clone(), &pole - &x_bar)
        }
    };
    let mut primes = (k + 1..).filter(|&p| is_prime(p));
    for _ in 0..24 {
        let l = primes.next().unwrap();
        let sqrt_l = (l as f64).sqrt();
        for scale in 1..=3i64 {
            // r√l > spread, certified exactly
            let mut r = Rational::from_integer(spread.floor() + BigInt::one()) * Rational::from_integer(BigInt::from(scale));
            while QuadraticNumber::new(Rational::zero(), r.clone(), l) <= spread {
                r += Rational::one();
            }
            let shift = r.to_f64().unwrap_or(f64::MAX) * sqrt_l;
            let (lo_f, hi_f) = (lo_gap.to_f64() + shift, hi_gap.to_f64() + shift);
            let width = hi_f - lo_f;
            let m = simplest_rational_between(
                &rational_qn(&f64_to_rational(lo_f + 0.05 * width)),
                &rational_qn(&f64_to_rational(hi_f - 0.05 * width)),
            );
            let (t_bar, t) = conjugate_pair(&m, &r, l);
            let ok_order = match branch {
                HsBranch::ConjugateAbove => x < t_bar && t_bar < x_bar && t > x_bar,
                HsBranch::ConjugateBelow => x_bar < t_bar && t_bar < x && t > pole,
            };
            if !ok_order {
                continue;
            }
            let j = upward_element(&t, &m)?;
            let bridge = g.inverse().compose(&j);
            let (lo, hi) = match branch {
                HsBranch::ConjugateAbove => (ExtendedPoint::Finite(t_bar.clone()), ExtendedPoint::Finite(x_bar.clone())),
                HsBranch::ConjugateBelow => (s.clone(), ExtendedPoint::Finite(pole.clone())),
            };
            let Some(junction) = fixed_point_between(&bridge, &lo, &hi) else {
                continue;
            };
            if junction.radicand() == k {
                continue;
            }
            let junction = ExtendedPoint::Finite(junction);
            let t = ExtendedPoint::Finite(t);
            let map = pm_new(
                vec![s.clone(), junction.clone(), t.clone()],
                vec![
                    ProjectiveMatrix::identity(),
                    g.clone(),
                    j.clone(),
                    ProjectiveMatrix::identity(),
                ],
            )?;
            let built = HsConstruction {
                map,
                branch,
                prime: l,
                generator: g.clone(),
                j,
                junction,
                t,
                t_bar: ExtendedPoint::Finite(t_bar),
            };
            verify_h_s(&built.map, s)?;
            return Ok(built);
        }
    }
    Err(PiecewiseError::ConstructionFailed(format!(
        "no admissible prime found for {s}"
    )))
}

pub fn construct_h_s(s: &ExtendedPoint) -> Result<PiecewiseProjectiveMap, PiecewiseError> {
    construct_h_s_detailed(s).map(|c| c.map)
}

/// Checks the defining properties of `h_s`: configuration `δ_s`, every other
/// break outside `ℚ(√k)`, membership in H(ℤ), support a single interval
/// `(s, t)` on which the map exceeds the identity.
pub fn verify_h_s(h: &PiecewiseProjectiveMap, s: &ExtendedPoint) -> Result<(), PiecewiseError> {
    let fail = |what: &str| Err(PiecewiseError::ConstructionFailed(format!("{what} for {s}")));
    if configuration(h, s) != Configuration::delta(s.clone()) {
        return fail("configuration is not δ_s");
    }
    let k = s.finite().map_or(1, QuadraticNumber::radicand);
    if h.breaks
        .iter()
        .any(|b| ExtendedPoint::Finite(b.clone()) != *s && b.radicand() == k)
    {
        return fail("a secondary break lies in the field of s");
    }
    if !membership(h, &Membership::HZ) {
        return fail("map is not in H(Z)");
    }
    let support = h.support_intervals();
    if support.len() != 1 || support[0].0 != *s {
        return fail("support is not a single interval starting at s");
    }
    let (lo, hi) = &support[0];
    let probe = midpoint(lo, hi);
    if h.apply(&probe) <= probe {
        return fail("map does not exceed the identity on its support");
    }
    Ok(())
}

fn midpoint(lo: &ExtendedPoint, hi: &ExtendedPoint) -> ExtendedPoint {
    let (lo, hi) = (lo.finite().expect("bounded support"), hi.finite().expect("bounded support"));
    ExtendedPoint::Finite(rational_qn(&simplest_rational_between(lo, hi)))
}

/// A 2-prechain `(f, g)` with `supp(f) = (a, c)`, `supp(g) = (b, d)` and
/// `g⁻¹(c) < f(b)`.
#[derive(Clone, Debug, Serialize)]
pub struct Prechain {
    pub f: PiecewiseProjectiveMap,
    pub g: PiecewiseProjectiveMap,
    pub a: ExtendedPoint,
    pub b: ExtendedPoint,
    pub c: ExtendedPoint,
    pub d: ExtendedPoint,
    /// `h_s`, with `g = h_sᵠ`
    pub h_s: PiecewiseProjectiveMap,
    /// `h̃_s`, with `f = h̃_sᵖ`
    pub h_tilde: PiecewiseProjectiveMap,
    pub f_power: u32,
    pub g_power: u32,
    pub prime: u64,
}

/// Builds `h̃_s`, supported on `(r̃ − r̃'√l, r̃ + r̃'√l)` with `r̃ < s` and
/// `s < r̃ + r̃'√l < t`, then the least powers making the supports a 2-prechain
/// with `g⁻¹(c) < f(b)`.
pub fn construct_prechain(s: &ExtendedPoint) -> Result<Prechain, PiecewiseError> {
    let hs = construct_h_s_detailed(s)?;
    let x = s.finite().expect("irrational base").clone();
    let t = hs.t.finite().expect("finite t").clone();
    let l = hs.prime;
    let r0 = Rational::from_integer(x.floor());
    let sqrt_l = (l as f64).sqrt();
    let lo_f = (x.to_f64() - r0.to_f64().unwrap()) / sqrt_l;
    let hi_f = (t.to_f64() - r0.to_f64().unwrap()) / sqrt_l;
    let w = hi_f - lo_f;
    let r1 = simplest_rational_between(
        &rational_qn(&f64_to_rational(lo_f + 0.05 * w)),
        &rational_qn(&f64_to_rational(hi_f - 0.05 * w)),
    );
    let (a, c) = conjugate_pair(&r0, &r1, l);
    if !(a < x && x < c && c < t) {
        return Err(PiecewiseError::ConstructionFailed(format!("support ordering fails for {s}")));
    }
    let g_tilde = upward_element(&c, &r0)?;
    let (a, c) = (ExtendedPoint::Finite(a), ExtendedPoint::Finite(c));
    let h_tilde = pm_new(
        vec![a.clone(), c.clone()],
        vec![ProjectiveMatrix::identity(), g_tilde, ProjectiveMatrix::identity()],
    )?;
    let h_inv = pm_inverse(&hs.map);
    // least p + q with h_s^{-q}(c) < h̃^p(s)
    const MAX_TOTAL: u32 = 200;
    let mut found = None;
    'search: for total in 2..=MAX_TOTAL {
        for p in 1..total {
            let q = total - p;
            let mut left = c.clone();
            for _ in 0..q {
                left = h_inv.apply(&left);
            }
            let mut right = s.clone();
            for _ in 0..p {
                right = h_tilde.apply(&right);
            }
            if left < right {
                found = Some((p, q));
                break 'search;
            }
        }
    }
    let (p, q) =
        found.ok_or_else(|| PiecewiseError::ConstructionFailed(format!("no prechain powers up to {MAX_TOTAL} for {s}")))?;
    let f = pm_pow(&h_tilde, p as i64);
    let g = pm_pow(&hs.map, q as i64);
    Ok(Prechain {
        f,
        g,
        a,
        b: s.clone(),
        c,
        d: hs.t.clone(),
        h_s: hs.map,
        h_tilde,
        f_power: p,
        g_power: q,
        prime: l,
    })
}

impl Prechain {
    /// `g⁻¹(c)`.
    pub fn g_inv_c(&self) -> ExtendedPoint {
        pm_inverse(&self.g).apply(&self.c)
    }

    /// `f(b)`.
    pub fn f_b(&self) -> ExtendedPoint {
        self.f.apply(&self.b)
    }

    /// Exact checks of the 2-prechain conditions.
    pub fn check(&self) -> Result<(), String> {
        if !(self.a < self.b && self.b < self.c && self.c < self.d) {
            return Err("a < b < c < d fails".into());
        }
        let sf = self.f.support_intervals();
        let sg = self.g.support_intervals();
        if sf != vec![(self.a.clone(), self.c.clone())] {
            return Err(format!("supp(f) is {sf:?}"));
        }
        if sg != vec![(self.b.clone(), self.d.clone())] {
            return Err(format!("supp(g) is {sg:?}"));
        }
        if self.g_inv_c() >= self.f_b() {
            return Err("g⁻¹(c) < f(b) fails".into());
        }
        Ok(())
    }
}

impl PiecewiseProjectiveMap {
    /// Shifts `(n₋, n₊)` with the map equal to `x ↦ x + n±` near ±∞.
    pub fn end_shifts(&self) -> (BigInt, BigInt) {
        let l = self.left_end().translation_length().cloned().unwrap_or_default();
        let r = self.right_end().translation_length().cloned().unwrap_or_default();
        (l, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(s: &str) -> ExtendedPoint {
        s.parse().unwrap()
    }

    fn mat(a: i64, b: i64, c: i64, d: i64) -> ProjectiveMatrix {
        ProjectiveMatrix::new(a, b, c, d).unwrap()
    }

    #[test]
    fn pm_new_validation() {
        let a3 = pm_new(vec![], vec![ProjectiveMatrix::translation(3)]).unwrap();
        assert_eq!(a3.apply(&pt("1/2")), pt("7/2"));
        assert!(matches!(
            pm_new(
                vec![pt("0")],
                vec![ProjectiveMatrix::identity(), ProjectiveMatrix::translation(1)]
            ),
            Err(PiecewiseError::Discontinuous(_))
        ));
        assert_eq!(
            pm_new(vec![], vec![mat(2, 3, 1, 2)]),
            Err(PiecewiseError::EndGermNotTranslation)
        );
        // the pole −2 of g_s sits inside [−3, 0]
        let g = mat(2, 3, 1, 2);
        let bad = pm_new(
            vec![pt("-3"), pt("0")],
            vec![ProjectiveMatrix::identity(), g, ProjectiveMatrix::identity()],
        );
        assert!(matches!(
            bad,
            Err(PiecewiseError::Discontinuous(_)) | Err(PiecewiseError::PoleInsidePiece(_))
        ));
        // redundant breaks are merged away
        let merged = pm_new(
            vec![pt("0")],
            vec![ProjectiveMatrix::identity(), ProjectiveMatrix::identity()],
        )
        .unwrap();
        assert!(merged.is_identity());
    }

    #[test]
    fn h_s_examples() {
        for s in ["0+1*sqrt(3)", "0-1*sqrt(3)", "1/2+1*sqrt(2)"] {
            let s = pt(s);
            let h = construct_h_s(&s).unwrap();
            assert_eq!(configuration(&h, &s), Configuration::delta(s.clone()));
            assert!(membership(&h, &Membership::HZ));
            assert!(!membership(&h, &Membership::Hs(s.clone())));
            let mut neg = Configuration::empty(s.clone());
            neg.add(&s, -1);
            assert_eq!(configuration(&pm_inverse(&h), &s), neg);
            let mut two = Configuration::empty(s.clone());
            two.add(&s, 2);
            assert_eq!(configuration(&pm_pow(&h, 2), &s), two);
            assert_eq!(pm_restrict(&h, &s, &h.support_intervals()[0].1).unwrap(), h);
        }
    }

    #[test]
    fn compose_and_inverse() {
        let s = pt("0+1*sqrt(3)");
        let h = construct_h_s(&s).unwrap();
        let a = PiecewiseProjectiveMap::translation(1);
        assert!(pm_compose(&h, &pm_inverse(&h)).is_identity());
        assert_eq!(pm_compose(&PiecewiseProjectiveMap::identity(), &h), h);
        assert_eq!(pm_inverse(&a), PiecewiseProjectiveMap::translation(-1));
        let w = pm_compose(&a, &h);
        for x in ["0", "7/4", "2", "5/2", "-1", "100"] {
            let x = pt(x);
            assert_eq!(w.apply(&x), a.apply(&h.apply(&x)));
        }
        assert!(breakpoint_count(&w) <= breakpoint_count(&a) + breakpoint_count(&h));
    }

    #[test]
    fn configuration_action() {
        let s = pt("0+1*sqrt(3)");
        let h = construct_h_s(&s).unwrap();
        let empty = Configuration::empty(s.clone());
        assert_eq!(
            config_act(&PiecewiseProjectiveMap::identity(), &Configuration::delta(s.clone())),
            Configuration::delta(s.clone())
        );
        assert_eq!(config_act(&h, &empty), Configuration::delta(s.clone()));
        let a = PiecewiseProjectiveMap::translation(1);
        let c = configuration(&h, &s);
        assert_eq!(config_act(&a, &c), configuration(&pm_compose(&h, &a), &s));
        assert!(membership(&a, &Membership::Hs(s)));
    }

    #[test]
    fn infinity_break_for_rational_base() {
        // identity, then x/(1 − x) up to the golden ratio conjugate r, then x + 1
        let r = pt("-1/2+1/2*sqrt(5)");
        let f = pm_new(
            vec![pt("0"), r.clone()],
            vec![
                ProjectiveMatrix::identity(),
                mat(1, 0, -1, 1),
                ProjectiveMatrix::translation(1),
            ],
        )
        .unwrap();
        assert_eq!(breakpoint_count(&f), 3);
        assert!(!membership(&f, &Membership::HZ));
        let c = configuration(&f, &pt("0"));
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&ExtendedPoint::Infinity), -1);
        assert_eq!(c.get(&pt("0")).abs(), 1);
        assert_eq!(configuration(&f, &r).len(), 1);
        assert_eq!(breakpoint_count(&pm_inverse(&f)), 3);
    }

    #[test]
    fn prechain_shape() {
        let s = pt("0+1*sqrt(3)");
        let pc = construct_prechain(&s).unwrap();
        pc.check().unwrap();
        assert_eq!(pc.g.apply(&pc.b), pc.b);
        assert_eq!(pc.f.apply(&pc.c), pc.c);
    }

    #[test]
    fn text_round_trip() {
        let h = construct_h_s(&pt("1/2+1*sqrt(2)")).unwrap();
        let text = h.to_string();
        assert_eq!(text.parse::<PiecewiseProjectiveMap>().unwrap(), h);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<PiecewiseProjectiveMap>(&json).unwrap(), h);
    }
}
