//! PSL₂(ℤ): normalized integer matrices acting on ℝ ∪ {∞} by Möbius maps.
//!
//! Also hosts the Pell solvers, point stabilizers with their canonical
//! generator, the germ exponent `log_φ(M'(p))`, and PSL₂(ℤ)-orbit
//! equivalence of points.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::ops::Mul;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::{Integer, Roots};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::{is_square_free, normalize_radicand, ExtendedPoint, QuadraticNumber};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Psl2Error {
    #[error("determinant of [[{a},{b}],[{c},{d}]] is not 1")]
    BadDeterminant { a: BigInt, b: BigInt, c: BigInt, d: BigInt },
    #[error("the identity has no isolated fixed points")]
    IdentityMatrix,
    #[error("radicand {0} is a perfect square or below 2")]
    SquareRadicand(BigInt),
    #[error("radicand {0} is not square-free")]
    NotSquareFree(u64),
    #[error("discriminant {0} does not fit the supported radicand range")]
    RadicandOverflow(BigInt),
    #[error("matrix does not fix {0}")]
    NotInStabilizer(ExtendedPoint),
    #[error("matrix fixing {0} is not a power of the canonical stabilizer generator")]
    NotAPower(ExtendedPoint),
    #[error("{0} is rational; expected a quadratic irrational")]
    RationalPoint(ExtendedPoint),
    #[error("cannot parse matrix {0:?}")]
    Parse(String),
}

/// Element of PSL₂(ℤ) with `ad − bc = 1` and sign fixed by `c > 0`, or
/// `c = 0` and `d > 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProjectiveMatrix {
    a: BigInt,
    b: BigInt,
    c: BigInt,
    d: BigInt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixClass {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

impl ProjectiveMatrix {
    pub fn new(
        a: impl Into<BigInt>,
        b: impl Into<BigInt>,
        c: impl Into<BigInt>,
        d: impl Into<BigInt>,
    ) -> Result<Self, Psl2Error> {
        let (a, b, c, d) = (a.into(), b.into(), c.into(), d.into());
        if &a * &d - &b * &c != BigInt::one() {
            return Err(Psl2Error::BadDeterminant { a, b, c, d });
        }
        Ok(Self::normalized(a, b, c, d))
    }

    /// Caller guarantees `ad − bc = 1`.
    pub(crate) fn normalized(a: BigInt, b: BigInt, c: BigInt, d: BigInt) -> Self {
        debug_assert!(&a * &d - &b * &c == BigInt::one());
        if c.is_negative() || (c.is_zero() && d.is_negative()) {
            ProjectiveMatrix {
                a: -a,
                b: -b,
                c: -c,
                d: -d,
            }
        } else {
            ProjectiveMatrix { a, b, c, d }
        }
    }

    pub fn identity() -> Self {
        Self::translation(0)
    }

    /// `α_n : x ↦ x + n`.
    pub fn translation(n: impl Into<BigInt>) -> Self {
        ProjectiveMatrix {
            a: BigInt::one(),
            b: n.into(),
            c: BigInt::zero(),
            d: BigInt::one(),
        }
    }

    pub fn entries(&self) -> [&BigInt; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    pub fn trace(&self) -> BigInt {
        &self.a + &self.d
    }

    pub fn is_identity(&self) -> bool {
        self.c.is_zero() && self.b.is_zero()
    }

    pub fn is_translation(&self) -> bool {
        self.c.is_zero()
    }

    /// Shift of a translation, `None` otherwise.
    pub fn translation_length(&self) -> Option<&BigInt> {
        self.c.is_zero().then_some(&self.b)
    }

    pub fn inverse(&self) -> Self {
        Self::normalized(self.d.clone(), -&self.b, -&self.c, self.a.clone())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::normalized(
            &self.a * &other.a + &self.b * &other.c,
            &self.a * &other.b + &self.b * &other.d,
            &self.c * &other.a + &self.d * &other.c,
            &self.c * &other.b + &self.d * &other.d,
        )
    }

    pub fn pow(&self, n: i64) -> Self {
        let mut base = if n < 0 { self.inverse() } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = Self::identity();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.compose(&base);
            }
            base = base.compose(&base);
            e >>= 1;
        }
        acc
    }

    /// `−d/c`, the point sent to ∞.
    pub fn pole(&self) -> Option<QuadraticNumber> {
        (!self.c.is_zero()).then(|| QuadraticNumber::from_ratio(-&self.d, self.c.clone()))
    }

    pub fn apply(&self, p: &ExtendedPoint) -> ExtendedPoint {
        match p {
            ExtendedPoint::Infinity => {
                if self.c.is_zero() {
                    ExtendedPoint::Infinity
                } else {
                    ExtendedPoint::Finite(QuadraticNumber::from_ratio(self.a.clone(), self.c.clone()))
                }
            }
            ExtendedPoint::Finite(x) => self.apply_finite(x),
        }
    }

    /// `(ax + b)/(cx + d)` on `x = (p + q√k)/w`.
    pub fn apply_finite(&self, x: &QuadraticNumber) -> ExtendedPoint {
        let (p, q, w) = x.raw();
        let k = x.radicand();
        if self.c.is_zero() {
            // d = 1 after normalization
            return ExtendedPoint::Finite(QuadraticNumber::from_parts(p + &self.b * w, q.clone(), w.clone(), k));
        }
        let n1 = &self.a * p + &self.b * w;
        let d1 = &self.c * p + &self.d * w;
        if q.is_zero() {
            if d1.is_zero() {
                return ExtendedPoint::Infinity;
            }
            return ExtendedPoint::Finite(QuadraticNumber::from_parts(n1, BigInt::zero(), d1, 1));
        }
        let n2 = &self.a * q;
        let d2 = &self.c * q;
        let kb = BigInt::from(k);
        // (n1 + n2√k)(d1 − d2√k) / (d1² − k d2²); the √k coefficient is q·w by det = 1.
        let num_p = &n1 * &d1 - &kb * &n2 * &d2;
        let den = &d1 * &d1 - &kb * &d2 * &d2;
        ExtendedPoint::Finite(QuadraticNumber::from_parts(num_p, q * w, den, k))
    }

    /// `M'(x) = 1/(cx + d)²`; `None` at the pole.
    pub fn derivative_at(&self, x: &QuadraticNumber) -> Option<QuadraticNumber> {
        let lin = &(x * &QuadraticNumber::from_integer(self.c.clone())) + &QuadraticNumber::from_integer(self.d.clone());
        lin.recip().ok().map(|r| &r * &r)
    }

    pub fn classify(&self) -> MatrixClass {
        mat_classify(self)
    }
}

impl Mul for &ProjectiveMatrix {
    type Output = ProjectiveMatrix;
    fn mul(self, rhs: &ProjectiveMatrix) -> ProjectiveMatrix {
        self.compose(rhs)
    }
}

impl fmt::Display for ProjectiveMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]]", self.a, self.b, self.c, self.d)
    }
}

impl FromStr for ProjectiveMatrix {
    type Err = Psl2Error;
    fn from_str(s: &str) -> Result<Self, Psl2Error> {
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace() && *c != '[' && *c != ']').collect();
        let parts: Vec<&str> = cleaned.split(',').collect();
        if parts.len() != 4 {
            return Err(Psl2Error::Parse(s.to_string()));
        }
        let mut vals = Vec::with_capacity(4);
        for p in parts {
            vals.push(p.parse::<BigInt>().map_err(|_| Psl2Error::Parse(s.to_string()))?);
        }
        let [a, b, c, d]: [BigInt; 4] = vals.try_into().unwrap();
        Self::new(a, b, c, d)
    }
}

impl Serialize for ProjectiveMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProjectiveMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn mat_apply(m: &ProjectiveMatrix, p: &ExtendedPoint) -> ExtendedPoint {
    m.apply(p)
}

pub fn mat_classify(m: &ProjectiveMatrix) -> MatrixClass {
    if m.is_identity() {
        return MatrixClass::Identity;
    }
    let t = m.trace().abs();
    match t.cmp(&BigInt::from(2)) {
        Ordering::Greater => MatrixClass::Hyperbolic,
        Ordering::Equal => MatrixClass::Parabolic,
        Ordering::Less => MatrixClass::Elliptic,
    }
}

/// Fixed points as roots of `c·x² + (d − a)·x − b = 0` (plus ∞ when `c = 0`),
/// in increasing order.
pub fn mat_fixed_points(m: &ProjectiveMatrix) -> Result<Vec<ExtendedPoint>, Psl2Error> {
    match mat_classify(m) {
        MatrixClass::Identity => Err(Psl2Error::IdentityMatrix),
        MatrixClass::Elliptic => Ok(Vec::new()),
        MatrixClass::Parabolic if m.c.is_zero() => Ok(vec![ExtendedPoint::Infinity]),
        MatrixClass::Parabolic => Ok(vec![ExtendedPoint::Finite(QuadraticNumber::from_ratio(
            &m.a - &m.d,
            BigInt::from(2) * &m.c,
        ))]),
        MatrixClass::Hyperbolic => {
            // c ≠ 0 for hyperbolic elements
            let t = m.trace();
            let disc = &t * &t - BigInt::from(4);
            let n = disc.to_u64().ok_or_else(|| Psl2Error::RadicandOverflow(disc.clone()))?;
            let (k, r) = normalize_radicand(n);
            let two_c = BigInt::from(2) * &m.c;
            let center = &m.a - &m.d;
            let lo = QuadraticNumber::from_parts(center.clone(), -BigInt::from(r), two_c.clone(), k);
            let hi = QuadraticNumber::from_parts(center, BigInt::from(r), two_c, k);
            Ok(vec![ExtendedPoint::Finite(lo), ExtendedPoint::Finite(hi)])
        }
    }
}

/// Continued fraction of `(P + √D)/Q` for non-square `D`, with `Q | D − P²`.
struct SurdExpansion {
    p: BigInt,
    q: BigInt,
    d: BigInt,
    root: BigInt,
}

impl SurdExpansion {
    fn new(p: BigInt, q: BigInt, d: BigInt) -> Self {
        let root = d.sqrt();
        SurdExpansion { p, q, d, root }
    }
}

impl Iterator for SurdExpansion {
    type Item = BigInt;

    fn next(&mut self) -> Option<BigInt> {
        let a = if self.q.is_positive() {
            (&self.p + &self.root).div_floor(&self.q)
        } else {
            (&self.p + &self.root + BigInt::one()).div_floor(&self.q)
        };
        let p_next = &a * &self.q - &self.p;
        self.q = (&self.d - &p_next * &p_next) / &self.q;
        self.p = p_next;
        Some(a)
    }
}

/// Minimal `(x, y)` with `x² − n·y² = 1`, any non-square `n ≥ 2`.
fn pell_one(n: &BigInt) -> (BigInt, BigInt) {
    let (mut h1, mut h2) = (BigInt::one(), BigInt::zero());
    let (mut y1, mut y2) = (BigInt::zero(), BigInt::one());
    for a in SurdExpansion::new(BigInt::zero(), BigInt::one(), n.clone()) {
        let h = &a * &h1 + &h2;
        let y = &a * &y1 + &y2;
        if &h * &h - n * &y * &y == BigInt::one() {
            return (h, y);
        }
        h2 = std::mem::replace(&mut h1, h);
        y2 = std::mem::replace(&mut y1, y);
    }
    unreachable!("continued fraction expansion is infinite")
}

/// Minimal `(x, y)` with `x² − k·y² = 4` for square-free `k ≡ 1 (mod 4)`,
/// read off the convergents `p/q` of `(1 + √k)/2` as `(2p − q, q)`.
fn pell_four_half_integral(k: &BigInt) -> (BigInt, BigInt) {
    let (mut h1, mut h2) = (BigInt::one(), BigInt::zero());
    let (mut y1, mut y2) = (BigInt::zero(), BigInt::one());
    let four = BigInt::from(4);
    for a in SurdExpansion::new(BigInt::one(), BigInt::from(2), k.clone()) {
        let h = &a * &h1 + &h2;
        let y = &a * &y1 + &y2;
        let x = BigInt::from(2) * &h - &y;
        if &x * &x - k * &y * &y == four {
            return (x, y);
        }
        h2 = std::mem::replace(&mut h1, h);
        y2 = std::mem::replace(&mut y1, y);
    }
    unreachable!("continued fraction expansion is infinite")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PellRhs {
    One,
    Four,
}

/// Minimal positive solution of `x² − k·y² = rhs` for square-free `k ≥ 2`.
pub fn pell_fundamental(k: u64, rhs: PellRhs) -> Result<(BigInt, BigInt), Psl2Error> {
    let r = k.sqrt();
    if k < 2 || r * r == k {
        return Err(Psl2Error::SquareRadicand(BigInt::from(k)));
    }
    if !is_square_free(k) {
        return Err(Psl2Error::NotSquareFree(k));
    }
    let kb = BigInt::from(k);
    Ok(match rhs {
        PellRhs::One => pell_one(&kb),
        PellRhs::Four if k % 4 == 1 => pell_four_half_integral(&kb),
        // y odd would force k ≡ 0, 1 (mod 4)
        PellRhs::Four => {
            let (x, y) = pell_one(&kb);
            (x * 2, y * 2)
        }
    })
}

fn require_irrational(s: &ExtendedPoint) -> Result<&QuadraticNumber, Psl2Error> {
    match s {
        ExtendedPoint::Finite(x) if !x.is_rational() => Ok(x),
        other => Err(Psl2Error::RationalPoint(other.clone())),
    }
}

/// A hyperbolic element fixing the quadratic irrational `s = p/q + (p'/q')√k`,
/// from the Pell solution `x² − a²(p'q'q²)²k = 1`:
/// `[[x + q'²pqa, p'²q²ak − q'²p²a], [q'²q²a, x − q'²pqa]]`.
pub fn element_fixing_point(s: &ExtendedPoint) -> Result<ProjectiveMatrix, Psl2Error> {
    let x = require_irrational(s)?;
    let r = x.rational_part();
    let r2 = x.irrational_coeff();
    let (p, q) = (r.numer().clone(), r.denom().clone());
    let (p2, q2) = (r2.numer().clone(), r2.denom().clone());
    let k = BigInt::from(x.radicand());
    let scale = &p2 * &q2 * &q * &q;
    let big_k = &scale * &scale * &k;
    let (xs, a) = pell_one(&big_k);
    let qq2 = &q2 * &q2;
    let shift = &qq2 * &p * &q * &a;
    let m = ProjectiveMatrix::new(
        &xs + &shift,
        &p2 * &p2 * &q * &q * &a * &k - &qq2 * &p * &p * &a,
        &qq2 * &q * &q * &a,
        &xs - &shift,
    )?;
    if m.apply(s) != *s {
        return Err(Psl2Error::NotInStabilizer(s.clone()));
    }
    Ok(m)
}

/// Canonical generator of the stabilizer of a point in PSL₂(ℤ).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilizerDescriptor {
    pub point: ExtendedPoint,
    pub generator: ProjectiveMatrix,
    /// Derivative of the generator at the point (> 1); absent for rational
    /// points and ∞, where the generator is a conjugate of `x ↦ x + 1`.
    pub phi: Option<QuadraticNumber>,
}

/// Primitive integer form `(A, B, C)` with `A·x² + B·x + C = 0`, `A > 0`.
fn primitive_form(x: &QuadraticNumber) -> (BigInt, BigInt, BigInt) {
    let (p, q, w) = x.raw();
    let k = BigInt::from(x.radicand());
    let a = w * w;
    let b = BigInt::from(-2) * p * w;
    let c = p * p - q * q * &k;
    let g = a.gcd(&b).gcd(&c);
    (a / &g, b / &g, c / &g)
}

/// Bezout matrix `i = [[m, n], [−q, p]]` with `i(p/q) = ∞`.
fn bezout_to_infinity(r: &QuadraticNumber) -> ProjectiveMatrix {
    let r = r.as_rational().expect("rational point");
    let (p, q) = (r.numer().clone(), r.denom().clone());
    let e = p.extended_gcd(&q);
    // e.x·p + e.y·q = 1
    ProjectiveMatrix::normalized(e.x, e.y, -q, p)
}

pub fn stabilizer_generator(point: &ExtendedPoint) -> Result<StabilizerDescriptor, Psl2Error> {
    let x = match point {
        ExtendedPoint::Infinity => {
            return Ok(StabilizerDescriptor {
                point: point.clone(),
                generator: ProjectiveMatrix::translation(1),
                phi: None,
            })
        }
        ExtendedPoint::Finite(x) => x,
    };
    if x.is_rational() {
        let i = bezout_to_infinity(x);
        let generator = i.inverse().compose(&ProjectiveMatrix::translation(1)).compose(&i);
        return Ok(StabilizerDescriptor {
            point: point.clone(),
            generator,
            phi: None,
        });
    }
    // Automorphs of the primitive form are [[(t − Bu)/2, −Cu], [Au, (t + Bu)/2]]
    // with t² − D·u² = 4; walk the powers of the rhs = 4 fundamental unit of
    // Q(√k) until the √k coefficient is divisible by f = √(D/k).
    let k = x.radicand();
    let (fa, fb, fc) = primitive_form(x);
    let disc = &fb * &fb - BigInt::from(4) * &fa * &fc;
    let kb = BigInt::from(k);
    let f = (&disc / &kb).sqrt();
    debug_assert!(&f * &f * &kb == disc);
    let (x0, y0) = pell_fundamental(k, PellRhs::Four)?;
    let (mut t, mut v) = (x0.clone(), y0.clone());
    loop {
        if (&v % &f).is_zero() {
            break;
        }
        let t_next = (&t * &x0 + &kb * &v * &y0) / 2;
        let v_next = (&t * &y0 + &v * &x0) / 2;
        t = t_next;
        v = v_next;
    }
    let u = &v / &f;
    let m = ProjectiveMatrix::new((&t - &fb * &u) / 2, -&fc * &u, &fa * &u, (&t + &fb * &u) / 2)?;
    let deriv = m.derivative_at(x).expect("fixed point is not a pole");
    let (generator, phi) = if deriv > QuadraticNumber::one() {
        (m, deriv)
    } else {
        let inv = m.inverse();
        let d = inv.derivative_at(x).expect("fixed point is not a pole");
        (inv, d)
    };
    if generator.apply(point) != *point {
        return Err(Psl2Error::NotInStabilizer(point.clone()));
    }
    Ok(StabilizerDescriptor {
        point: point.clone(),
        generator,
        phi: Some(phi),
    })
}

/// The unique `n` with `M = generator(p)ⁿ`.
pub fn germ_exponent(m: &ProjectiveMatrix, point: &ExtendedPoint) -> Result<i64, Psl2Error> {
    if m.apply(point) != *point {
        return Err(Psl2Error::NotInStabilizer(point.clone()));
    }
    if m.is_identity() {
        return Ok(0);
    }
    let not_power = || Psl2Error::NotAPower(point.clone());
    let x = match point {
        ExtendedPoint::Infinity => {
            return m.translation_length().and_then(|n| n.to_i64()).ok_or_else(not_power);
        }
        ExtendedPoint::Finite(x) => x,
    };
    if x.is_rational() {
        let i = bezout_to_infinity(x);
        let conj = i.compose(m).compose(&i.inverse());
        return conj.translation_length().and_then(|n| n.to_i64()).ok_or_else(not_power);
    }
    let desc = stabilizer_generator(point)?;
    let phi = desc.phi.as_ref().expect("irrational point has phi");
    let deriv = m.derivative_at(x).ok_or_else(not_power)?;
    let estimate = (deriv.ln_abs() / phi.ln_abs()).round();
    if !estimate.is_finite() || estimate.abs() > 1e15 {
        return Err(not_power());
    }
    let n = estimate as i64;
    if desc.generator.pow(n) == *m {
        Ok(n)
    } else {
        Err(not_power())
    }
}

struct CfCycle {
    /// complete quotients `(P, Q)` of the purely periodic part, by position
    cycle: HashMap<(BigInt, BigInt), usize>,
    preperiod: usize,
    period: usize,
}

/// `x = (P + √Δ)/Q` over the discriminant `Δ` of its primitive form.
fn surd_of(x: &QuadraticNumber) -> SurdExpansion {
    let (a, b, c) = primitive_form(x);
    let disc = &b * &b - BigInt::from(4) * &a * &c;
    if x.irrational_coeff().is_positive() {
        SurdExpansion::new(-b, BigInt::from(2) * a, disc)
    } else {
        SurdExpansion::new(b, BigInt::from(-2) * a, disc)
    }
}

/// Complete quotients of `x` up to the first repetition, and the index of the
/// first repeated one.
fn cf_orbit(x: &QuadraticNumber) -> (Vec<(BigInt, BigInt)>, usize) {
    let mut seen: HashMap<(BigInt, BigInt), usize> = HashMap::new();
    let mut order = Vec::new();
    let mut e = surd_of(x);
    loop {
        let state = (e.p.clone(), e.q.clone());
        if let Some(&start) = seen.get(&state) {
            return (order, start);
        }
        seen.insert(state.clone(), order.len());
        order.push(state);
        e.next();
    }
}

fn cf_cycle(x: &QuadraticNumber) -> CfCycle {
    let (order, start) = cf_orbit(x);
    let period = order.len() - start;
    let cycle = order.into_iter().skip(start).enumerate().map(|(i, s)| (s, i)).collect();
    CfCycle {
        cycle,
        preperiod: start,
        period,
    }
}

fn cf_first_periodic(x: &QuadraticNumber) -> ((BigInt, BigInt), usize) {
    let (mut order, start) = cf_orbit(x);
    (order.swap_remove(start), start)
}

/// Whether some element of PSL₂(ℤ) maps `p` to `q`.
///
/// Quadratic irrationals are compared through the periodic cycles of their
/// continued fractions. Each step `z ↦ 1/(z − a)` has determinant −1, so when
/// the cycle length is even the offset between matching positions must be
/// even as well.
pub fn orbit_equivalent(p: &ExtendedPoint, q: &ExtendedPoint) -> bool {
    match (p.is_rational_or_infinity(), q.is_rational_or_infinity()) {
        (true, true) => return true,
        (true, false) | (false, true) => return false,
        _ => {}
    }
    let (x, y) = (p.finite().unwrap(), q.finite().unwrap());
    if x.radicand() != y.radicand() {
        return false;
    }
    let (fx, fy) = (primitive_form(x), primitive_form(y));
    let dx = &fx.1 * &fx.1 - BigInt::from(4) * &fx.0 * &fx.2;
    let dy = &fy.1 * &fy.1 - BigInt::from(4) * &fy.0 * &fy.2;
    if dx != dy {
        return false;
    }
    let cx = cf_cycle(x);
    let (zy, ly) = cf_first_periodic(y);
    let Some(&j) = cx.cycle.get(&zy) else {
        return false;
    };
    cx.period % 2 == 1 || (cx.preperiod + j + ly).is_multiple_of(2)
}
