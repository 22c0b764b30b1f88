//! Exact arithmetic over ℚ and real quadratic fields ℚ(√k).
//!
//! A [`QuadraticNumber`] is stored as `(p + q·√k) / den` with integer `p`, `q`,
//! positive `den`, `gcd(p, q, den) = 1` and square-free `k`. Rationals always
//! carry `k = 1` and `q = 0`, so structural equality is numeric equality and the
//! derived `Hash` is usable for orbit bookkeeping.
//!
//! Comparison is total across fields: the sign of `A + B√k + C√l` is decided
//! symbolically by at most two squarings of integer data.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::{Integer, Roots};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("operands live in different quadratic fields Q(sqrt({left})) and Q(sqrt({right}))")]
    MixedField { left: u64, right: u64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("cannot parse {input:?}: {reason}")]
    Parse { input: String, reason: String },
}

// Covers cube roots of every u64.
const SIEVE_LIMIT: usize = 2_700_000;

static SMALL_PRIMES: Lazy<Vec<u64>> = Lazy::new(|| {
    let mut composite = vec![false; SIEVE_LIMIT + 1];
    let mut primes = Vec::new();
    for n in 2..=SIEVE_LIMIT {
        if !composite[n] {
            primes.push(n as u64);
            let mut m = n * n;
            while m <= SIEVE_LIMIT {
                composite[m] = true;
                m += n;
            }
        }
    }
    primes
});

/// Splits `n = m²·k` with `k` square-free.
///
/// Trial division runs only up to the cube root of the unfactored remainder;
/// what is left then has at most two prime factors, so it is either a prime
/// square or already square-free.
pub fn normalize_radicand(n: u64) -> (u64, u64) {
    assert!(n >= 1, "radicand must be positive");
    let mut rest = n;
    let mut k = 1u64;
    let mut m = 1u64;
    for &p in SMALL_PRIMES.iter() {
        if p.saturating_mul(p).saturating_mul(p) > rest {
            break;
        }
        let mut e = 0;
        while rest.is_multiple_of(p) {
            rest /= p;
            e += 1;
        }
        if e > 0 {
            m *= p.pow(e / 2);
            if e % 2 == 1 {
                k *= p;
            }
        }
    }
    if rest > 1 {
        let r = rest.sqrt();
        if r * r == rest {
            m *= r;
        } else {
            k *= rest;
        }
    }
    (k, m)
}

pub fn is_square_free(n: u64) -> bool {
    n >= 1 && normalize_radicand(n).1 == 1
}

/// Sign of `p + q·√k` for square-free `k` (k = 1 allowed).
pub(crate) fn sign_of(p: &BigInt, q: &BigInt, k: u64) -> Ordering {
    let sp = sign_ord(p);
    let sq = sign_ord(q);
    if sq == Ordering::Equal {
        return sp;
    }
    if k == 1 {
        return sign_ord(&(p + q));
    }
    if sp == Ordering::Equal || sp == sq {
        return sq;
    }
    let lhs = p * p;
    let rhs = q * q * BigInt::from(k);
    if lhs > rhs {
        sp
    } else {
        sq
    }
}

fn sign_ord(x: &BigInt) -> Ordering {
    match x.sign() {
        Sign::Minus => Ordering::Less,
        Sign::NoSign => Ordering::Equal,
        Sign::Plus => Ordering::Greater,
    }
}

/// Exact element `(p + q·√k) / den` of ℚ(√k).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuadraticNumber {
    k: u64,
    p: BigInt,
    q: BigInt,
    den: BigInt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl QuadraticNumber {
    /// Builds `(p + q√k)/den` from raw parts. `k` must already be square-free.
    pub(crate) fn from_parts(p: BigInt, q: BigInt, den: BigInt, k: u64) -> Self {
        assert!(!den.is_zero(), "zero denominator");
        let (mut p, mut q, mut den, mut k) = (p, q, den, k);
        if k == 1 {
            p += &q;
            q = BigInt::zero();
        }
        if q.is_zero() {
            k = 1;
        }
        if den.is_negative() {
            p = -p;
            q = -q;
            den = -den;
        }
        let g = p.gcd(&q).gcd(&den);
        if !g.is_one() {
            p /= &g;
            q /= &g;
            den /= &g;
        }
        QuadraticNumber { k, p, q, den }
    }

    pub fn zero() -> Self {
        Self::from_integer(0)
    }

    pub fn one() -> Self {
        Self::from_integer(1)
    }

    pub fn from_integer(n: impl Into<BigInt>) -> Self {
        QuadraticNumber {
            k: 1,
            p: n.into(),
            q: BigInt::zero(),
            den: BigInt::one(),
        }
    }

    pub fn from_rational(r: &Rational) -> Self {
        Self::from_parts(r.numer().clone(), BigInt::zero(), r.denom().clone(), 1)
    }

    pub fn from_ratio(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Self {
        Self::from_parts(num.into(), BigInt::zero(), den.into(), 1)
    }

    /// `a + b·√n` for any positive `n`; square factors of `n` move into `b`.
    pub fn new(a: Rational, b: Rational, n: u64) -> Self {
        if b.is_zero() || n == 0 {
            return Self::from_rational(&a);
        }
        let (k, m) = normalize_radicand(n);
        let b = b * Rational::from_integer(BigInt::from(m));
        let den = a.denom().lcm(b.denom());
        let p = a.numer() * (&den / a.denom());
        let q = b.numer() * (&den / b.denom());
        Self::from_parts(p, q, den, k)
    }

    /// `√n`.
    pub fn sqrt_of(n: u64) -> Self {
        Self::new(Rational::zero(), Rational::one(), n)
    }

    pub fn radicand(&self) -> u64 {
        self.k
    }

    pub fn rational_part(&self) -> Rational {
        Rational::new(self.p.clone(), self.den.clone())
    }

    pub fn irrational_coeff(&self) -> Rational {
        Rational::new(self.q.clone(), self.den.clone())
    }

    pub(crate) fn raw(&self) -> (&BigInt, &BigInt, &BigInt) {
        (&self.p, &self.q, &self.den)
    }

    pub fn is_rational(&self) -> bool {
        self.q.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.p.is_zero() && self.q.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.is_rational() && self.den.is_one()
    }

    pub fn as_rational(&self) -> Option<Rational> {
        self.is_rational().then(|| self.rational_part())
    }

    pub fn conjugate(&self) -> Self {
        QuadraticNumber {
            k: self.k,
            p: self.p.clone(),
            q: -&self.q,
            den: self.den.clone(),
        }
    }

    /// Field norm `x·x̄`, always rational.
    pub fn norm(&self) -> Rational {
        let n = &self.p * &self.p - &self.q * &self.q * BigInt::from(self.k);
        Rational::new(n, &self.den * &self.den)
    }

    pub fn signum(&self) -> Ordering {
        sign_of(&self.p, &self.q, self.k)
    }

    pub fn abs(&self) -> Self {
        if self.signum() == Ordering::Less {
            -self
        } else {
            self.clone()
        }
    }

    /// Exact `⌊x⌋`.
    pub fn floor(&self) -> BigInt {
        if self.q.is_zero() {
            return self.p.div_floor(&self.den);
        }
        let disc = &self.q * &self.q * BigInt::from(self.k);
        let s = disc.sqrt();
        if self.q.is_positive() {
            (&self.p + &s).div_floor(&self.den)
        } else {
            (&self.p - &s - BigInt::one()).div_floor(&self.den)
        }
    }

    pub fn field_of(&self, other: &Self) -> Result<u64, ExactError> {
        if self.k == 1 {
            Ok(other.k)
        } else if other.k == 1 || other.k == self.k {
            Ok(self.k)
        } else {
            Err(ExactError::MixedField {
                left: self.k,
                right: other.k,
            })
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, ExactError> {
        let k = self.field_of(other)?;
        Ok(Self::from_parts(
            &self.p * &other.den + &other.p * &self.den,
            &self.q * &other.den + &other.q * &self.den,
            &self.den * &other.den,
            k,
        ))
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, ExactError> {
        self.checked_add(&-other)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, ExactError> {
        let k = self.field_of(other)?;
        let kb = BigInt::from(k);
        Ok(Self::from_parts(
            &self.p * &other.p + &self.q * &other.q * &kb,
            &self.p * &other.q + &self.q * &other.p,
            &self.den * &other.den,
            k,
        ))
    }

    pub fn recip(&self) -> Result<Self, ExactError> {
        if self.is_zero() {
            return Err(ExactError::DivisionByZero);
        }
        let n = &self.p * &self.p - &self.q * &self.q * BigInt::from(self.k);
        Ok(Self::from_parts(&self.den * &self.p, -(&self.den * &self.q), n, self.k))
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self, ExactError> {
        self.field_of(other)?;
        self.checked_mul(&other.recip()?)
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        acc
    }

    /// Approximate value with small relative error, also under cancellation.
    /// Never used to decide an exact comparison.
    pub fn to_f64(&self) -> f64 {
        match self.signum() {
            Ordering::Equal => 0.0,
            Ordering::Greater => self.ln_abs().exp(),
            Ordering::Less => -self.ln_abs().exp(),
        }
    }

    /// `x + n`. The gcd invariant survives: `gcd(p + n·den, q, den) = gcd(p, q, den)`.
    pub fn add_integer(&self, n: &BigInt) -> Self {
        QuadraticNumber {
            k: self.k,
            p: &self.p + n * &self.den,
            q: self.q.clone(),
            den: self.den.clone(),
        }
    }

    /// Approximate `ln |x|`, robust against cancellation and huge heights.
    pub fn ln_abs(&self) -> f64 {
        if self.q.is_zero() {
            return ln_big(&self.p) - ln_big(&self.den);
        }
        let sk = (self.k as f64).sqrt();
        let lp = ln_big(&self.p);
        let lq = ln_big(&self.q) + sk.ln();
        let same_sign = self.p.is_zero() || self.p.sign() == self.q.sign();
        let ld = ln_big(&self.den);
        if same_sign {
            return log_add(lp, lq) - ld;
        }
        // |x| = |N(x)| / |x̄| and x̄ has no cancellation.
        let n = &self.p * &self.p - &self.q * &self.q * BigInt::from(self.k);
        ln_big(&n) - 2.0 * ld - (log_add(lp, lq) - ld)
    }
}

fn log_add(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

fn ln_big(x: &BigInt) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let mag = x.magnitude();
    let bits = mag.bits();
    if bits < 1000 {
        return mag.to_f64().unwrap().ln();
    }
    let shift = bits - 64;
    let top = (mag >> shift).to_f64().unwrap();
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

pub fn qn_arith(x: &QuadraticNumber, y: &QuadraticNumber, op: ArithOp) -> Result<QuadraticNumber, ExactError> {
    match op {
        ArithOp::Add => x.checked_add(y),
        ArithOp::Sub => x.checked_sub(y),
        ArithOp::Mul => x.checked_mul(y),
        ArithOp::Div => x.checked_div(y),
    }
}

/// Exact order of the real embeddings, valid across different fields.
pub fn qn_compare(x: &QuadraticNumber, y: &QuadraticNumber) -> Ordering {
    if let Ok(k) = x.field_of(y) {
        let p = &x.p * &y.den - &y.p * &x.den;
        let q = &x.q * &y.den - &y.q * &x.den;
        return sign_of(&p, &q, k);
    }
    // sign(u + v√k − w√l)
    let u = &x.p * &y.den - &y.p * &x.den;
    let v = &x.q * &y.den;
    let w = &y.q * &x.den;
    let su = sign_of(&u, &v, x.k);
    let sw = sign_ord(&w).reverse();
    if su == Ordering::Equal {
        return sw;
    }
    if sw == Ordering::Equal || su == sw {
        return su;
    }
    // Opposite signs: compare (u + v√k)² with w²·l.
    let kb = BigInt::from(x.k);
    let rp = &u * &u + &v * &v * &kb - &w * &w * BigInt::from(y.k);
    let rq = BigInt::from(2) * &u * &v;
    if sign_of(&rp, &rq, x.k) == Ordering::Greater {
        su
    } else {
        sw
    }
}

impl PartialOrd for QuadraticNumber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QuadraticNumber {
    fn cmp(&self, other: &Self) -> Ordering {
        qn_compare(self, other)
    }
}

macro_rules! forward_op {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&QuadraticNumber> for &QuadraticNumber {
            type Output = QuadraticNumber;
            /// Panics on mixed fields (and on division by zero); use the
            /// `checked_*` methods to handle those cases.
            fn $method(self, rhs: &QuadraticNumber) -> QuadraticNumber {
                self.$checked(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl $trait<QuadraticNumber> for QuadraticNumber {
            type Output = QuadraticNumber;
            fn $method(self, rhs: QuadraticNumber) -> QuadraticNumber {
                (&self).$method(&rhs)
            }
        }
    };
}

forward_op!(Add, add, checked_add);
forward_op!(Sub, sub, checked_sub);
forward_op!(Mul, mul, checked_mul);
forward_op!(Div, div, checked_div);

impl Neg for &QuadraticNumber {
    type Output = QuadraticNumber;
    fn neg(self) -> QuadraticNumber {
        QuadraticNumber {
            k: self.k,
            p: -&self.p,
            q: -&self.q,
            den: self.den.clone(),
        }
    }
}

impl Neg for QuadraticNumber {
    type Output = QuadraticNumber;
    fn neg(self) -> QuadraticNumber {
        -&self
    }
}

impl From<i64> for QuadraticNumber {
    fn from(n: i64) -> Self {
        Self::from_integer(n)
    }
}

impl From<BigInt> for QuadraticNumber {
    fn from(n: BigInt) -> Self {
        Self::from_integer(n)
    }
}

impl From<Rational> for QuadraticNumber {
    fn from(r: Rational) -> Self {
        Self::from_rational(&r)
    }
}

impl fmt::Display for QuadraticNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.rational_part();
        if self.is_rational() {
            return write!(f, "{a}");
        }
        let b = self.irrational_coeff();
        if b.is_negative() {
            write!(f, "{a}-{}*sqrt({})", -b, self.k)
        } else {
            write!(f, "{a}+{b}*sqrt({})", self.k)
        }
    }
}

fn parse_rational(s: &str, whole: &str) -> Result<Rational, ExactError> {
    let err = |reason: &str| ExactError::Parse {
        input: whole.to_string(),
        reason: reason.to_string(),
    };
    let s = s.strip_prefix('+').unwrap_or(s);
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().map_err(|_| err("bad numerator"))?;
    let d: BigInt = d.parse().map_err(|_| err("bad denominator"))?;
    if d.is_zero() {
        return Err(err("zero denominator"));
    }
    Ok(Rational::new(n, d))
}

impl FromStr for QuadraticNumber {
    type Err = ExactError;

    /// Grammar: `a`, `b*sqrt(k)` or `a+b*sqrt(k)` / `a-b*sqrt(k)` with `a`, `b`
    /// written as `num` or `num/den`.
    fn from_str(input: &str) -> Result<Self, ExactError> {
        let s: String = input.chars().filter(|c| !c.is_whitespace()).collect();
        let err = |reason: &str| ExactError::Parse {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        if s.is_empty() {
            return Err(err("empty input"));
        }
        let Some(idx) = s.find("*sqrt(") else {
            return Ok(Self::from_rational(&parse_rational(&s, input)?));
        };
        if !s.ends_with(')') {
            return Err(err("missing ')'"));
        }
        let radicand: u64 = s[idx + 6..s.len() - 1].parse().map_err(|_| err("bad radicand"))?;
        let head = &s[..idx];
        let bytes = head.as_bytes();
        let split = (1..bytes.len())
            .rev()
            .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && bytes[i - 1].is_ascii_digit());
        let (a, b) = match split {
            Some(i) => {
                let a = parse_rational(&head[..i], input)?;
                let b_text = &head[i + 1..];
                let b = parse_rational(b_text, input)?;
                (a, if bytes[i] == b'-' { -b } else { b })
            }
            None => (Rational::zero(), parse_rational(head, input)?),
        };
        if radicand == 0 {
            return Ok(Self::from_rational(&a));
        }
        Ok(Self::new(a, b, radicand))
    }
}

impl Serialize for QuadraticNumber {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuadraticNumber {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A point of the projective line ℝ ∪ {∞}.
///
/// Ordered with `Infinity` above every finite point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExtendedPoint {
    Finite(QuadraticNumber),
    Infinity,
}

impl ExtendedPoint {
    pub fn finite(&self) -> Option<&QuadraticNumber> {
        match self {
            ExtendedPoint::Finite(x) => Some(x),
            ExtendedPoint::Infinity => None,
        }
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, ExtendedPoint::Infinity)
    }

    /// Rational points and ∞ form the parabolic orbit.
    pub fn is_rational_or_infinity(&self) -> bool {
        self.finite().is_none_or(QuadraticNumber::is_rational)
    }

    pub fn key(&self) -> PointKey {
        qn_canonical_key(self)
    }
}

impl PartialOrd for ExtendedPoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtendedPoint {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtendedPoint::Finite(x), ExtendedPoint::Finite(y)) => qn_compare(x, y),
            (ExtendedPoint::Infinity, ExtendedPoint::Infinity) => Ordering::Equal,
            (ExtendedPoint::Infinity, _) => Ordering::Greater,
            (_, ExtendedPoint::Infinity) => Ordering::Less,
        }
    }
}

impl From<QuadraticNumber> for ExtendedPoint {
    fn from(x: QuadraticNumber) -> Self {
        ExtendedPoint::Finite(x)
    }
}

impl From<i64> for ExtendedPoint {
    fn from(n: i64) -> Self {
        ExtendedPoint::Finite(n.into())
    }
}

impl fmt::Display for ExtendedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedPoint::Finite(x) => x.fmt(f),
            ExtendedPoint::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for ExtendedPoint {
    type Err = ExactError;
    fn from_str(s: &str) -> Result<Self, ExactError> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(ExtendedPoint::Infinity),
            other => Ok(ExtendedPoint::Finite(other.parse()?)),
        }
    }
}

impl Serialize for ExtendedPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExtendedPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Hashable, totally ordered identity of a point. The order is a fixed
/// lexicographic order on canonical coordinates, not the numeric order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PointKey(ExtendedPoint);

impl PointKey {
    pub fn point(&self) -> &ExtendedPoint {
        &self.0
    }

    fn tuple(&self) -> Option<(u64, &BigInt, &BigInt, &BigInt)> {
        self.0.finite().map(|x| (x.k, &x.den, &x.p, &x.q))
    }
}

impl Ord for PointKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.tuple(), other.tuple()) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Greater,
            (Some(_), None) => Ordering::Less,
            (Some(a), Some(b)) => a.cmp(&b),
        }
    }
}

impl PartialOrd for PointKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn qn_canonical_key(x: &ExtendedPoint) -> PointKey {
    PointKey(x.clone())
}

/// Smallest-denominator rational strictly between `lo` and `hi`; among those,
/// the smallest one. Requires `lo < hi`.
pub fn simplest_rational_between(lo: &QuadraticNumber, hi: &QuadraticNumber) -> Rational {
    assert!(lo < hi, "empty interval");
    let mut den = BigInt::one();
    loop {
        let scaled = lo * &QuadraticNumber::from_integer(den.clone());
        let n = scaled.floor() + BigInt::one();
        let cand = Rational::new(n, den.clone());
        if QuadraticNumber::from_rational(&cand) < *hi {
            return cand;
        }
        den += 1;
    }
}
