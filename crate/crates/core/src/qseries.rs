//! Truncated formal q-series with rational exponents and exact rational coefficients.
//!
//! A [`QExpansion`] stores `Σ c_n q^{n/D}` for indices `n < trunc`; everything at or
//! beyond `q^{trunc/D}` is unknown. Arithmetic propagates truncation pessimistically.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponents and truncation orders are small rationals.
pub type Exp = Rational64;

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn exp(n: i64, d: i64) -> Exp {
    Exp::new(n, d)
}

pub fn exp_to_big(e: Exp) -> BigRational {
    rat(*e.numer(), *e.denom())
}

pub fn to_f64(c: &BigRational) -> f64 {
    c.to_f64().unwrap_or_else(|| {
        // numerator or denominator too large for a direct conversion
        let n = c.numer().to_string();
        let d = c.denom().to_string();
        n.parse::<f64>().unwrap_or(f64::NAN) / d.parse::<f64>().unwrap_or(f64::NAN)
    })
}

#[derive(Clone, Debug)]
pub struct QExpansion {
    denom: i64,
    trunc: i64,
    coeffs: BTreeMap<i64, BigRational>,
}

/// Bound `|c_x| ≤ constant · (1+|x|)^power` on the coefficient of `q^x`, used for tail estimates.
#[derive(Clone, Copy, Debug)]
pub struct CoeffGrowth {
    pub constant: f64,
    pub power: f64,
}

impl QExpansion {
    pub fn from_map(denom: i64, trunc: i64, coeffs: BTreeMap<i64, BigRational>) -> Self {
        assert!(denom > 0, "denominator must be positive");
        let coeffs = coeffs
            .into_iter()
            .filter(|(n, c)| *n < trunc && !c.is_zero())
            .collect();
        QExpansion { denom, trunc, coeffs }
    }

    /// The zero series known exactly below `q^order`.
    pub fn zero(order: Exp) -> Self {
        QExpansion {
            denom: *order.denom(),
            trunc: *order.numer(),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn one(order: Exp) -> Self {
        Self::monomial(Exp::zero(), BigRational::one(), order)
    }

    pub fn monomial(e: Exp, c: BigRational, order: Exp) -> Self {
        Self::from_terms(std::iter::once((e, c)), order)
    }

    /// Sums the given terms, dropping those with exponent `≥ order`.
    pub fn from_terms<I>(terms: I, order: Exp) -> Self
    where
        I: IntoIterator<Item = (Exp, BigRational)>,
    {
        let terms: Vec<(Exp, BigRational)> = terms.into_iter().filter(|(e, _)| *e < order).collect();
        let mut d = *order.denom();
        for (e, _) in &terms {
            d = d.lcm(e.denom());
        }
        let mut coeffs: BTreeMap<i64, BigRational> = BTreeMap::new();
        for (e, c) in terms {
            let n = e.numer() * (d / e.denom());
            let slot = coeffs.entry(n).or_insert_with(BigRational::zero);
            *slot += c;
        }
        let trunc = order.numer() * (d / order.denom());
        Self::from_map(d, trunc, coeffs)
    }

    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn trunc(&self) -> i64 {
        self.trunc
    }

    /// Smallest stored index, or `trunc` for the empty series.
    pub fn lead(&self) -> i64 {
        self.coeffs.keys().next().copied().unwrap_or(self.trunc)
    }

    pub fn order(&self) -> Exp {
        Exp::new(self.trunc, self.denom)
    }

    pub fn lead_exponent(&self) -> Exp {
        Exp::new(self.lead(), self.denom)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn index_map(&self) -> &BTreeMap<i64, BigRational> {
        &self.coeffs
    }

    /// Nonzero terms in ascending exponent order.
    pub fn terms(&self) -> impl Iterator<Item = (Exp, &BigRational)> + '_ {
        let d = self.denom;
        self.coeffs.iter().map(move |(n, c)| (Exp::new(*n, d), c))
    }

    /// Coefficient of `q^e`; zero when `e` is off the lattice. Panics if `e` is at or beyond the truncation.
    pub fn coeff(&self, e: Exp) -> BigRational {
        assert!(e < self.order(), "coefficient of q^{e} requested beyond truncation {}", self.order());
        if self.denom % e.denom() != 0 {
            return BigRational::zero();
        }
        let n = e.numer() * (self.denom / e.denom());
        self.coeffs.get(&n).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Coefficients of `q^0, q^1, ..., q^{k-1}`.
    pub fn integer_coeffs(&self, k: i64) -> Vec<BigRational> {
        (0..k).map(|j| self.coeff(Exp::from_integer(j))).collect()
    }

    /// True when every stored exponent is an integer.
    pub fn has_integral_exponents(&self) -> bool {
        self.coeffs.keys().all(|n| n % self.denom == 0)
    }

    pub fn rescaled(&self, denom: i64) -> Self {
        assert!(denom % self.denom == 0, "{denom} is not a multiple of {}", self.denom);
        let f = denom / self.denom;
        QExpansion {
            denom,
            trunc: self.trunc * f,
            coeffs: self.coeffs.iter().map(|(n, c)| (n * f, c.clone())).collect(),
        }
    }

    pub fn rescaled_to_multiple(&self, d: i64) -> Self {
        self.rescaled(self.denom.lcm(&d))
    }

    /// Reduces the exponent denominator as far as the stored indices and truncation allow.
    pub fn normalized(&self) -> Self {
        let mut g = self.denom.gcd(&self.trunc);
        for n in self.coeffs.keys() {
            g = g.gcd(n);
        }
        if g <= 1 {
            return self.clone();
        }
        QExpansion {
            denom: self.denom / g,
            trunc: self.trunc / g,
            coeffs: self.coeffs.iter().map(|(n, c)| (n / g, c.clone())).collect(),
        }
    }

    fn aligned(a: &Self, b: &Self) -> (Self, Self) {
        let d = a.denom.lcm(&b.denom);
        (a.rescaled(d), b.rescaled(d))
    }

    /// Forgets everything at or beyond `q^order` (never extends precision).
    pub fn truncate(&self, order: Exp) -> Self {
        let d = self.denom.lcm(order.denom());
        let s = self.rescaled(d);
        let t = (order.numer() * (d / order.denom())).min(s.trunc);
        Self::from_map(d, t, s.coeffs)
    }

    /// Multiplication by the exact monomial `q^e`.
    pub fn shift(&self, e: Exp) -> Self {
        let d = self.denom.lcm(e.denom());
        let s = self.rescaled(d);
        let k = e.numer() * (d / e.denom());
        QExpansion {
            denom: d,
            trunc: s.trunc + k,
            coeffs: s.coeffs.into_iter().map(|(n, c)| (n + k, c)).collect(),
        }
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return QExpansion { denom: self.denom, trunc: self.trunc, coeffs: BTreeMap::new() };
        }
        QExpansion {
            denom: self.denom,
            trunc: self.trunc,
            coeffs: self.coeffs.iter().map(|(n, v)| (*n, v * c)).collect(),
        }
    }

    pub fn scale_int(&self, c: i64) -> Self {
        self.scale(&int(c))
    }

    fn combine(&self, other: &Self, sign: i64) -> Self {
        let (a, b) = Self::aligned(self, other);
        let trunc = a.trunc.min(b.trunc);
        let mut coeffs = a.coeffs;
        coeffs.retain(|n, _| *n < trunc);
        for (n, c) in b.coeffs.into_iter().filter(|(n, _)| *n < trunc) {
            let slot = coeffs.entry(n).or_insert_with(BigRational::zero);
            if sign > 0 {
                *slot += c;
            } else {
                *slot -= c;
            }
        }
        Self::from_map(a.denom, trunc, coeffs)
    }

    pub fn mul_series(&self, other: &Self) -> Self {
        let (a, b) = Self::aligned(self, other);
        let trunc = (a.trunc + b.lead()).min(b.trunc + a.lead());
        if a.is_zero() || b.is_zero() {
            return QExpansion { denom: a.denom, trunc, coeffs: BTreeMap::new() };
        }
        let lo = a.lead() + b.lead();
        let hi = trunc.min(a.coeffs.keys().last().unwrap() + b.coeffs.keys().last().unwrap() + 1);
        if hi <= lo {
            return QExpansion { denom: a.denom, trunc, coeffs: BTreeMap::new() };
        }
        let mut acc: Vec<BigRational> = vec![BigRational::zero(); (hi - lo) as usize];
        let bv: Vec<(i64, &BigRational)> = b.coeffs.iter().map(|(n, c)| (*n, c)).collect();
        for (na, ca) in &a.coeffs {
            for (nb, cb) in &bv {
                let n = na + nb;
                if n >= hi {
                    break;
                }
                acc[(n - lo) as usize] += ca * *cb;
            }
        }
        let coeffs = acc
            .into_iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (lo + i as i64, c))
            .collect();
        QExpansion { denom: a.denom, trunc, coeffs }
    }

    pub fn pow(&self, k: u32) -> Self {
        if k == 0 {
            return Self::one(self.order() - self.lead_exponent());
        }
        let mut result = self.clone();
        for _ in 1..k {
            result = result.mul_series(self);
        }
        result
    }

    /// Multiplicative inverse; the relative precision `trunc - lead` is preserved.
    pub fn invert(&self) -> Result<Self> {
        let lead = self.lead();
        let c0 = match self.coeffs.get(&lead) {
            Some(c) => c.clone(),
            None => return Err(Error::ZeroLeadingCoefficient),
        };
        let prec = (self.trunc - lead) as usize;
        let u: Vec<(usize, BigRational)> = self
            .coeffs
            .iter()
            .skip(1)
            .map(|(n, c)| ((n - lead) as usize, c / &c0))
            .collect();
        let mut b: Vec<BigRational> = vec![BigRational::zero(); prec];
        b[0] = BigRational::one();
        for n in 1..prec {
            let mut s = BigRational::zero();
            for (k, uk) in &u {
                if *k > n {
                    break;
                }
                if !b[n - k].is_zero() {
                    s -= uk * &b[n - k];
                }
            }
            b[n] = s;
        }
        let coeffs = b
            .into_iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (i as i64 - lead, c / &c0))
            .collect();
        Ok(QExpansion { denom: self.denom, trunc: self.trunc - 2 * lead, coeffs })
    }

    /// Returns `a(q^m)` for a positive rational `m`.
    pub fn substitute_power(&self, m: Exp) -> Self {
        assert!(m > Exp::zero(), "substitution power must be positive");
        let (p, r) = (*m.numer(), *m.denom());
        QExpansion {
            denom: self.denom * r,
            trunc: self.trunc * p,
            coeffs: self.coeffs.iter().map(|(n, c)| (n * p, c.clone())).collect(),
        }
        .normalized()
    }

    /// `q d/dq`.
    pub fn q_derivative(&self) -> Self {
        let d = self.denom;
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(n, _)| **n != 0)
            .map(|(n, c)| (*n, c * rat(*n, d)))
            .collect();
        QExpansion { denom: d, trunc: self.trunc, coeffs }
    }

    /// Index of the first exponent (below both truncations) where the series differ.
    pub fn first_difference(&self, other: &Self) -> Option<Exp> {
        let (a, b) = Self::aligned(self, other);
        let t = a.trunc.min(b.trunc);
        let zero = BigRational::zero();
        let keys: std::collections::BTreeSet<i64> =
            a.coeffs.keys().chain(b.coeffs.keys()).copied().filter(|n| *n < t).collect();
        keys.into_iter()
            .find(|n| a.coeffs.get(n).unwrap_or(&zero) != b.coeffs.get(n).unwrap_or(&zero))
            .map(|n| Exp::new(n, a.denom))
    }

    /// Equality on the common truncation window.
    pub fn agrees_with(&self, other: &Self) -> bool {
        self.first_difference(other).is_none()
    }

    pub fn eval_numeric(&self, tau: Complex64) -> Result<Complex64> {
        if !(tau.im > 0.0) {
            return Err(Error::NonconvergentEvaluation(tau.im));
        }
        let two_pi_i_tau = Complex64::new(0.0, 2.0 * std::f64::consts::PI) * tau;
        let d = self.denom as f64;
        Ok(self
            .coeffs
            .iter()
            .map(|(n, c)| (two_pi_i_tau * (*n as f64 / d)).exp() * to_f64(c))
            .sum())
    }

    /// Value together with an estimate of the neglected tail `Σ_{x ≥ order} |c_x||q^x|`.
    pub fn eval_with_tail(&self, tau: Complex64, growth: CoeffGrowth) -> Result<(Complex64, f64)> {
        let v = self.eval_numeric(tau)?;
        let d = self.denom as f64;
        let decay = (-2.0 * std::f64::consts::PI * tau.im / d).exp();
        let x0 = self.trunc as f64 / d;
        let mut tail = 0.0;
        let mut k = 0.0;
        let mut r = (-2.0 * std::f64::consts::PI * tau.im * x0).exp();
        loop {
            let term = growth.constant * (1.0 + (x0 + k / d).abs()).powf(growth.power) * r;
            tail += term;
            if term < 1e-20 * tail.max(1e-300) || k > 1e7 || r == 0.0 {
                break;
            }
            r *= decay;
            k += 1.0;
        }
        Ok((v, tail))
    }
}

impl PartialEq for QExpansion {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = Self::aligned(self, other);
        a.trunc == b.trunc && a.coeffs == b.coeffs
    }
}

macro_rules! forward_binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<&QExpansion> for &QExpansion {
            type Output = QExpansion;
            fn $m(self, rhs: &QExpansion) -> QExpansion {
                $body(self, rhs)
            }
        }
        impl $tr<QExpansion> for QExpansion {
            type Output = QExpansion;
            fn $m(self, rhs: QExpansion) -> QExpansion {
                $body(&self, &rhs)
            }
        }
        impl $tr<&QExpansion> for QExpansion {
            type Output = QExpansion;
            fn $m(self, rhs: &QExpansion) -> QExpansion {
                $body(&self, rhs)
            }
        }
        impl $tr<QExpansion> for &QExpansion {
            type Output = QExpansion;
            fn $m(self, rhs: QExpansion) -> QExpansion {
                $body(self, &rhs)
            }
        }
    };
}

forward_binop!(Add, add, |a: &QExpansion, b: &QExpansion| a.combine(b, 1));
forward_binop!(Sub, sub, |a: &QExpansion, b: &QExpansion| a.combine(b, -1));
forward_binop!(Mul, mul, |a: &QExpansion, b: &QExpansion| a.mul_series(b));

impl Neg for &QExpansion {
    type Output = QExpansion;
    fn neg(self) -> QExpansion {
        self.scale(&-BigRational::one())
    }
}

impl Neg for QExpansion {
    type Output = QExpansion;
    fn neg(self) -> QExpansion {
        -&self
    }
}

fn fmt_exp(e: Exp) -> String {
    if e.is_integer() {
        e.numer().to_string()
    } else {
        format!("{}/{}", e.numer(), e.denom())
    }
}

fn braced(e: Exp) -> String {
    if e.is_integer() && !e.is_negative() {
        fmt_exp(e)
    } else {
        format!("{{{}}}", fmt_exp(e))
    }
}

impl fmt::Display for QExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (e, c) in self.terms() {
            let neg = c.is_negative();
            let a = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            first = false;
            let show_coeff = !a.is_one() || e.is_zero();
            if show_coeff {
                if a.is_integer() || e.is_zero() {
                    write!(f, "{a}")?;
                } else {
                    write!(f, "({a})")?;
                }
            }
            if !e.is_zero() {
                if e.is_one() {
                    write!(f, "q")?;
                } else {
                    write!(f, "q^{}", braced(e))?;
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, " + O(q^{})", braced(self.order()))
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    denom: i64,
    trunc: i64,
    coeffs: Vec<(i64, String)>,
}

pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let parse = |t: &str| t.trim().parse::<BigInt>().map_err(|e| Error::Parse(format!("{t}: {e}")));
    match s.split_once('/') {
        Some((n, d)) => {
            let d = parse(d)?;
            if d.is_zero() {
                return Err(Error::Parse(format!("zero denominator in {s}")));
            }
            Ok(BigRational::new(parse(n)?, d))
        }
        None => Ok(BigRational::from_integer(parse(s)?)),
    }
}

pub fn parse_exp(s: &str) -> Option<Exp> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                return None;
            }
            Some(Exp::new(n.trim().parse().ok()?, d))
        }
        None => Some(Exp::from_integer(s.parse().ok()?)),
    }
}

pub fn format_exp(e: Exp) -> String {
    fmt_exp(e)
}

pub fn format_rational(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

impl Serialize for QExpansion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Record {
            denom: self.denom,
            trunc: self.trunc,
            coeffs: self.coeffs.iter().map(|(n, c)| (*n, format_rational(c))).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QExpansion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = Record::deserialize(d)?;
        if r.denom <= 0 {
            return Err(serde::de::Error::custom("denom must be positive"));
        }
        let mut coeffs = BTreeMap::new();
        for (n, c) in r.coeffs {
            if n >= r.trunc {
                return Err(serde::de::Error::custom(format!("index {n} at or beyond trunc {}", r.trunc)));
            }
            let c = parse_rational(&c).map_err(serde::de::Error::custom)?;
            coeffs.insert(n, c);
        }
        Ok(QExpansion::from_map(r.denom, r.trunc, coeffs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly(cs: &[(i64, i64)], order: i64) -> QExpansion {
        QExpansion::from_terms(cs.iter().map(|(e, c)| (Exp::from_integer(*e), int(*c))), Exp::from_integer(order))
    }

    fn euler_product(order: i64) -> QExpansion {
        let mut p = QExpansion::one(Exp::from_integer(order));
        for n in 1..order {
            p = &p * &poly(&[(0, 1), (n, -1)], order);
        }
        p
    }

    #[test]
    fn add_cancels() {
        let o = exp(11, 1);
        let a = QExpansion::from_terms(vec![(exp(1, 24), int(1)), (exp(25, 24), int(-1))], o);
        let b = QExpansion::monomial(exp(25, 24), int(1), o);
        assert_eq!(&a + &b, QExpansion::monomial(exp(1, 24), int(1), o));
    }

    #[test]
    fn difference_of_squares() {
        let p = &poly(&[(0, 1), (1, 1)], 3) * &poly(&[(0, 1), (1, -1)], 3);
        assert_eq!(p, poly(&[(0, 1), (2, -1)], 3));
    }

    #[test]
    fn scale_doubles_product() {
        let e = euler_product(10);
        let twice = e.scale_int(2);
        let mut direct = QExpansion::monomial(Exp::zero(), int(2), Exp::from_integer(10));
        for n in 1..10 {
            direct = &direct * &poly(&[(0, 1), (n, -1)], 10);
        }
        assert_eq!(twice, direct);
    }

    #[test]
    fn geometric_inverse() {
        let inv = poly(&[(0, 1), (1, -1)], 4).invert().unwrap();
        assert_eq!(inv, poly(&[(0, 1), (1, 1), (2, 1), (3, 1)], 4));
    }

    fn partitions(n: usize) -> Vec<i64> {
        // p(k) by counting partitions with parts at most m
        let mut t = vec![vec![0i64; n + 1]; n + 1];
        for m in 0..=n {
            t[m][0] = 1;
        }
        for m in 1..=n {
            for k in 1..=n {
                t[m][k] = t[m - 1][k] + if k >= m { t[m][k - m] } else { 0 };
            }
        }
        (0..=n).map(|k| t[n][k]).collect()
    }

    #[test]
    fn partition_generating_function() {
        let inv = euler_product(10).invert().unwrap();
        let p = partitions(9);
        for k in 0..10 {
            assert_eq!(inv.coeff(Exp::from_integer(k)), int(p[k as usize]));
        }
        assert_eq!(inv.order(), Exp::from_integer(10));
    }

    #[test]
    fn invert_of_zero_fails() {
        assert_eq!(QExpansion::zero(exp(3, 1)).invert().unwrap_err(), Error::ZeroLeadingCoefficient);
    }

    #[test]
    fn invert_with_negative_lead() {
        let a = QExpansion::from_terms(vec![(exp(-1, 2), int(2)), (exp(1, 2), int(1))], exp(5, 2));
        let p = &a * &a.invert().unwrap();
        assert_eq!(p, QExpansion::one(p.order()));
        assert_eq!(p.order(), exp(3, 1));
    }

    #[test]
    fn substitute_powers() {
        let a = poly(&[(0, 1), (1, 1)], 2);
        assert_eq!(a.substitute_power(exp(3, 1)), poly(&[(0, 1), (3, 1)], 6));
        let s = QExpansion::monomial(exp(1, 24), int(1), exp(2, 1)).substitute_power(exp(3, 1));
        assert_eq!(s.lead_exponent(), exp(1, 8));
    }

    #[test]
    fn q_derivative_termwise() {
        assert!(QExpansion::one(exp(5, 1)).q_derivative().is_zero());
        let h = QExpansion::monomial(exp(1, 2), int(1), exp(3, 1)).q_derivative();
        assert_eq!(h, QExpansion::monomial(exp(1, 2), rat(1, 2), exp(3, 1)));
        let th = QExpansion::from_terms((0..4).map(|n| (Exp::from_integer(n * n), int(1))), exp(10, 1));
        let want = QExpansion::from_terms((0..4).map(|n| (Exp::from_integer(n * n), int(n * n))), exp(10, 1));
        assert_eq!(th.q_derivative(), want);
    }

    #[test]
    fn eval_simple() {
        let a = poly(&[(0, 1), (1, 1)], 2);
        let v = a.eval_numeric(Complex64::new(0.0, 1.0)).unwrap();
        assert!((v.re - (1.0 + (-2.0 * std::f64::consts::PI).exp())).abs() < 1e-15);
        assert!(QExpansion::zero(exp(1, 1)).eval_numeric(Complex64::new(0.3, 2.0)).unwrap().norm() == 0.0);
        assert!(matches!(
            a.eval_numeric(Complex64::new(0.0, 0.0)),
            Err(Error::NonconvergentEvaluation(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let a = QExpansion::from_terms(vec![(exp(1, 8), rat(-3, 7)), (exp(9, 8), int(5))], exp(3, 1));
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"denom":8,"trunc":24,"coeffs":[[1,"-3/7"],[9,"5"]]}"#);
        let b: QExpansion = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn display() {
        let a = QExpansion::from_terms(vec![(exp(0, 1), int(1)), (exp(2, 1), int(-3)), (exp(1, 3), rat(1, 2))], exp(4, 1));
        assert_eq!(a.to_string(), "1 + (1/2)q^{1/3} - 3q^2 + O(q^4)");
    }
    fn series() -> impl Strategy<Value = QExpansion> {
        (1i64..4, proptest::collection::vec((0i64..12, -5i64..6), 0..6), 3i64..6).prop_map(|(d, ts, order)| {
            QExpansion::from_terms(ts.into_iter().map(|(i, c)| (exp(i, d), int(c))), Exp::from_integer(order))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ring_axioms(a in series(), b in series(), c in series()) {
            prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
            prop_assert_eq!(&a * &b, &b * &a);
            let lhs = &a * &(&b + &c);
            let rhs = &(&a * &b) + &(&a * &c);
            // truncations may differ; compare on the common window
            let o = lhs.order().min(rhs.order());
            prop_assert_eq!(lhs.truncate(o), rhs.truncate(o));
        }

        #[test]
        fn invert_is_two_sided(a in series(), c in 1i64..4) {
            let a = &a.truncate(Exp::from_integer(3)) + &QExpansion::monomial(exp(-1, 2), int(c), Exp::from_integer(3));
            let b = a.invert().unwrap();
            let one = QExpansion::one(Exp::from_integer(100));
            let l = &a * &b;
            let r = &b * &a;
            prop_assert_eq!(l.clone(), one.truncate(l.order()));
            prop_assert_eq!(r.clone(), one.truncate(r.order()));
        }

        #[test]
        fn substitute_power_roundtrip(a in series(), m in 1i64..5, d in 1i64..4) {
            let m = exp(m, d);
            prop_assert_eq!(a.substitute_power(m).substitute_power(m.recip()), a);
        }

        #[test]
        fn truncation_stability(a in series(), b in series(), cut in 1i64..3) {
            let o = Exp::from_integer(cut);
            let p = &a * &b;
            let q = &a.truncate(o) * &b.truncate(o);
            let w = p.order().min(q.order());
            prop_assert_eq!(p.truncate(w), q.truncate(w));
        }

        #[test]
        fn json_records_roundtrip(a in series()) {
            let s = serde_json::to_string(&a).unwrap();
            let b: QExpansion = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
