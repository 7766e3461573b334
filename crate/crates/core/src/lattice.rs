//! Rank one and rank two false theta sums over shifted lattices, and builders for the
//! named series attached to the A2 and B2 characters and the Schur indices.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qseries::{exp, exp_to_big, format_exp, format_rational, int, parse_exp, parse_rational, rat, Exp, QExpansion};
use crate::special::{e2_series, eta6_over_torsion_sq, serre_derivative};

/// How the Gram matrix turns into an exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `scale · (a n1² + 2b n1n2 + c n2²)/2`
    Half,
    /// `scale · (a n1² + 2b n1n2 + c n2²)`
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearForm(pub Exp, pub Exp);

impl LinearForm {
    pub fn n1() -> Self {
        LinearForm(Exp::one(), Exp::zero())
    }
    pub fn n2() -> Self {
        LinearForm(Exp::zero(), Exp::one())
    }
    pub fn new(a: i64, b: i64) -> Self {
        LinearForm(Exp::from_integer(a), Exp::from_integer(b))
    }
    fn sign_at(&self, n: [Exp; 2]) -> i64 {
        let v = self.0 * n[0] + self.1 * n[1];
        if v.is_zero() {
            0
        } else if v > Exp::zero() {
            1
        } else {
            -1
        }
    }
}

/// `coeff · sgn(λ·n) sgn(μ·n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignPair {
    pub coeff: Exp,
    pub lambda: LinearForm,
    pub mu: LinearForm,
}

impl SignPair {
    pub fn new(lambda: LinearForm, mu: LinearForm) -> Self {
        SignPair { coeff: Exp::one(), lambda, mu }
    }
}

/// `coeff · n1^i n2^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub i: u32,
    pub j: u32,
    pub coeff: BigRational,
}

impl Monomial {
    pub fn new(i: u32, j: u32, coeff: BigRational) -> Self {
        Monomial { i, j, coeff }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FalseThetaSpec {
    pub gram: [[Exp; 2]; 2],
    pub normalization: Normalization,
    pub shift: [Exp; 2],
    /// Summed sign pairs; empty means no sign factor.
    pub signs: Vec<SignPair>,
    /// Polynomial weight; empty means weight 1.
    pub weight: Vec<Monomial>,
    pub parity: [i64; 2],
    pub scale: Exp,
    pub prefactor_exponent: Exp,
}

impl FalseThetaSpec {
    pub fn new(gram: [[i64; 2]; 2], normalization: Normalization, shift: [Exp; 2]) -> Self {
        let g = |x: i64| Exp::from_integer(x);
        FalseThetaSpec {
            gram: [[g(gram[0][0]), g(gram[0][1])], [g(gram[1][0]), g(gram[1][1])]],
            normalization,
            shift,
            signs: Vec::new(),
            weight: Vec::new(),
            parity: [0, 0],
            scale: Exp::one(),
            prefactor_exponent: Exp::zero(),
        }
    }

    pub fn with_signs(mut self, signs: Vec<SignPair>) -> Self {
        self.signs = signs;
        self
    }

    pub fn with_weight(mut self, weight: Vec<Monomial>) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_parity(mut self, parity: [i64; 2]) -> Self {
        self.parity = parity;
        self
    }

    pub fn with_scale(mut self, scale: Exp) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [[a, b], [b2, c]] = self.gram;
        if b != b2 {
            return Err(Error::MalformedParams("gram matrix must be symmetric".into()));
        }
        if a <= Exp::zero() || a * c - b * b <= Exp::zero() {
            return Err(Error::MalformedParams("gram matrix must be positive definite".into()));
        }
        if self.scale <= Exp::zero() {
            return Err(Error::MalformedParams("scale must be positive".into()));
        }
        Ok(())
    }

    /// Exponent of `q` at the lattice point `n`.
    pub fn exponent(&self, n: [Exp; 2]) -> Exp {
        let [[a, b], [_, c]] = self.gram;
        let q = a * n[0] * n[0] + b * n[0] * n[1] * 2 + c * n[1] * n[1];
        let q = match self.normalization {
            Normalization::Half => q / 2,
            Normalization::Scaled => q,
        };
        self.prefactor_exponent + self.scale * q
    }

    /// Smallest eigenvalue of the exponent's quadratic form (a lower bound in floating point).
    fn min_eigenvalue(&self) -> f64 {
        let f = |e: Exp| *e.numer() as f64 / *e.denom() as f64;
        let [[a, b], [_, c]] = self.gram;
        let h = match self.normalization {
            Normalization::Half => 0.5,
            Normalization::Scaled => 1.0,
        } * f(self.scale);
        let (a, b, c) = (f(a) * h, f(b) * h, f(c) * h);
        let tr = a + c;
        let det = a * c - b * b;
        // smaller root of t² - tr t + det, in the cancellation-free form
        2.0 * det / (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
    }

    fn sign_factor(&self, n: [Exp; 2]) -> Exp {
        if self.signs.is_empty() {
            return Exp::one();
        }
        self.signs
            .iter()
            .map(|p| p.coeff * (p.lambda.sign_at(n) * p.mu.sign_at(n)))
            .sum()
    }

    fn weight_at(&self, n: [Exp; 2]) -> BigRational {
        if self.weight.is_empty() {
            return BigRational::one();
        }
        let (x, y) = (exp_to_big(n[0]), exp_to_big(n[1]));
        let mut s = BigRational::zero();
        for m in &self.weight {
            let mut t = m.coeff.clone();
            for _ in 0..m.i {
                t *= &x;
            }
            for _ in 0..m.j {
                t *= &y;
            }
            s += t;
        }
        s
    }

    /// All lattice points `n ∈ ℤ² + shift` with exponent below `order`, with their integer offsets.
    pub fn points(&self, order: Exp) -> Vec<([i64; 2], [Exp; 2])> {
        let room = order - self.prefactor_exponent;
        let mut out = Vec::new();
        if room <= Exp::zero() {
            return out;
        }
        let r = ((*room.numer() as f64 / *room.denom() as f64) / self.min_eigenvalue()).sqrt() * (1.0 + 1e-9) + 1.0;
        let range = |s: Exp| {
            let sf = *s.numer() as f64 / *s.denom() as f64;
            ((-r - sf).floor() as i64 - 1)..=((r - sf).ceil() as i64 + 1)
        };
        for j1 in range(self.shift[0]) {
            for j2 in range(self.shift[1]) {
                let n = [self.shift[0] + j1, self.shift[1] + j2];
                if self.exponent(n) < order {
                    out.push(([j1, j2], n));
                }
            }
        }
        out
    }
}

pub fn false_theta_sum(spec: &FalseThetaSpec, order: Exp) -> Result<QExpansion> {
    spec.validate()?;
    let mut terms = Vec::new();
    for (j, n) in spec.points(order) {
        let s = spec.sign_factor(n);
        if s.is_zero() {
            continue;
        }
        let mut c = spec.weight_at(n) * exp_to_big(s);
        if (spec.parity[0] * j[0] + spec.parity[1] * j[1]).rem_euclid(2) == 1 {
            c = -c;
        }
        if !c.is_zero() {
            terms.push((spec.exponent(n), c));
        }
    }
    Ok(QExpansion::from_terms(terms, order))
}

/// `Σ_{n ∈ ℤ+residue} [(-1)^{n-residue}] [sgn(n+σ)] (n+σ)^k q^{m (n+σ)²}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneDimFalseSpec {
    pub modulus: Exp,
    pub residue: Exp,
    pub sign_shift: Exp,
    pub signed: bool,
    pub alternating: bool,
    pub power: u32,
}

impl OneDimFalseSpec {
    pub fn new(modulus: Exp, residue: Exp) -> Self {
        OneDimFalseSpec { modulus, residue, sign_shift: Exp::zero(), signed: true, alternating: false, power: 0 }
    }
    pub fn alternating(mut self) -> Self {
        self.alternating = true;
        self
    }
    pub fn unsigned(mut self) -> Self {
        self.signed = false;
        self
    }
    pub fn with_power(mut self, k: u32) -> Self {
        self.power = k;
        self
    }
    pub fn with_sign_shift(mut self, s: Exp) -> Self {
        self.sign_shift = s;
        self
    }
}

pub fn one_dim_sum(spec: &OneDimFalseSpec, order: Exp) -> Result<QExpansion> {
    if spec.modulus <= Exp::zero() {
        return Err(Error::MalformedParams("modulus must be positive".into()));
    }
    let m = *spec.modulus.numer() as f64 / *spec.modulus.denom() as f64;
    let o = (*order.numer() as f64 / *order.denom() as f64).max(0.0);
    let s0 = spec.residue + spec.sign_shift;
    let sf = *s0.numer() as f64 / *s0.denom() as f64;
    let r = (o / m).sqrt() + 2.0;
    let mut terms = Vec::new();
    for j in ((-r - sf).floor() as i64)..=((r - sf).ceil() as i64) {
        let x = s0 + j;
        let e = spec.modulus * x * x;
        if e >= order {
            continue;
        }
        let mut c: i64 = 1;
        if spec.signed {
            c = if x.is_zero() { 0 } else if x > Exp::zero() { 1 } else { -1 };
        }
        if spec.alternating && j.rem_euclid(2) == 1 {
            c = -c;
        }
        if c == 0 {
            continue;
        }
        let mut v = int(c);
        for _ in 0..spec.power {
            v *= exp_to_big(x);
        }
        terms.push((e, v));
    }
    Ok(QExpansion::from_terms(terms, order))
}

fn third() -> Exp {
    exp(1, 3)
}

/// Ordinary theta series of `Q_A(n) = n1² + n1n2 + n2²`.
pub fn theta_a_spec() -> FalseThetaSpec {
    FalseThetaSpec::new([[2, 1], [1, 2]], Normalization::Half, [Exp::zero(), Exp::zero()])
}

/// `Ψ = Σ_{n ∈ ℤ²+(1/3,1/3)} sgn(n1) sgn(n2) n1 q^{Q_A(n)}`.
pub fn psi_spec() -> FalseThetaSpec {
    FalseThetaSpec::new([[2, 1], [1, 2]], Normalization::Half, [third(), third()])
        .with_signs(vec![SignPair::new(LinearForm::n1(), LinearForm::n2())])
        .with_weight(vec![Monomial::new(1, 0, int(1))])
}

fn qb_spec(shift: [Exp; 2]) -> FalseThetaSpec {
    // Q_B(n) = 3/2 n1² + 3 n1n2 + 3 n2²
    FalseThetaSpec::new([[3, 3], [3, 6]], Normalization::Half, shift)
}

fn phi1_sign() -> Vec<SignPair> {
    vec![
        SignPair::new(LinearForm::n1(), LinearForm::n2()),
        SignPair::new(LinearForm::n1(), LinearForm::new(1, 1)),
    ]
}

/// Φ1 split as `(polynomial part, E2-coefficient part)`: Φ1 = A - (E2/18)·B.
pub fn phi1_parts(order: Exp) -> Result<(QExpansion, QExpansion)> {
    let base = qb_spec([third(), exp(1, 6)]).with_signs(phi1_sign()).with_parity([1, 0]);
    let poly = base.clone().with_weight(vec![
        Monomial::new(2, 0, int(1)),
        Monomial::new(1, 1, int(4)),
        Monomial::new(0, 2, int(4)),
    ]);
    Ok((false_theta_sum(&poly, order)?, false_theta_sum(&base, order)?))
}

pub fn phi1(order: Exp) -> Result<QExpansion> {
    let (a, b) = phi1_parts(order)?;
    let e2 = e2_series(order - b.lead_exponent().min(Exp::zero()) + 1);
    Ok((&a - &(&e2 * &b).scale(&rat(1, 18))).truncate(order))
}

pub fn phi2(order: Exp) -> Result<QExpansion> {
    let spec = qb_spec([third(), exp(1, 6)])
        .with_signs(vec![SignPair::new(LinearForm::new(1, 1), LinearForm::n2())])
        .with_weight(vec![Monomial::new(2, 0, int(1)), Monomial::new(1, 1, int(2))])
        .with_parity([1, 0]);
    false_theta_sum(&spec, order)
}

pub fn lambda_spec(a: [i64; 2]) -> FalseThetaSpec {
    qb_spec([third(), exp(a[0], 2) + exp(1, 6)])
        .with_signs(vec![SignPair::new(LinearForm::n1(), LinearForm::new(1, 2))])
        .with_parity([a[1] + 1, 0])
}

pub fn phi_r(r: i64) -> OneDimFalseSpec {
    OneDimFalseSpec::new(Exp::from_integer(3), exp(r, 6))
}

pub fn omega_r(r: i64) -> OneDimFalseSpec {
    OneDimFalseSpec::new(exp(3, 2), exp(r, 3) + exp(1, 2)).alternating()
}

pub fn rogers_psi() -> OneDimFalseSpec {
    OneDimFalseSpec::new(Exp::from_integer(2), Exp::zero()).with_sign_shift(exp(1, 4))
}

/// `G0 = 1 + 3Σ_{n∈ℤ}|n| q^{n²} - 6 q^{-1/4} Σ_{n∈ℤ+1/2} |n| q^{n²}`.
pub fn g0(order: Exp) -> Result<QExpansion> {
    let a = one_dim_sum(&OneDimFalseSpec::new(Exp::one(), Exp::zero()).with_power(1), order)?;
    let b = one_dim_sum(&OneDimFalseSpec::new(Exp::one(), exp(1, 2)).with_power(1), order + exp(1, 4))?.shift(exp(-1, 4));
    Ok(&(&QExpansion::one(order) + &a.scale_int(3)) - &b.scale_int(6))
}

pub fn psi(order: Exp) -> Result<QExpansion> {
    false_theta_sum(&psi_spec(), order)
}

pub fn phi(order: Exp) -> Result<QExpansion> {
    Ok(&phi1(order)? + &phi2(order)?)
}

pub fn lambda(a: [i64; 2], order: Exp) -> Result<QExpansion> {
    false_theta_sum(&lambda_spec(a), order)
}

/// Builds `F0`, the weight-adjusted one-dimensional part of the B2 character.
pub fn f0(order: Exp) -> Result<QExpansion> {
    let w = order + 1;
    let half = exp(1, 2);
    let a = eta6_over_torsion_sq(0, 1, w)?;
    let b = eta6_over_torsion_sq(1, 0, w)?;
    let c = eta6_over_torsion_sq(1, 1, w)?;
    let phi1s = one_dim_sum(&phi_r(1), w)?;
    let phi2s = one_dim_sum(&phi_r(2), w)?;
    let om1 = one_dim_sum(&omega_r(1), w)?;
    let om0 = one_dim_sum(&omega_r(0), w)?;
    let d = |f: &QExpansion| serre_derivative(f, half).scale_int(6);

    let mut total = (&e2_series(w) + &QExpansion::one(w).scale_int(2)).scale(&rat(1, 4));
    total = &total + &a;
    total = &total + &d(&om1).shift(exp(-1, 24));
    total = &total - &d(&om0).shift(exp(-3, 8));
    let op1 = &(&(&d(&phi1s) - &(&a * &phi1s)) + &(&b * &phi1s).shift(-half)) - &(&c * &phi1s).shift(-half);
    total = &total + &op1.shift(exp(-1, 12));
    let op2 = &(&(&d(&phi2s) + &(&a * &phi2s)) + &(&b * &phi2s)) + &(&c * &phi2s);
    total = &total - &op2.shift(exp(-1, 3));
    fit(total, order)
}

/// `𝔽_k = (1/2) Σ_{n∈ℤ²+(0,1/2)} (-1)^{n1} sgn(n1) sgn(n2) q^{n1²/2 + n1n2 + (k+1)n2²}`.
pub fn fk_spec(k: u32) -> FalseThetaSpec {
    let c = 2 * (k as i64 + 1);
    FalseThetaSpec::new([[1, 1], [1, c]], Normalization::Half, [Exp::zero(), exp(1, 2)])
        .with_signs(vec![SignPair::new(LinearForm::n1(), LinearForm::n2())])
        .with_weight(vec![Monomial::new(0, 0, rat(1, 2))])
        .with_parity([1, 0])
}

pub fn fk(k: u32, order: Exp) -> Result<QExpansion> {
    if k == 0 {
        return Err(Error::MalformedParams("Fk needs k >= 1".into()));
    }
    false_theta_sum(&fk_spec(k), order)
}

/// Truncates to `order`, panicking if the intermediate precision was insufficient.
pub(crate) fn fit(s: QExpansion, order: Exp) -> Result<QExpansion> {
    assert!(s.order() >= order, "internal precision {} below requested {}", s.order(), order);
    Ok(s.truncate(order))
}

/// Parameters accepted by [`builtin`].
#[derive(Clone, Debug, Default)]
pub struct BuiltinParams {
    pub a: Option<[i64; 2]>,
    pub k: Option<u32>,
    pub r: Option<i64>,
    pub fsqe: Option<crate::invariants::FsqeInput>,
}

pub const BUILTIN_NAMES: &[&str] =
    &["G0", "Psi", "Phi", "Phi1", "Phi2", "Lambda", "F0", "Fk", "Fsqe", "ThetaA", "psi", "phi", "omega"];

pub fn builtin(name: &str, params: &BuiltinParams, order: Exp) -> Result<QExpansion> {
    let need = |what: &str| Error::MalformedParams(format!("{name} needs parameter {what}"));
    match name {
        "G0" => g0(order),
        "Psi" => psi(order),
        "Phi" => phi(order),
        "Phi1" => phi1(order),
        "Phi2" => phi2(order),
        "Lambda" => lambda(params.a.ok_or_else(|| need("a"))?, order),
        "F0" => f0(order),
        "Fk" => fk(params.k.ok_or_else(|| need("k"))?, order),
        "Fsqe" => crate::invariants::fsqe_series(params.fsqe.as_ref().ok_or_else(|| need("fsqe"))?, order),
        "ThetaA" => false_theta_sum(&theta_a_spec(), order),
        "psi" => one_dim_sum(&rogers_psi(), order),
        "phi" => one_dim_sum(&phi_r(params.r.ok_or_else(|| need("r"))?), order),
        "omega" => one_dim_sum(&omega_r(params.r.ok_or_else(|| need("r"))?), order),
        _ => Err(Error::UnknownSeries(name.to_string())),
    }
}

#[derive(Serialize, Deserialize)]
struct SignRecord {
    #[serde(default = "one_str")]
    coeff: String,
    lambda: [String; 2],
    mu: [String; 2],
}

fn one_str() -> String {
    "1".into()
}

#[derive(Serialize, Deserialize)]
struct SpecRecord {
    gram: [[String; 2]; 2],
    convention: Normalization,
    shift: [String; 2],
    #[serde(default)]
    signs: Vec<SignRecord>,
    #[serde(default)]
    weight: Vec<(u32, u32, String)>,
    #[serde(default)]
    parity: [i64; 2],
    #[serde(default = "one_str")]
    scale: String,
    #[serde(default = "zero_str")]
    prefactor_exponent: String,
}

fn zero_str() -> String {
    "0".into()
}

fn pe(s: &str) -> Result<Exp> {
    parse_exp(s).ok_or_else(|| Error::Parse(format!("bad rational `{s}`")))
}

impl FalseThetaSpec {
    pub fn to_json(&self) -> String {
        let f = format_exp;
        let rec = SpecRecord {
            gram: [[f(self.gram[0][0]), f(self.gram[0][1])], [f(self.gram[1][0]), f(self.gram[1][1])]],
            convention: self.normalization,
            shift: [f(self.shift[0]), f(self.shift[1])],
            signs: self
                .signs
                .iter()
                .map(|p| SignRecord {
                    coeff: f(p.coeff),
                    lambda: [f(p.lambda.0), f(p.lambda.1)],
                    mu: [f(p.mu.0), f(p.mu.1)],
                })
                .collect(),
            weight: self.weight.iter().map(|m| (m.i, m.j, format_rational(&m.coeff))).collect(),
            parity: self.parity,
            scale: f(self.scale),
            prefactor_exponent: f(self.prefactor_exponent),
        };
        serde_json::to_string(&rec).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: SpecRecord = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let spec = FalseThetaSpec {
            gram: [[pe(&r.gram[0][0])?, pe(&r.gram[0][1])?], [pe(&r.gram[1][0])?, pe(&r.gram[1][1])?]],
            normalization: r.convention,
            shift: [pe(&r.shift[0])?, pe(&r.shift[1])?],
            signs: r
                .signs
                .iter()
                .map(|p| {
                    Ok(SignPair {
                        coeff: pe(&p.coeff)?,
                        lambda: LinearForm(pe(&p.lambda[0])?, pe(&p.lambda[1])?),
                        mu: LinearForm(pe(&p.mu[0])?, pe(&p.mu[1])?),
                    })
                })
                .collect::<Result<_>>()?,
            weight: r
                .weight
                .iter()
                .map(|(i, j, c)| Ok(Monomial::new(*i, *j, parse_rational(c)?)))
                .collect::<Result<_>>()?,
            parity: r.parity,
            scale: pe(&r.scale)?,
            prefactor_exponent: pe(&r.prefactor_exponent)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sign of a rational, as used throughout (sgn(0) = 0).
pub fn sgn(x: &BigRational) -> i64 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}
