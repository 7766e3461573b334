//! Named modular objects as exact q-series: η, η³, E2, unary theta functions
//! θ^{[k]}_{m,r}, ϑ at 2-torsion points and the Ramanujan–Serre derivative.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::qseries::{exp, exp_to_big, int, parse_exp, Exp, QExpansion};

/// `q^{1/24} ∏ (1 - q^n)`, via the pentagonal number theorem.
pub fn eta_series(order: Exp) -> QExpansion {
    let shifted = order - exp(1, 24);
    let mut terms = Vec::new();
    let mut k: i64 = 0;
    loop {
        let mut any = false;
        for kk in if k == 0 { vec![0] } else { vec![k, -k] } {
            let e = Exp::from_integer(kk * (3 * kk - 1) / 2);
            if e < shifted {
                any = true;
                terms.push((e + exp(1, 24), int(if kk % 2 == 0 { 1 } else { -1 })));
            }
        }
        if !any && k > 0 {
            break;
        }
        k += 1;
    }
    QExpansion::from_terms(terms, order).rescaled_to_multiple(24)
}

/// `η³ = Σ_{n≥0} (-1)^n (2n+1) q^{(2n+1)²/8}`.
pub fn eta3_series(order: Exp) -> QExpansion {
    let mut terms = Vec::new();
    let mut n = 0i64;
    loop {
        let e = exp((2 * n + 1) * (2 * n + 1), 8);
        if e >= order {
            break;
        }
        terms.push((e, int(if n % 2 == 0 { 2 * n + 1 } else { -(2 * n + 1) })));
        n += 1;
    }
    QExpansion::from_terms(terms, order)
}

pub fn sigma1(n: i64) -> i64 {
    (1..=n).filter(|d| n % d == 0).sum()
}

pub fn e2_series(order: Exp) -> QExpansion {
    let top = order.ceil().to_integer();
    let terms = (0..top.max(0)).map(|n| {
        let c = if n == 0 { 1 } else { -24 * sigma1(n) };
        (Exp::from_integer(n), int(c))
    });
    QExpansion::from_terms(terms, order)
}

/// Index, residue and derivative order of θ^{[k]}_{m,r}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnaryThetaSpec {
    m: Exp,
    r: i64,
    k: u32,
    // half-integral m: the character depends on r itself, not only on r mod 2m
    flip: bool,
}

impl UnaryThetaSpec {
    pub fn new(m: Exp, r: i64, k: u32) -> Result<Self> {
        if m <= Exp::zero() || !(m * 2).is_integer() {
            return Err(Error::MalformedParams(format!("theta index {m} must be a positive half-integer")));
        }
        let two_m = (m * 2).to_integer();
        let flip = !m.is_integer() && r.div_euclid(two_m).rem_euclid(2) == 1;
        Ok(UnaryThetaSpec { m, r: r.rem_euclid(two_m), k, flip })
    }

    pub fn m(&self) -> Exp {
        self.m
    }

    pub fn r(&self) -> i64 {
        self.r
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn is_integral(&self) -> bool {
        self.m.is_integer()
    }

    /// Lattice shift: `n ∈ ℤ + shift`.
    pub fn shift(&self) -> Exp {
        let s = Exp::from_integer(self.r) / (self.m * 2);
        if self.is_integral() {
            s
        } else {
            s + exp(1, 2)
        }
    }

    /// Terms `(n, sign)` of the defining sum; for half-integral m the sign is `(−1)^{n−(r+m)/2m}` with `m n² < order`.
    pub fn lattice(&self, order: Exp) -> Vec<(Exp, i64)> {
        let s = self.shift();
        let bound = (order.to_f64_lossy() / self.m.to_f64_lossy()).max(0.0).sqrt().ceil() as i64 + 2;
        let mut out = Vec::new();
        for j in -bound..=bound {
            let n = s + j;
            if self.m * n * n < order {
                let odd = !self.is_integral() && (j.rem_euclid(2) == 1) != self.flip;
                let sign = if odd { -1 } else { 1 };
                out.push((n, sign));
            }
        }
        out
    }
}

impl fmt::Display for UnaryThetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.k == 0 {
            write!(f, "theta_{{{},{}}}", self.m, self.r)
        } else {
            write!(f, "theta^[{}]_{{{},{}}}", self.k, self.m, self.r)
        }
    }
}

trait ToF64Lossy {
    fn to_f64_lossy(&self) -> f64;
}

impl ToF64Lossy for Exp {
    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

fn pow_rat(n: Exp, k: u32) -> BigRational {
    let b = exp_to_big(n);
    let mut r = BigRational::one();
    for _ in 0..k {
        r *= &b;
    }
    r
}

/// θ^{[k]}_{m,r}(τ) = Σ n^k q^{m n²}, with the alternating character for half-integral m.
pub fn theta_unary_series(spec: UnaryThetaSpec, order: Exp) -> QExpansion {
    let terms = spec.lattice(order).into_iter().map(|(n, sign)| {
        let c = pow_rat(n, spec.k) * int(sign);
        (spec.m * n * n, c)
    });
    QExpansion::from_terms(terms, order)
}

/// `i^phase · series`, for series whose coefficients are Gaussian rationals of a single phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasedSeries {
    pub i_power: u8,
    pub series: QExpansion,
}

impl PhasedSeries {
    /// The square, which is always real.
    pub fn squared(&self) -> QExpansion {
        let s = &self.series * &self.series;
        if self.i_power % 2 == 1 {
            -s
        } else {
            s
        }
    }
}

/// ϑ((ℓ1 τ + ℓ2)/2; τ) from `ϑ(z) = Σ_{n ∈ ℤ+1/2} e^{πin} q^{n²/2} ζ^n`, for any integers ℓ1, ℓ2.
pub fn theta_half_lattice(l1: i64, l2: i64, order: Exp) -> PhasedSeries {
    let i_power = (1 + l2).rem_euclid(4) as u8;
    let alternating = l2.rem_euclid(2) == 0;
    let bound = (2.0 * order.to_f64_lossy().max(0.0) + 1.0).sqrt().ceil() as i64 + l1.abs() + 2;
    let mut terms = Vec::new();
    for j in -bound..=bound {
        let n = exp(2 * j + 1, 2);
        let e = n * n / 2 + n * l1 / 2;
        if e < order {
            let c = if alternating && j.rem_euclid(2) == 1 { -1 } else { 1 };
            terms.push((e, int(c)));
        }
    }
    PhasedSeries { i_power, series: QExpansion::from_terms(terms, order) }
}

pub fn theta_torsion_series(l1: u8, l2: u8, order: Exp) -> Result<PhasedSeries> {
    if l1 > 1 || l2 > 1 {
        return Err(Error::MalformedParams(format!("torsion point ({l1},{l2}) must have entries in {{0,1}}")));
    }
    if l1 == 0 && l2 == 0 {
        return Err(Error::InvalidTorsionPoint);
    }
    Ok(theta_half_lattice(l1 as i64, l2 as i64, order))
}

/// η⁶/ϑ((ℓ1τ+ℓ2)/2)², exact to the given order.
pub fn eta6_over_torsion_sq(l1: u8, l2: u8, order: Exp) -> Result<QExpansion> {
    // ϑ(τ/2)² starts at q^{-1/4}, so carry a little extra precision
    let extra = order + exp(1, 2);
    let th = theta_torsion_series(l1, l2, extra + exp(1, 2))?.squared();
    let e6 = eta_series(extra + 1).pow(6);
    Ok((&e6 * &th.invert()?).truncate(order))
}

/// `D_k f = q df/dq - (k/12) E2 f`.
pub fn serre_derivative(f: &QExpansion, k: Exp) -> QExpansion {
    let rel = f.order() - f.lead_exponent();
    let e2 = e2_series(rel.max(Exp::from_integer(1)));
    let corr = (&e2 * f).scale(&(exp_to_big(k) / int(12)));
    &f.q_derivative() - &corr
}

/// Registry of named series: `eta`, `eta3`, `E2`, `theta(m,r,k)`, `theta_torsion(l1,l2)`.
pub fn registry(name: &str, order: Exp) -> Result<PhasedSeries> {
    let real = |s: QExpansion| PhasedSeries { i_power: 0, series: s };
    let name = name.trim();
    match name {
        "eta" => return Ok(real(eta_series(order))),
        "eta3" => return Ok(real(eta3_series(order))),
        "E2" => return Ok(real(e2_series(order))),
        _ => {}
    }
    let args = |prefix: &str| -> Option<Vec<String>> {
        let rest = name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
        Some(rest.split(',').map(|s| s.trim().to_string()).collect())
    };
    let bad = |what: &str| Error::MalformedParams(format!("{name}: {what}"));
    if let Some(a) = args("theta_torsion") {
        if a.len() != 2 {
            return Err(bad("expected two arguments"));
        }
        let l: Vec<u8> = a.iter().map(|s| s.parse::<u8>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("integer arguments"))?;
        return theta_torsion_series(l[0], l[1], order);
    }
    if let Some(a) = args("theta") {
        if a.len() != 3 {
            return Err(bad("expected theta(m,r,k)"));
        }
        let m: Exp = parse_exp(&a[0]).ok_or_else(|| bad("m"))?;
        let r: i64 = a[1].parse().map_err(|_| bad("r"))?;
        let k: u32 = a[2].parse().map_err(|_| bad("k"))?;
        return Ok(real(theta_unary_series(UnaryThetaSpec::new(m, r, k)?, order)));
    }
    Err(Error::UnknownSeries(name.to_string()))
}
