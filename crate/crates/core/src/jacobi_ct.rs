//! Laurent expansions in two elliptic variables with q-series coefficients, constant-term
//! extraction, and the closed-form Fourier coefficients of the A2, B2 and Schur-index
//! Jacobi forms.

use std::collections::BTreeMap;
use std::time::Instant;

use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{f0, fit, g0, lambda, phi, psi};
use crate::qseries::{exp, exp_to_big, format_exp, int, rat, Exp, QExpansion};
use crate::special::{e2_series, eta3_series, eta6_over_torsion_sq, eta_series, theta_torsion_series};

/// Bound `|e_i| ≤ slope_i · (x − qmin) + offset_i` on the ζ-exponents `e` occurring at q-order `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZWindow {
    pub slope: [Exp; 2],
    pub offset: [Exp; 2],
    pub qmin: Exp,
}

impl ZWindow {
    pub fn point() -> Self {
        ZWindow { slope: [Exp::zero(); 2], offset: [Exp::zero(); 2], qmin: Exp::zero() }
    }

    pub fn contains(&self, e: [Exp; 2], x: Exp) -> bool {
        (0..2).all(|i| e[i].abs() <= self.slope[i] * (x - self.qmin) + self.offset[i])
    }

    /// Window of a product of two blocks.
    pub fn compose(&self, other: &ZWindow) -> ZWindow {
        ZWindow {
            slope: [self.slope[0].max(other.slope[0]), self.slope[1].max(other.slope[1])],
            offset: [self.offset[0] + other.offset[0], self.offset[1] + other.offset[1]],
            qmin: self.qmin + other.qmin,
        }
    }

    /// Largest q-order (exclusive) at which a term with ζ-exponent `e` can still be cancelled by
    /// a factor with this window, given the total budget `order`. `None` if it never can.
    fn reach(&self, e: [Exp; 2], order: Exp) -> Option<Exp> {
        let mut bound = order;
        for i in 0..2 {
            let excess = e[i].abs() - self.offset[i];
            if self.slope[i].is_zero() {
                if excess > Exp::zero() {
                    return None;
                }
            } else {
                // need |e| ≤ s(x' − qmin) + o with x' < order − x
                bound = bound.min(order - self.qmin - excess / self.slope[i]);
            }
        }
        Some(bound)
    }
}

/// Finite Laurent polynomial in ζ1^{1/d1}, ζ2^{1/d2} with truncated q-series coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentBlock {
    zdenoms: [i64; 2],
    terms: BTreeMap<[i64; 2], QExpansion>,
    order: Exp,
    window: ZWindow,
}

impl LaurentBlock {
    pub fn new(zdenoms: [i64; 2], order: Exp, window: ZWindow) -> Self {
        LaurentBlock { zdenoms, terms: BTreeMap::new(), order, window }
    }

    /// `c(q) · ζ^e`, with `e` in units of `1/zdenoms`.
    pub fn monomial(zdenoms: [i64; 2], e: [i64; 2], c: QExpansion) -> Self {
        let order = c.order();
        let ze = [exp(e[0], zdenoms[0]), exp(e[1], zdenoms[1])];
        let qmin = if c.is_zero() { Exp::zero() } else { c.lead_exponent() };
        let window = ZWindow { slope: [Exp::zero(); 2], offset: [ze[0].abs(), ze[1].abs()], qmin };
        let mut b = LaurentBlock::new(zdenoms, order, window);
        b.insert(e, c);
        b
    }

    pub fn scalar(c: QExpansion) -> Self {
        Self::monomial([1, 1], [0, 0], c)
    }

    pub fn zdenoms(&self) -> [i64; 2] {
        self.zdenoms
    }

    pub fn order(&self) -> Exp {
        self.order
    }

    pub fn window(&self) -> ZWindow {
        self.window
    }

    pub fn terms(&self) -> impl Iterator<Item = ([i64; 2], &QExpansion)> {
        self.terms.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn zexp(&self, e: [i64; 2]) -> [Exp; 2] {
        [exp(e[0], self.zdenoms[0]), exp(e[1], self.zdenoms[1])]
    }

    fn insert(&mut self, e: [i64; 2], c: QExpansion) {
        if c.is_zero() {
            return;
        }
        match self.terms.remove(&e) {
            Some(old) => {
                let s = &old + &c;
                if !s.is_zero() {
                    self.terms.insert(e, s);
                }
            }
            None => {
                self.terms.insert(e, c);
            }
        }
    }

    /// Coefficient of `ζ1^{e1/d1} ζ2^{e2/d2}`.
    pub fn coefficient(&self, e: [i64; 2]) -> QExpansion {
        self.terms.get(&e).cloned().unwrap_or_else(|| QExpansion::zero(self.order))
    }

    pub fn constant_term(&self) -> QExpansion {
        self.coefficient([0, 0])
    }

    /// Same block on the finer lattice `(1/zd1)ℤ × (1/zd2)ℤ`.
    pub fn rescaled(&self, zd: [i64; 2]) -> Result<Self> {
        if zd[0] % self.zdenoms[0] != 0 || zd[1] % self.zdenoms[1] != 0 {
            return Err(Error::IncompatibleLattices(format!(
                "cannot refine {:?} to {:?}",
                self.zdenoms, zd
            )));
        }
        let f = [zd[0] / self.zdenoms[0], zd[1] / self.zdenoms[1]];
        let terms = self.terms.iter().map(|(e, c)| ([e[0] * f[0], e[1] * f[1]], c.clone())).collect();
        Ok(LaurentBlock { zdenoms: zd, terms, order: self.order, window: self.window })
    }

    /// Checks the window certificate against every stored term.
    pub fn certificate_holds(&self) -> bool {
        self.terms
            .iter()
            .all(|(e, c)| c.terms().all(|(x, _)| self.window.contains(self.zexp(*e), x)))
    }

    pub fn mul(&self, other: &LaurentBlock) -> Result<LaurentBlock> {
        self.mul_pruned(other, None)
    }

    /// Product, dropping every term that a remaining factor with window `rest` cannot bring to
    /// ζ-exponent zero below the truncation order.
    fn mul_pruned(&self, other: &LaurentBlock, rest: Option<&ZWindow>) -> Result<LaurentBlock> {
        if self.zdenoms != other.zdenoms {
            return Err(Error::IncompatibleLattices(format!(
                "ζ-lattices {:?} and {:?} differ",
                self.zdenoms, other.zdenoms
            )));
        }
        let order = self.order.min(other.order);
        let mut out = LaurentBlock::new(self.zdenoms, order, self.window.compose(&other.window));
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = [ea[0] + eb[0], ea[1] + eb[1]];
                let limit = match rest {
                    Some(w) => match w.reach(out.zexp(e), order) {
                        Some(x) => x,
                        None => continue,
                    },
                    None => order,
                };
                if ca.lead_exponent() + cb.lead_exponent() >= limit {
                    continue;
                }
                let mut p = (ca * cb).truncate(order);
                if limit < order {
                    // keep the truncation order but discard terms that cannot matter
                    let kept: Vec<_> = p.terms().filter(|(x, _)| *x < limit).map(|(x, c)| (x, c.clone())).collect();
                    p = QExpansion::from_terms(kept, p.order());
                }
                out.insert(e, p);
            }
        }
        Ok(out)
    }
}

/// `1/(q;q)_m` for `m = 0..=mmax` in the base `q^step`.
fn inverse_q_factorials(step: Exp, mmax: i64, order: Exp) -> Vec<QExpansion> {
    let mut out = vec![QExpansion::one(order)];
    for m in 1..=mmax {
        let g = step * m;
        let geo = QExpansion::from_terms((0..).map(|j| g * j).take_while(|x| *x < order).map(|x| (x, int(1))), order);
        let next = out.last().unwrap() * &geo;
        out.push(next);
    }
    out
}

/// `1/(ζ^e q^b; q)_∞ = Σ_m ζ^{me} q^{bm}/(q;q)_m` to q-order `order`.
pub fn inv_pochhammer(e: [i64; 2], b: Exp, order: Exp) -> Result<LaurentBlock> {
    inv_pochhammer_step(e, b, Exp::one(), order)
}

/// `1/(ζ^e q^b; q^step)_∞`.
pub fn inv_pochhammer_step(e: [i64; 2], b: Exp, step: Exp, order: Exp) -> Result<LaurentBlock> {
    if b <= Exp::zero() || step <= Exp::zero() {
        return Err(Error::NonpositiveOffset);
    }
    let mmax = ((order / b).ceil().to_integer()).max(0);
    let facts = inverse_q_factorials(step, mmax, order);
    let window = ZWindow {
        slope: [Exp::from_integer(e[0].abs()) / b, Exp::from_integer(e[1].abs()) / b],
        offset: [Exp::zero(); 2],
        qmin: Exp::zero(),
    };
    let mut out = LaurentBlock::new([1, 1], order, window);
    for (m, f) in facts.iter().enumerate() {
        let m = m as i64;
        if b * m >= order {
            break;
        }
        out.insert([m * e[0], m * e[1]], f.shift(b * m).truncate(order));
    }
    Ok(out)
}

/// `(ζ^e q^b; q^step)_∞ = Σ_m (−1)^m q^{step·m(m−1)/2} ζ^{me} q^{bm}/(q^step;q^step)_m`, for `b ≥ 0`.
pub fn pochhammer_step(e: [i64; 2], b: Exp, step: Exp, order: Exp) -> Result<LaurentBlock> {
    if b < Exp::zero() || step <= Exp::zero() {
        return Err(Error::NonpositiveOffset);
    }
    let mut mmax = 0i64;
    while step * (mmax + 1) * mmax / 2 + b * (mmax + 1) < order {
        mmax += 1;
    }
    let facts = inverse_q_factorials(step, mmax, order);
    // x ≥ step·m(m−1)/2 ≥ step·(m−1), so |m e| ≤ |e| (x/step + 1)
    let window = ZWindow {
        slope: [Exp::from_integer(e[0].abs()) / step, Exp::from_integer(e[1].abs()) / step],
        offset: [Exp::from_integer(e[0].abs()), Exp::from_integer(e[1].abs())],
        qmin: Exp::zero(),
    };
    let mut out = LaurentBlock::new([1, 1], order, window);
    for (m, f) in facts.iter().enumerate() {
        let m = m as i64;
        let x = step * m * (m - 1) / 2 + b * m;
        if x >= order {
            continue;
        }
        let c = f.shift(x).truncate(order);
        out.insert([m * e[0], m * e[1]], if m % 2 == 1 { -c } else { c });
    }
    Ok(out)
}

/// Suffix windows: `rest[j]` bounds the product of `factors[j..]`.
fn suffix_windows(factors: &[LaurentBlock]) -> Vec<ZWindow> {
    let mut rest = vec![ZWindow::point(); factors.len() + 1];
    for j in (0..factors.len()).rev() {
        rest[j] = factors[j].window.compose(&rest[j + 1]);
    }
    rest
}

/// Constant term in ζ of the product of `factors`, exact to q-order `order`.
pub fn product_ct(factors: &[LaurentBlock], order: Exp) -> Result<QExpansion> {
    product_ct_with(factors, order, true)
}

/// As [`product_ct`]; `prune = false` multiplies out every term first.
pub fn product_ct_with(factors: &[LaurentBlock], order: Exp, prune: bool) -> Result<QExpansion> {
    let Some(first) = factors.first() else {
        return Ok(QExpansion::one(order));
    };
    if let Some(f) = factors.iter().find(|f| f.zdenoms != first.zdenoms) {
        return Err(Error::IncompatibleLattices(format!(
            "ζ-lattices {:?} and {:?} differ",
            first.zdenoms, f.zdenoms
        )));
    }
    let rest = suffix_windows(factors);
    let mut acc = LaurentBlock::scalar(QExpansion::one(order)).rescaled(first.zdenoms)?;
    for (j, f) in factors.iter().enumerate() {
        acc = acc.mul_pruned(f, if prune { Some(&rest[j + 1]) } else { None })?;
    }
    fit(acc.constant_term(), order)
}

/// Product of all the blocks (no pruning).
pub fn product(factors: &[LaurentBlock]) -> Result<LaurentBlock> {
    let mut it = factors.iter();
    let Some(first) = it.next() else {
        return Err(Error::MalformedParams("empty product".into()));
    };
    let mut acc = first.clone();
    for f in it {
        acc = acc.mul(f)?;
    }
    Ok(acc)
}

pub const A2_ROOTS: [[i64; 2]; 6] = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]];
pub const B2_ROOTS: [[i64; 2]; 8] = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [2, 1], [-2, -1]];

/// Reciprocal Pochhammer factors `1/(ζ^α q; q)_∞` over the given roots.
pub fn root_factors(roots: &[[i64; 2]], order: Exp) -> Result<Vec<LaurentBlock>> {
    roots.iter().map(|r| inv_pochhammer(*r, Exp::one(), order)).collect()
}

/// Constant term of G (A2) by brute-force Laurent expansion.
pub fn a2_ct_oracle(order: Exp) -> Result<QExpansion> {
    product_ct(&root_factors(&A2_ROOTS, order)?, order)
}

/// Constant term of F (B2) by brute-force Laurent expansion.
pub fn b2_ct_oracle(order: Exp) -> Result<QExpansion> {
    product_ct(&root_factors(&B2_ROOTS, order)?, order)
}

/// Sum over `n ∈ ℕ0²` (or `ℤ²` when `full`) of `weight(n) q^{quad(n) + lin·n + konst}`, where
/// `quad(n) = a n1² + b n1n2 + c n2²` is positive definite.
pub fn quadratic_sum<F>(quad: [Exp; 3], lin: [Exp; 2], konst: Exp, full: bool, order: Exp, weight: F) -> QExpansion
where
    F: Fn(i64, i64) -> BigRational,
{
    let f = |e: Exp| *e.numer() as f64 / *e.denom() as f64;
    let (a, b, c) = (f(quad[0]), f(quad[1]) / 2.0, f(quad[2]));
    let tr = a + c;
    let det = a * c - b * b;
    assert!(a > 0.0 && det > 0.0, "quadratic part must be positive definite");
    let lam = 2.0 * det / (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
    let l = f(lin[0]).hypot(f(lin[1]));
    let budget = (f(order) - f(konst)).max(0.0);
    let r = (l + (l * l + 4.0 * lam * budget).sqrt()) / (2.0 * lam) * (1.0 + 1e-9) + 1.0;
    let r = r.ceil() as i64;
    let lo = if full { -r } else { 0 };
    let mut terms = Vec::new();
    for n1 in lo..=r {
        for n2 in lo..=r {
            let x = quad[0] * n1 * n1 + quad[1] * n1 * n2 + quad[2] * n2 * n2 + lin[0] * n1 + lin[1] * n2 + konst;
            if x < order {
                let w = weight(n1, n2);
                if !w.is_zero() {
                    terms.push((x, w));
                }
            }
        }
    }
    QExpansion::from_terms(terms, order)
}

fn alt(n: i64) -> i64 {
    if n.is_odd() {
        -1
    } else {
        1
    }
}

/// `D(r) = D_1(r) + D_2(r)`, the r-th Fourier coefficient of `iη⁹/(ϑ(z1)ϑ(z2)ϑ(z1+z2))`.
pub fn coeff_d(r: [i64; 2], order: Exp) -> QExpansion {
    let e = Exp::from_integer;
    let (r1, r2) = (r[0], r[1]);
    let d1 = quadratic_sum([e(1), e(1), e(1)], [e(-r2), e(-r1)], Exp::zero(), false, order, |n1, n2| {
        int(n1 + 2 * n2 - r1)
    });
    let d2 = quadratic_sum([e(1), e(-1), e(1)], [e(-r2), e(r2 - r1)], Exp::zero(), false, order, |n1, n2| {
        int(n1 - 2 * n2 + r1 - r2)
    });
    &d1 + &d2
}

/// `D(r)` from the Laurent expansion of G: `η⁶ q^{−1/4} CT(ζ^{r+(1,1)} G / ∏_{α>0}(1 − ζ^α))`.
pub fn coeff_d_oracle(r: [i64; 2], order: Exp) -> Result<QExpansion> {
    let g = product(&root_factors(&A2_ROOTS, order)?)?;
    let s = [r[0] + 1, r[1] + 1];
    let mut ct = QExpansion::zero(order);
    for (e, c) in g.terms() {
        // number of (a, b, c) ≥ 0 with (a + c, b + c) = −e − s
        let (u, v) = (-e[0] - s[0], -e[1] - s[1]);
        if u >= 0 && v >= 0 {
            ct = &ct + &c.scale_int(u.min(v) + 1);
        }
    }
    let pre = eta_series(order + 1).pow(6).shift(exp(-1, 4));
    fit(&pre * &ct, order)
}

pub const S_A: [([i64; 2], i64); 6] =
    [([1, 0], 1), ([0, 1], 1), ([-1, -1], 1), ([-1, 0], -1), ([0, -1], -1), ([1, 1], -1)];

/// `(r, ε_B(r))` with `r2` given as twice its value.
pub const S_B: [((i64, i64), i64); 8] = [
    ((-2, -3), 1),
    ((-1, 1), 1),
    ((1, -1), 1),
    ((2, 3), 1),
    ((-1, -3), -1),
    ((-2, -1), -1),
    ((1, 3), -1),
    ((2, 1), -1),
];

pub fn s_b() -> impl Iterator<Item = ((i64, Exp), i64)> {
    S_B.iter().map(|((r1, r2), e)| ((*r1, exp(*r2, 2)), *e))
}

/// The ten pieces of `C(r)`, named as `C1..C6`, `C7(l1,l2)`, `C8(l1,l2)`.
#[derive(Clone, Debug)]
pub struct CParts {
    pub plain: [QExpansion; 6],
    pub torsion: Vec<((u8, u8), QExpansion, QExpansion)>,
}

impl CParts {
    pub fn total(&self) -> QExpansion {
        let mut t = self.plain[0].clone();
        for p in &self.plain[1..] {
            t = &t + p;
        }
        for (_, c7, c8) in &self.torsion {
            t = &(&t + c7) + c8;
        }
        t
    }
}

/// The pieces of `C(r)` for `r1 ∈ ℤ`, `r2 ∈ ℤ + 1/2`, each exact to `order`.
pub fn coeff_c_parts(r1: i64, r2: Exp, order: Exp) -> Result<CParts> {
    if !(r2 - exp(1, 2)).is_integer() {
        return Err(Error::MalformedParams(format!("r2 = {} is not a half-integer", format_exp(r2))));
    }
    let w = order + 6;
    let e = Exp::from_integer;
    let h = exp(3, 2);
    let rf = e(r1);
    let q1 = [h, e(3), e(3)];
    let q2 = [h, e(-3), e(3)];
    let q3 = [h, Exp::zero(), h];
    let l1 = [-r2, -rf];
    let l2 = [-r2, r2 * 2 - rf];
    let l3 = [-r2, r2 - rf];
    let sq = |x: Exp| exp_to_big(x * x);
    let c1 = quadratic_sum(q1, l1, Exp::zero(), false, w, |a, b| {
        sq(e(6 * b + 3 * a) - rf) * rat(alt(a), 4)
    });
    let c2 = quadratic_sum(q2, l2, Exp::zero(), false, w, |a, b| {
        sq(e(6 * b - 3 * a) + r2 * 2 - rf) * rat(alt(a), 4)
    });
    let c3 = quadratic_sum(q3, l3, Exp::zero(), false, w, |a, b| sq(e(3 * b) + r2 - rf) * rat(-alt(a + b), 2));
    let e2 = e2_series(w + 3);
    let t4 = quadratic_sum(q1, l1, Exp::zero(), false, w, |a, _| int(alt(a)));
    let t5 = quadratic_sum(q2, l2, Exp::zero(), false, w, |a, _| int(alt(a)));
    let t6 = quadratic_sum(q3, l3, Exp::zero(), false, w, |a, b| int(alt(a + b)));
    let c4 = (&e2 * &t4).scale(&rat(-1, 8));
    let c5 = (&e2 * &t5).scale(&rat(-1, 8));
    let c6 = (&e2 * &t6).scale(&rat(1, 8));

    let mut torsion = Vec::new();
    for (a1, a2) in [(0u8, 1u8), (1, 0), (1, 1)] {
        let (l1i, l2i) = (a1 as i64, a2 as i64);
        let pre = eta6_over_torsion_sq(a1, a2, w)?;
        let par = |a: i64| int(alt((l2i + 1) * a));
        let s7 = quadratic_sum(q1, [exp(3 * l1i, 2) - r2, e(3 * l1i - r1)], Exp::zero(), false, w, |a, _| par(a));
        let s8 = quadratic_sum(
            q2,
            [-(exp(3 * l1i, 2) + r2), e(3 * l1i) + r2 * 2 - rf],
            Exp::zero(),
            false,
            w,
            |a, _| par(a),
        );
        let base = exp(l1i * (l1i - r1), 2);
        let c7 = (&pre * &s7).shift(base).scale(&rat(-alt(l1i + (r1 + 1) * l2i), 2));
        let c8 = (&pre * &s8).shift(base + r2 * l1i).scale(&rat(-alt(l1i + r1 * l2i), 2));
        torsion.push(((a1, a2), fit(c7, order)?, fit(c8, order)?));
    }
    Ok(CParts {
        plain: [fit(c1, order)?, fit(c2, order)?, fit(c3, order)?, fit(c4, order)?, fit(c5, order)?, fit(c6, order)?],
        torsion,
    })
}

/// `C(r)`, the r-th Fourier coefficient entering the B2 constant term.
pub fn coeff_c(r1: i64, r2: Exp, order: Exp) -> Result<QExpansion> {
    Ok(coeff_c_parts(r1, r2, order)?.total())
}

fn inv_eta_pow(k: u32, order: Exp) -> Result<QExpansion> {
    eta_series(order + 1).pow(k).invert()
}

/// `(q^{1/4}/η⁶)(G_0 + 9 q^{−1/3} Ψ)`, with an optional mutation that drops Ψ.
pub fn a2_ct_formula(order: Exp, with_psi: bool) -> Result<QExpansion> {
    let w = order + 1;
    let ie6 = inv_eta_pow(6, w)?;
    let mut s = g0(w)?;
    if with_psi {
        s = &s + &psi(w + 1)?.shift(exp(-1, 3)).scale_int(9);
    }
    fit((&ie6 * &s).shift(exp(1, 4)), order)
}

/// `(q^{1/4}/η⁶) Σ_{S_A} ε_A(r) D(r)`.
pub fn a2_ct_from_d(order: Exp) -> Result<QExpansion> {
    let w = order + 1;
    let mut s = QExpansion::zero(w);
    for (r, eps) in S_A {
        s = &s + &coeff_d(r, w).scale_int(eps);
    }
    fit((&inv_eta_pow(6, w)? * &s).shift(exp(1, 4)), order)
}

/// The B2 closed form in terms of F_0, Φ and Λ_a.
pub fn b2_ct_formula(order: Exp) -> Result<QExpansion> {
    let w = order + 2;
    let ie8 = inv_eta_pow(8, w)?;
    let ie2 = inv_eta_pow(2, w)?;
    let mut total = (&ie8 * &f0(w)?).shift(exp(1, 3));
    total = &total + &(&ie8 * &phi(w)?).shift(exp(-1, 12)).scale(&rat(9, 2));
    let mut lam = QExpansion::zero(w);
    for ((l1, l2), shift, sign) in [((0u8, 1u8), Exp::zero(), 1), ((1, 0), exp(-1, 4), 1), ((1, 1), exp(-1, 4), -1)] {
        let th = theta_torsion_series(l1, l2, w + 1)?.squared().invert()?;
        let term = (&lambda([l1 as i64, l2 as i64], w + 1)? * &th).shift(shift).scale_int(sign);
        lam = &lam + &term;
    }
    total = &total + &(&ie2 * &lam).shift(exp(-1, 12));
    fit(total, order)
}

/// `(q^{1/3}/η⁸) Σ_{S_B} ε_B(r) C(r)`.
pub fn b2_ct_from_c(order: Exp) -> Result<QExpansion> {
    let w = order + 1;
    let mut s = QExpansion::zero(w);
    for ((r1, r2), eps) in s_b() {
        s = &s + &coeff_c(r1, r2, w)?.scale_int(eps);
    }
    fit((&inv_eta_pow(8, w)? * &s).shift(exp(1, 3)), order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Which {
    A2,
    B2,
    #[serde(rename = "JTP")]
    Jtp,
    #[serde(rename = "eta3")]
    Eta3,
    #[serde(rename = "k1theta")]
    K1Theta,
}

impl std::str::FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A2" => Ok(Which::A2),
            "B2" => Ok(Which::B2),
            "JTP" => Ok(Which::Jtp),
            "eta3" => Ok(Which::Eta3),
            "k1theta" => Ok(Which::K1Theta),
            _ => Err(Error::MalformedParams(format!("unknown identity `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub which: Which,
    pub order: String,
    pub status: &'static str,
    pub first_mismatch_exponent: Option<String>,
    pub elapsed: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.status == "pass"
    }
}

/// Computes both sides of the chosen identity to q-order `order` and compares them exactly.
pub fn verify_decomposition(which: Which, order: Exp) -> Result<VerifyReport> {
    let start = Instant::now();
    let mismatch = match which {
        Which::A2 => a2_ct_oracle(order)?.first_difference(&a2_ct_formula(order, true)?),
        Which::B2 => b2_ct_oracle(order)?.first_difference(&b2_ct_formula(order)?),
        Which::Jtp => {
            let (l, r) = jacobi_triple_product(order)?;
            let keys: std::collections::BTreeSet<_> = l.terms().chain(r.terms()).map(|(e, _)| e).collect();
            keys.into_iter().filter_map(|e| l.coefficient(e).first_difference(&r.coefficient(e))).min()
        }
        Which::Eta3 => eta_series(order).pow(3).truncate(order).first_difference(&eta3_series(order)),
        Which::K1Theta => crate::invariants::k1_theta_identity(order)?,
    };
    Ok(VerifyReport {
        which,
        order: format_exp(order),
        status: if mismatch.is_none() { "pass" } else { "fail" },
        first_mismatch_exponent: mismatch.map(format_exp),
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Both sides of `Σ_{n∈ℤ+1/2} (−1)^{n−1/2} q^{n²/2} ζ^n = −q^{1/8} ζ^{−1/2} (q;q)(ζ;q)(ζ^{−1}q;q)`,
/// on the lattice ζ^{1/2}ℤ.
pub fn jacobi_triple_product(order: Exp) -> Result<(LaurentBlock, LaurentBlock)> {
    let zd = [2, 1];
    let mut lhs = LaurentBlock::new(zd, order, ZWindow::point());
    let bound = (2.0 * (*order.numer() as f64 / *order.denom() as f64).max(0.0)).sqrt() as i64 + 2;
    for j in -bound..=bound {
        let n = exp(2 * j + 1, 2);
        let x = n * n / 2;
        if x < order {
            lhs.insert([2 * j + 1, 0], QExpansion::monomial(x, int(alt(j)), order));
        }
    }
    let qq = pochhammer_step([0, 0], Exp::one(), Exp::one(), order)?;
    let a = pochhammer_step([1, 0], Exp::zero(), Exp::one(), order)?;
    let b = pochhammer_step([-1, 0], Exp::one(), Exp::one(), order)?;
    let pre = LaurentBlock::monomial(zd, [-1, 0], QExpansion::monomial(exp(1, 8), int(-1), order));
    let rhs = product(&[pre, qq.rescaled(zd)?, a.rescaled(zd)?, b.rescaled(zd)?])?;
    Ok((lhs, rhs))
}

/// `ϱ_{m,n} = (sgn(m+1/2) + sgn(n+1/2))/2`, returned doubled.
pub fn rho2(m: i64, n: i64) -> i64 {
    let s = |x: i64| if x >= 0 { 1 } else { -1 };
    s(m) + s(n)
}

/// The r-th Fourier coefficient of `η³ η((k+1)τ/2)²/η((k+1)τ) · 𝕋_k` from its ϱ-weighted double sum.
pub fn tk_coefficient(k: u32, r: [i64; 2], order: Exp) -> Result<QExpansion> {
    if k == 0 {
        return Err(Error::MalformedParams("k must be at least 1".into()));
    }
    let kk = k as i64 + 1;
    let (r1, r2) = (r[0], r[1]);
    let pre = exp(kk * (2 * r2 + 1), 4);
    let e = Exp::from_integer;
    let s = quadratic_sum(
        [exp(1, 2), e(1), e(kk)],
        [exp(1, 2) + r1, e(kk * (r2 + 1))],
        pre,
        true,
        order,
        |n1, n2| rat(alt(n1) * rho2(n1, n2 + r1) * rho2(n2 + r2, n2), 4),
    );
    Ok(s)
}

/// The same sum with the outer loop over `n2`, restricted to the interval where some `n1`
/// fits below `order`, and the inner `n1` range solved from the quadratic inequality.
pub fn tk_coefficient_reordered(k: u32, r: [i64; 2], order: Exp) -> QExpansion {
    let kk = k as i64 + 1;
    let (r1, r2) = (r[0], r[1]);
    let f = |e: Exp| *e.numer() as f64 / *e.denom() as f64;
    let pre = exp(kk * (2 * r2 + 1), 4);
    let (of, pf) = (f(order), f(pre));
    // exponent = (n1 + c1)²/2 − c1²/2 + c0 with c1 = n2 + r1 + 1/2, c0 = kk n2² + kk(r2+1) n2 + pre;
    // some n1 fits iff disc(n2) = 2(of − c0) + c1² ≥ 0, a concave quadratic in n2
    let (a, b, c) = (
        1.0 - 2.0 * kk as f64,
        2.0 * (r1 as f64 + 0.5) - 2.0 * (kk * (r2 + 1)) as f64,
        2.0 * (of - pf) + (r1 as f64 + 0.5).powi(2),
    );
    let d = (b * b - 4.0 * a * c).max(0.0).sqrt();
    let (lo, hi) = ((-b + d) / (2.0 * a), (-b - d) / (2.0 * a));
    let mut terms = Vec::new();
    for n2 in (lo.floor() as i64 - 1)..=(hi.ceil() as i64 + 1) {
        let c1 = n2 as f64 + r1 as f64 + 0.5;
        let c0 = (kk * n2 * n2 + kk * (r2 + 1) * n2) as f64 + pf;
        let disc = 2.0 * (of - c0) + c1 * c1;
        if disc < 0.0 {
            continue;
        }
        let rt = disc.sqrt();
        for n1 in ((-c1 - rt).floor() as i64 - 1)..=((-c1 + rt).ceil() as i64 + 1) {
            let w = alt(n1) * rho2(n1, n2 + r1) * rho2(n2 + r2, n2);
            if w == 0 {
                continue;
            }
            let x = exp(n1 * (n1 + 1), 2) + Exp::from_integer(n1 * (n2 + r1) + kk * n2 * n2 + kk * (r2 + 1) * n2) + pre;
            if x < order {
                terms.push((x, rat(w, 4)));
            }
        }
    }
    QExpansion::from_terms(terms, order)
}

/// `𝔽_k` from the product form of `𝕋_k`:
/// `q^{(k+1)/4} (q;q)² (Q;Q)² CT[∏_{j=1}^{k} 1/((ζ1 q^j;Q)(ζ1^{−1} q^j;Q)) ∏_{x∈{ζ2,ζ1ζ2}} 1/((xP;P²)(x^{−1}P;P²))]`
/// with `Q = q^{k+1}`, `P = q^{(k+1)/2}`.
pub fn fk_product_oracle(k: u32, order: Exp) -> Result<QExpansion> {
    if k == 0 {
        return Err(Error::MalformedParams("k must be at least 1".into()));
    }
    let kk = Exp::from_integer(k as i64 + 1);
    let p = kk / 2;
    let mut factors = Vec::new();
    for j in 1..=k as i64 {
        let b = Exp::from_integer(j);
        factors.push(inv_pochhammer_step([1, 0], b, kk, order)?);
        factors.push(inv_pochhammer_step([-1, 0], b, kk, order)?);
    }
    for e in [[0, 1], [1, 1]] {
        factors.push(inv_pochhammer_step(e, p, kk, order)?);
        factors.push(inv_pochhammer_step([-e[0], -e[1]], p, kk, order)?);
    }
    let ct = product_ct(&factors, order)?;
    let q = eta_series(order + 1).shift(exp(-1, 24));
    let big = q.substitute_power(kk).truncate(order);
    let pre = (&q.pow(2) * &big.pow(2)).shift(kk / 4);
    fit(&pre * &ct, order)
}

/// Numerical value helper: exact signed integer check for `2ϱ`.
pub fn rho_values() -> Vec<i64> {
    let mut v: Vec<i64> = (-3..3).flat_map(|m| (-3..3).map(move |n| rho2(m, n))).collect();
    v.sort();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::fk;
    use proptest::prelude::*;

    fn o(n: i64) -> Exp {
        Exp::from_integer(n)
    }

    fn ints(s: &QExpansion, n: i64) -> Vec<BigRational> {
        s.integer_coeffs(n)
    }

    #[test]
    fn inv_pochhammer_euler() {
        let b = inv_pochhammer([1, 0], o(1), o(3)).unwrap();
        assert_eq!(b.coefficient([0, 0]), QExpansion::one(o(3)));
        assert_eq!(b.coefficient([1, 0]), QExpansion::from_terms(vec![(o(1), int(1)), (o(2), int(1))], o(3)));
        assert_eq!(b.coefficient([2, 0]), QExpansion::monomial(o(2), int(1), o(3)));
        assert!(b.certificate_holds());
        let p = inv_pochhammer([0, 0], o(1), o(8)).unwrap().constant_term();
        let parts: Vec<i64> = vec![1, 1, 2, 3, 5, 7, 11, 15];
        assert_eq!(ints(&p, 8), parts.into_iter().map(int).collect::<Vec<_>>());
        assert!(matches!(inv_pochhammer([1, 0], o(0), o(3)), Err(Error::NonpositiveOffset)));
    }

    #[test]
    fn single_factor_ct() {
        let b = inv_pochhammer([1, 0], o(1), o(6)).unwrap();
        assert_eq!(product_ct(&[b], o(6)).unwrap(), QExpansion::one(o(6)));
    }

    #[test]
    fn a2_brute_force_prefix() {
        let ct = a2_ct_oracle(o(10)).unwrap();
        let want = [1, 0, 3, 8, 21, 48, 116, 252, 555, 1156];
        assert_eq!(ints(&ct, 10), want.iter().map(|c| int(*c)).collect::<Vec<_>>());
        assert!(ct.has_integral_exponents());
    }

    #[test]
    fn pruning_does_not_change_ct() {
        let f = root_factors(&B2_ROOTS, o(7)).unwrap();
        assert_eq!(product_ct_with(&f, o(7), true).unwrap(), product_ct_with(&f, o(7), false).unwrap());
        let g = product(&root_factors(&A2_ROOTS, o(6)).unwrap()).unwrap();
        assert!(g.certificate_holds());
    }

    #[test]
    fn a2_decomposition_and_d_route() {
        let n = o(10);
        let brute = a2_ct_oracle(n).unwrap();
        assert_eq!(a2_ct_formula(n, true).unwrap(), brute);
        assert_eq!(a2_ct_from_d(n).unwrap(), brute);
    }

    #[test]
    fn a2_mutation_detected() {
        let a = a2_ct_oracle(o(8)).unwrap();
        let b = a2_ct_formula(o(8), false).unwrap();
        let x = a.first_difference(&b).unwrap();
        // Ψ starts at q^{1/3}, so 9q^{-1/3}Ψ has a constant term
        assert_eq!(x, o(0));
    }

    #[test]
    fn d00_is_sum_n_qn2() {
        let d = coeff_d([0, 0], o(17));
        let want = QExpansion::from_terms((1..=4).map(|n| (o(n * n), int(n))), o(17));
        assert_eq!(d, want);
    }

    #[test]
    fn d_matches_laurent_oracle() {
        for r in [[0, 0], [1, 0], [0, 1], [-1, 2], [2, -2], [1, 1]] {
            assert_eq!(coeff_d(r, o(7)), coeff_d_oracle(r, o(7)).unwrap(), "r = {r:?}");
        }
    }

    #[test]
    fn d_symmetric() {
        for r in [[1, 0], [2, -1], [-2, 1]] {
            assert_eq!(coeff_d(r, o(9)), coeff_d([r[1], r[0]], o(9)));
        }
    }

    #[test]
    fn b2_three_ways() {
        let n = o(8);
        let brute = b2_ct_oracle(n).unwrap();
        let want = [1, 0, 4, 12, 38, 100, 276, 688];
        assert_eq!(ints(&brute, 8), want.iter().map(|c| int(*c)).collect::<Vec<_>>());
        assert_eq!(b2_ct_formula(n).unwrap(), brute);
        assert_eq!(b2_ct_from_c(n).unwrap(), brute);
    }

    #[test]
    fn c_part_cancellations() {
        let n = o(8);
        let mut c4 = QExpansion::zero(n);
        let mut c5 = QExpansion::zero(n);
        let mut c6 = QExpansion::zero(n);
        for ((r1, r2), eps) in s_b() {
            let p = coeff_c_parts(r1, r2, n).unwrap();
            c4 = &c4 + &p.plain[3].scale_int(eps);
            c5 = &c5 + &p.plain[4].scale_int(eps);
            c6 = &c6 + &p.plain[5].scale_int(eps);
        }
        assert!(c6.is_zero());
        assert_eq!(c4, c5);
    }

    #[test]
    fn jacobi_triple_product_identity() {
        let (l, r) = jacobi_triple_product(o(8)).unwrap();
        assert_eq!(l.len(), r.len());
        for (e, c) in l.terms() {
            assert_eq!(c, &r.coefficient(e), "ζ^{}/2", e[0]);
        }
        assert!(verify_decomposition(Which::Jtp, o(8)).unwrap().passed());
    }

    #[test]
    fn tk_matches_fk_and_product() {
        for k in 1..=2u32 {
            let n = o(8);
            let t = tk_coefficient(k, [0, 0], n).unwrap();
            assert_eq!(t, fk(k, n).unwrap(), "k = {k}");
            assert_eq!(t, fk_product_oracle(k, n).unwrap(), "k = {k}");
            assert_eq!(t, tk_coefficient_reordered(k, [0, 0], n));
        }
    }

    #[test]
    fn rho_table() {
        assert_eq!(rho2(-1, 0), 0);
        assert_eq!(rho2(0, 0), 2);
        assert_eq!(rho2(-1, -1), -2);
        assert_eq!(rho_values(), vec![-2, 0, 2]);
    }

    #[test]
    fn incompatible_lattices() {
        let a = LaurentBlock::scalar(QExpansion::one(o(2)));
        let b = a.rescaled([2, 1]).unwrap();
        assert!(matches!(a.mul(&b), Err(Error::IncompatibleLattices(_))));
        assert!(matches!(b.rescaled([3, 1]), Err(Error::IncompatibleLattices(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn d_oracle_agreement(r1 in -2i64..=2, r2 in -2i64..=2) {
            prop_assert_eq!(coeff_d([r1, r2], o(6)), coeff_d_oracle([r1, r2], o(6)).unwrap());
        }

        #[test]
        fn tk_loop_orders_agree(k in 1u32..4, r1 in -2i64..=2, r2 in -2i64..=2) {
            prop_assert_eq!(tk_coefficient(k, [r1, r2], o(7)).unwrap(), tk_coefficient_reordered(k, [r1, r2], o(7)));
        }

        #[test]
        fn wider_window_is_stable(a in 0usize..6, b in 0usize..6, n in 3i64..7) {
            let f = root_factors(&[A2_ROOTS[a], A2_ROOTS[b], [1, 1], [-1, 0]], o(n)).unwrap();
            prop_assert_eq!(product_ct_with(&f, o(n), true).unwrap(), product_ct_with(&f, o(n), false).unwrap());
        }
    }
    proptest! {
        #[test]
        fn rho_range(m in -50i64..50, n in -50i64..50) {
            let r = rho2(m, n);
            prop_assert!([-2, -1, 0, 1, 2].contains(&r));
            prop_assert_eq!(r == 2, m >= 0 && n >= 0);
        }
    }
}
