//! Numerical side: theta/eta values in the upper half-plane, iterated Eichler-type integrals
//! along hyperbolic geodesics, the completions Ψ̂ and Φ̂, and modular residuals.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariants::FsqeInput;
use crate::qseries::{to_f64, Exp, QExpansion};
use crate::special::{e2_series, eta3_series, eta_series, theta_unary_series, UnaryThetaSpec};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Principal square root, with the cut `(-∞, 0)` approached from above.
pub fn psqrt(z: C64) -> C64 {
    if z.im == 0.0 && z.re < 0.0 {
        C64::new(0.0, (-z.re).sqrt())
    } else {
        z.sqrt()
    }
}

fn e2pi(x: C64) -> C64 {
    (2.0 * PI * I * x).exp()
}

fn exp_f64(e: Exp) -> f64 {
    *e.numer() as f64 / *e.denom() as f64
}

// ---------------------------------------------------------------------------
// numeric series

/// `Σ c_j e^{2πi e_j w}` with floating exponents and coefficients.
#[derive(Clone, Debug, Default)]
pub struct NumericSeries {
    terms: Vec<(f64, f64)>,
}

/// Truncation order such that `e^{-2π·order·im}` is far below double precision.
fn order_for(im: f64) -> Result<Exp> {
    if !(im > 0.0) {
        return Err(Error::NonconvergentEvaluation(im));
    }
    let n = (48.0 / (2.0 * PI * im)).ceil() + 2.0;
    if n > 5.0e4 {
        return Err(Error::NonconvergentEvaluation(im));
    }
    Ok(Exp::from_integer(n as i64))
}

impl NumericSeries {
    /// The series `s(scale·w)`.
    pub fn from_expansion(s: &QExpansion, scale: f64) -> Self {
        NumericSeries { terms: s.terms().map(|(e, c)| (exp_f64(e) * scale, to_f64(c))).collect() }
    }

    pub fn monomial(e: f64, c: f64) -> Self {
        NumericSeries { terms: vec![(e, c)] }
    }

    pub fn eval(&self, w: C64) -> C64 {
        let z = 2.0 * PI * I * w;
        self.terms.iter().map(|&(e, c)| (z * e).exp() * c).sum()
    }

    /// Smallest exponent with a nonzero coefficient.
    pub fn lead(&self) -> Option<f64> {
        self.terms.iter().filter(|t| t.1 != 0.0).map(|t| t.0).reduce(f64::min)
    }

    fn unary(m: Exp, r: i64, k: u32, scale: f64, im_min: f64) -> Result<Self> {
        let spec = UnaryThetaSpec::new(m, r, k)?;
        let order = order_for(im_min * scale)?;
        Ok(Self::from_expansion(&theta_unary_series(spec, order), scale))
    }
}

/// Kinds accepted by [`theta_numeric`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaKind {
    Eta,
    Eta3,
    E2,
    Unary { m: Exp, r: i64, k: u32 },
    Torsion(u8, u8),
}

/// Value of the chosen series at `scale·w`.
pub fn theta_numeric(kind: ThetaKind, scale: Exp, w: C64) -> Result<C64> {
    let s = exp_f64(scale);
    let x = w * s;
    if !(scale > Exp::from_integer(0)) || !(x.im > 0.0) {
        return Err(Error::NonconvergentEvaluation(x.im));
    }
    let order = order_for(x.im)?;
    let series = match kind {
        ThetaKind::Eta => eta_series(order),
        ThetaKind::Eta3 => eta3_series(order),
        ThetaKind::E2 => e2_series(order + 4),
        ThetaKind::Unary { m, r, k } => theta_unary_series(UnaryThetaSpec::new(m, r, k)?, order),
        ThetaKind::Torsion(l1, l2) => {
            if l1 > 1 || l2 > 1 {
                return Err(Error::MalformedParams(format!("torsion point ({l1},{l2})")));
            }
            if l1 == 0 && l2 == 0 {
                return Err(Error::InvalidTorsionPoint);
            }
            return Ok(jtheta((x * l1 as f64 + l2 as f64) / 2.0, x));
        }
    };
    Ok(NumericSeries::from_expansion(&series, 1.0).eval(x))
}

/// `ϑ(z;τ) = Σ_{n∈ℤ+1/2} e^{πin} q^{n²/2} ζ^n`.
pub fn jtheta(z: C64, tau: C64) -> C64 {
    let j = ((2.0 * z.im.abs() / tau.im) + (50.0 / (PI * tau.im)).sqrt()).ceil() as i64 + 2;
    (-j..=j)
        .map(|k| {
            let n = k as f64 + 0.5;
            (PI * I * (n + tau * (n * n) + z * (2.0 * n))).exp()
        })
        .sum()
}

fn eta_value(tau: C64) -> Result<C64> {
    theta_numeric(ThetaKind::Eta, Exp::from_integer(1), tau)
}

fn e2_value(tau: C64) -> Result<C64> {
    theta_numeric(ThetaKind::E2, Exp::from_integer(1), tau)
}

// ---------------------------------------------------------------------------
// quadrature

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let p = if n == 1 { t } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (t * p - pm) / (t * t - 1.0);
                let dt = p / dp;
                t -= dt;
                if dt.abs() < 1e-16 {
                    break;
                }
            }
            if n == 1 {
                dp = 1.0;
            }
            x[i] = -t;
            x[n - 1 - i] = t;
            let wt = 2.0 / ((1.0 - t * t) * dp * dp);
            w[i] = wt;
            w[n - 1 - i] = wt;
        }
        GaussLegendre { x, w }
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (h, m) = ((b - a) / 2.0, (a + b) / 2.0);
        self.x.iter().zip(&self.w).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
    }
}

/// Quadrature settings for the iterated integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    /// Equal panels on `[0, 1]` in the substituted variable.
    pub panels: usize,
    /// Number of halvings of the first panel toward the start point.
    pub grading: usize,
    /// Height of the vertical tail above τ; chosen from the decay rate when `None`.
    pub tail_cutoff: Option<f64>,
    pub tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { nodes: 16, panels: 6, grading: 8, tail_cutoff: None, tolerance: 1e-9 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.panels == 0 || !(self.tolerance > 0.0) {
            return Err(Error::MalformedParams("nodes, panels and tolerance must be positive".into()));
        }
        if let Some(t) = self.tail_cutoff {
            if !(t > 0.0) {
                return Err(Error::MalformedParams("tail cutoff must be positive".into()));
            }
        }
        Ok(())
    }

    /// The configuration with nodes and panels doubled.
    pub fn refined(&self) -> Self {
        QuadratureConfig { nodes: 2 * self.nodes, panels: 2 * self.panels, ..*self }
    }

    /// Nodes and weights on `[0, b]`, panels graded geometrically toward 0.
    fn rule(&self, gl: &GaussLegendre, b: f64) -> Vec<(f64, f64)> {
        let mut cuts: Vec<f64> = (0..=self.panels).map(|k| b * k as f64 / self.panels as f64).collect();
        let first = cuts[1];
        for g in 1..=self.grading {
            cuts.insert(1, first / 2f64.powi(g as i32));
        }
        let mut out = Vec::with_capacity((cuts.len() - 1) * gl.x.len());
        for p in cuts.windows(2) {
            let (h, m) = ((p[1] - p[0]) / 2.0, (p[0] + p[1]) / 2.0);
            for (x, w) in gl.x.iter().zip(&gl.w) {
                out.push((m + h * x, w * h));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// paths

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Segment,
    Arc { center: f64, radius: f64, theta0: f64, delta: f64 },
}

/// Path from τ to `end`: the hyperbolic geodesic (circle with real center or vertical line),
/// or a straight segment when requested.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicPath {
    tau: C64,
    end: C64,
    to_cusp: bool,
    shape: Shape,
}

impl GeodesicPath {
    pub fn new(tau: C64, w: C64) -> Result<Self> {
        Self::check(tau, w)?;
        let dx = w.re - tau.re;
        let shape = if dx.abs() <= 1e-14 * (1.0 + tau.norm() + w.norm()) {
            Shape::Segment
        } else {
            let center = (w.norm_sqr() - tau.norm_sqr()) / (2.0 * dx);
            let radius = (tau - center).norm();
            let theta0 = (tau - center).arg();
            let delta = (w - center).arg() - theta0;
            Shape::Arc { center, radius, theta0, delta }
        };
        Ok(GeodesicPath { tau, end: w, to_cusp: false, shape })
    }

    /// The straight segment from τ to w.
    pub fn straight(tau: C64, w: C64) -> Result<Self> {
        Self::check(tau, w)?;
        Ok(GeodesicPath { tau, end: w, to_cusp: false, shape: Shape::Segment })
    }

    /// The vertical ray toward τ+i∞, truncated at height `height` above τ.
    pub fn to_cusp(tau: C64, height: f64) -> Result<Self> {
        Self::check(tau, tau + I * height)?;
        Ok(GeodesicPath { tau, end: tau + I * height, to_cusp: true, shape: Shape::Segment })
    }

    fn check(tau: C64, w: C64) -> Result<()> {
        if !(tau.im > 0.0) {
            return Err(Error::NonconvergentEvaluation(tau.im));
        }
        if !(w.im > 0.0) {
            return Err(Error::NonconvergentEvaluation(w.im));
        }
        if w == tau {
            return Err(Error::MalformedParams("path endpoints coincide".into()));
        }
        Ok(())
    }

    pub fn start(&self) -> C64 {
        self.tau
    }

    pub fn end(&self) -> C64 {
        self.end
    }

    pub fn is_vertical_ray(&self) -> bool {
        self.to_cusp
    }

    /// `(center, radius)` for arcs.
    pub fn circle(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::Arc { center, radius, .. } => Some((center, radius)),
            Shape::Segment => None,
        }
    }

    /// The point at parameter `t ∈ [0, 1]`.
    pub fn point(&self, t: f64) -> C64 {
        match self.shape {
            Shape::Segment => self.tau + (self.end - self.tau) * t,
            Shape::Arc { center, radius, theta0, delta } => center + C64::from_polar(radius, theta0 + t * delta),
        }
    }

    fn deriv(&self, t: f64) -> C64 {
        match self.shape {
            Shape::Segment => self.end - self.tau,
            Shape::Arc { radius, theta0, delta, .. } => I * delta * C64::from_polar(radius, theta0 + t * delta),
        }
    }

    /// `(point(v²) − τ)/v²`, evaluated without cancellation.
    fn chord(&self, v: f64) -> C64 {
        match self.shape {
            Shape::Segment => self.end - self.tau,
            Shape::Arc { radius, theta0, delta, .. } => {
                let x = delta * v * v / 2.0;
                let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
                C64::from_polar(radius, theta0 + x) * I * delta * sinc
            }
        }
    }

    /// `point(v²)`, computed from the chord to keep `w − τ` accurate near τ.
    fn sub_point(&self, v: f64) -> C64 {
        self.tau + self.chord(v) * (v * v)
    }

    /// `√(i(point(v²) − τ))/v`.
    fn root(&self, v: f64) -> C64 {
        psqrt(I * self.chord(v))
    }

    /// Minimal imaginary part along the path.
    pub fn im_min(&self) -> f64 {
        self.tau.im.min(self.end.im)
    }
}

/// `χ_{τ1,τ2} ∈ {±1}`, the sign relating principal square roots under inversion.
pub fn chi(t1: C64, t2: C64) -> f64 {
    let v = psqrt(I * (t1 - t2) / (t1 * t2)) * psqrt(t1) * psqrt(t2) / psqrt(I * (t1 - t2));
    if v.is_nan() {
        f64::NAN
    } else {
        v.re.signum()
    }
}

// ---------------------------------------------------------------------------
// iterated integrals

/// Inner kernel: plain `1/√(i(w2−τ))` or the regularized `(i(w2−τ))^{-3/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Plain,
    Regularized,
}

/// Integrand `Σ_j c_j A_j(w1) B_j(w2) m(w2)`.
pub struct Separable<'a> {
    pub outer: Vec<(C64, NumericSeries)>,
    pub inner: Vec<NumericSeries>,
    pub inner_factor: Option<Box<dyn Fn(C64) -> C64 + 'a>>,
}

impl Separable<'_> {
    fn inner_values(&self, w2: C64) -> Vec<C64> {
        let m = self.inner_factor.as_ref().map_or(C64::new(1.0, 0.0), |f| f(w2));
        self.inner.iter().map(|s| s.eval(w2) * m).collect()
    }

    fn outer_values(&self, w1: C64) -> Vec<C64> {
        self.outer.iter().map(|(c, s)| s.eval(w1) * c).collect()
    }

    /// Smallest q-exponent of the outer factors, i.e. the decay rate toward the cusp.
    pub fn decay(&self) -> Option<f64> {
        self.outer.iter().filter_map(|(c, s)| if c.norm() == 0.0 { None } else { s.lead() }).reduce(f64::min)
    }
}

struct Raw {
    value: C64,
    endpoint: f64,
    chi: Option<f64>,
}

fn iterated(path: &GeodesicPath, kernel: Kernel, f: &Separable<'_>, cfg: &QuadratureConfig) -> Result<Raw> {
    let gl = GaussLegendre::new(cfg.nodes);
    let tau = path.tau;
    let at_tau = f.inner_values(tau);
    let mut total = C64::new(0.0, 0.0);
    let mut chi_ref: Option<f64> = None;
    let mut endpoint = 0.0;
    let outer_rule = cfg.rule(&gl, 1.0);
    for &(v, wv) in &outer_rule {
        let w1 = path.sub_point(v);
        let s = path.root(v);
        let c = chi(w1, tau);
        match chi_ref {
            // χ is undefined when w1 rounds to τ
            _ if c.is_nan() => {}
            None => chi_ref = Some(c),
            Some(c0) if c0 != c => return Err(Error::BranchCrossing),
            _ => {}
        }
        let a = f.outer_values(w1);
        let mut inner = vec![C64::new(0.0, 0.0); a.len()];
        // the subtracted integrand is analytic, and grading would only amplify cancellation
        let inner_cfg = match kernel {
            Kernel::Plain => *cfg,
            Kernel::Regularized => QuadratureConfig { grading: 0, ..*cfg },
        };
        for &(u, wu) in &inner_cfg.rule(&gl, v) {
            let w2 = path.sub_point(u);
            let su = path.root(u);
            let b = f.inner_values(w2);
            match kernel {
                Kernel::Plain => {
                    let k = path.deriv(u * u) * 2.0 / su * wu;
                    for (acc, bj) in inner.iter_mut().zip(&b) {
                        *acc += bj * k;
                    }
                }
                Kernel::Regularized => {
                    let k = path.deriv(u * u) * 2.0 / (su * su * su) / (u * u) * wu;
                    for ((acc, bj), b0) in inner.iter_mut().zip(&b).zip(&at_tau) {
                        *acc += (bj - b0) * k;
                    }
                }
            }
        }
        if kernel == Kernel::Regularized {
            for (acc, b0) in inner.iter_mut().zip(&at_tau) {
                *acc += b0 * 2.0 * I / (s * v);
            }
        }
        let g: C64 = a.iter().zip(&inner).map(|(x, y)| x * y).sum::<C64>() * (path.deriv(v * v) * 2.0 / s);
        total += g * wv;
        endpoint = g.norm();
    }
    Ok(Raw { value: total, endpoint, chi: chi_ref })
}

/// Regularized inner integral `⨍_τ^{w1} f(w2)/(i(w2−τ))^{3/2} dw2` along the geodesic.
pub fn regularized_inner(f: &dyn Fn(C64) -> C64, tau: C64, w1: C64, cfg: &QuadratureConfig) -> Result<C64> {
    cfg.validate()?;
    let path = GeodesicPath::new(tau, w1)?;
    let gl = GaussLegendre::new(cfg.nodes);
    let f0 = f(tau);
    let mut acc = C64::new(0.0, 0.0);
    let c0 = chi(w1, tau);
    for &(u, wu) in &(QuadratureConfig { grading: 0, ..*cfg }).rule(&gl, 1.0) {
        let w2 = path.sub_point(u);
        let cw = chi(w2, tau);
        if !cw.is_nan() && cw != c0 {
            return Err(Error::BranchCrossing);
        }
        let su = path.root(u);
        acc += (f(w2) - f0) * path.deriv(u * u) * 2.0 / (su * su * su) / (u * u) * wu;
    }
    Ok(acc + f0 * 2.0 * I / path.root(1.0))
}

/// Endpoint of a completion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Endpoint {
    Finite(C64),
    Cusp,
}

/// Result of a numerical completion.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompletionValue {
    #[serde(serialize_with = "ser_c64")]
    pub value: C64,
    /// Change of the value under doubling of nodes and panels.
    pub error_estimate: f64,
    /// Estimated contribution of the truncated vertical tail.
    pub tail_estimate: f64,
    /// Common value of `χ_{w1,τ}` along the path.
    pub chi: Option<f64>,
    pub tail_height: Option<f64>,
}

pub fn ser_c64<S: serde::Serializer>(z: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("complex", 2)?;
    st.serialize_field("re", &z.re)?;
    st.serialize_field("im", &z.im)?;
    st.end()
}

/// Evaluates `prefactor · ∫_τ^{w} ∫_τ^{w1} F(w1,w2) dw2 dw1 / (kernels)` along the geodesic.
pub fn iterated_integral(
    f: &Separable<'_>,
    kernel: Kernel,
    tau: C64,
    end: Endpoint,
    cfg: &QuadratureConfig,
) -> Result<CompletionValue> {
    cfg.validate()?;
    let (path, height, mu) = match end {
        Endpoint::Finite(w) => (GeodesicPath::new(tau, w)?, None, 0.0),
        Endpoint::Cusp => {
            let mu = f.decay().filter(|m| *m > 0.0);
            let Some(mu) = mu else {
                if f.outer.iter().all(|(c, s)| c.norm() == 0.0 || s.lead().is_none()) {
                    return Ok(CompletionValue {
                        value: C64::new(0.0, 0.0),
                        error_estimate: 0.0,
                        tail_estimate: 0.0,
                        chi: None,
                        tail_height: None,
                    });
                }
                return Err(Error::NonconvergentEvaluation(0.0));
            };
            let h = cfg
                .tail_cutoff
                .unwrap_or_else(|| ((1.0 / cfg.tolerance).ln() + 8.0) / (2.0 * PI * mu));
            (GeodesicPath::to_cusp(tau, h)?, Some(h), mu)
        }
    };
    let coarse = iterated(&path, kernel, f, cfg)?;
    let fine = iterated(&path, kernel, f, &cfg.refined())?;
    let tail = match height {
        Some(h) => fine.endpoint / (2.0 * h) / (2.0 * PI * mu),
        None => 0.0,
    };
    Ok(CompletionValue {
        value: fine.value,
        error_estimate: (fine.value - coarse.value).norm(),
        tail_estimate: tail,
        chi: fine.chi.or(coarse.chi),
        tail_height: height,
    })
}

// ---------------------------------------------------------------------------
// completions

/// The families of completions.
#[derive(Clone, Debug, PartialEq)]
pub enum CompletionKind {
    Psi,
    Phi,
    Fk(u32),
    Fsqe(FsqeInput),
}

fn third() -> Exp {
    Exp::new(3, 2)
}

fn th1(m: Exp, r: i64, scale: f64, im: f64) -> Result<NumericSeries> {
    NumericSeries::unary(m, r, 1, scale, im)
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `h(w) = θ^{[1]}_{3,1}(w1)θ_{1,1}(w2) − θ^{[1]}_{3,2}(w1)θ_{1,0}(w2)`.
fn psi_integrand<'a>(im: f64) -> Result<Separable<'a>> {
    let three = Exp::from_integer(3);
    let one = Exp::from_integer(1);
    Ok(Separable {
        outer: vec![(c(1.0), th1(three, 1, 1.0, im)?), (c(-1.0), th1(three, 2, 1.0, im)?)],
        inner: vec![NumericSeries::unary(one, 1, 0, 1.0, im)?, NumericSeries::unary(one, 0, 0, 1.0, im)?],
        inner_factor: None,
    })
}

/// `(4f0 + g0)(w)·(1 − (πi/6)(w2−τ)E2(τ))`.
fn phi_integrand<'a>(tau: C64, im: f64) -> Result<Separable<'a>> {
    let three = Exp::from_integer(3);
    let e2 = e2_value(tau)?;
    Ok(Separable {
        outer: vec![
            (c(4.0), th1(three, 1, 1.0, im)?),
            (c(-4.0), th1(three, 2, 1.0, im)?),
            (c(1.0), th1(third(), 1, 1.0, im)?),
            (c(-1.0), th1(third(), 0, 1.0, im)?),
        ],
        inner: vec![
            th1(three, 2, 1.0, im)?,
            th1(three, 1, 1.0, im)?,
            th1(third(), 0, 1.0, im)?,
            th1(third(), 1, 1.0, im)?,
        ],
        inner_factor: Some(Box::new(move |w2| 1.0 - PI * I / 6.0 * (w2 - tau) * e2)),
    })
}

/// `η((2k+1)w1)³η(w2)³ + 2(k+1)Σ_j (−1)^j θ^{[1]}_{k+1,j}((2k+1)w1) θ^{[1]}_{k+1,j+k+1}(w2)`.
fn fk_integrand<'a>(k: u32, im: f64) -> Result<Separable<'a>> {
    if k == 0 {
        return Err(Error::MalformedParams("k must be at least 1".into()));
    }
    let s = (2 * k + 1) as f64;
    let m = Exp::from_integer(k as i64 + 1);
    let e3 = |scale: f64| NumericSeries::from_expansion(&eta3_series(order_for(im * scale).unwrap()), scale);
    order_for(im)?;
    let mut outer = vec![(c(1.0), e3(s))];
    let mut inner = vec![e3(1.0)];
    for j in 0..(2 * k as i64 + 2) {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        outer.push((c(sign * 2.0 * (k + 1) as f64), th1(m, j, s, im)?));
        inner.push(th1(m, j + k as i64 + 1, 1.0, im)?);
    }
    Ok(Separable { outer, inner, inner_factor: None })
}

/// Double-integral families and the theta-product term of the F_{S,Q,ε} representation.
fn fsqe_parts<'a>(input: &FsqeInput, tau: C64, im: f64) -> Result<(Separable<'a>, C64)> {
    input.validate()?;
    let [s1, s2, s3] = input.sigma;
    let kk = input.k;
    let d = input.discriminant();
    let sd = (d as f64).sqrt();
    let int_of = |x: Exp| -> Result<i64> {
        if x.is_integer() {
            Ok(x.to_integer())
        } else {
            Err(Error::MalformedParams(format!("theta residue {x} is not integral")))
        }
    };
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let mut theta_term = C64::new(0.0, 0.0);
    for (a, e) in input.shifts.iter().zip(&input.eps) {
        let e = *e as f64;
        for r in 0..s3 {
            let x = a[0] + r;
            let m1 = Exp::from_integer(kk * d * s3);
            let r1 = int_of(x * (2 * kk * d))?;
            let m2 = Exp::from_integer(kk * s3);
            let r2 = int_of((x * s2 + a[1] * s3) * (2 * kk))?;
            outer.push((c(e * (kk * s3) as f64 * sd / 2.0), th1(m1, r1, 1.0, im)?));
            inner.push(th1(m2, r2, 1.0, im)?);
            let t1 = NumericSeries::unary(m1, r1, 0, 1.0, im)?.eval(tau);
            let t2 = NumericSeries::unary(m2, r2, 0, 1.0, im)?.eval(tau);
            theta_term += t1 * t2 * e;
        }
        for r in 0..s1 {
            let x = a[1] + r;
            let m1 = Exp::from_integer(kk * d * s1);
            let r1 = int_of(x * (2 * kk * d))?;
            let m2 = Exp::from_integer(kk * s1);
            let r2 = int_of((x * s2 + a[0] * s1) * (2 * kk))?;
            outer.push((c(e * (kk * s1) as f64 * sd / 2.0), th1(m1, r1, 1.0, im)?));
            inner.push(th1(m2, r2, 1.0, im)?);
        }
    }
    let w = 0.25 * (1.0 - 2.0 / PI * (s2 as f64 / sd).atan());
    Ok((Separable { outer, inner, inner_factor: None }, theta_term * w))
}

/// Numerical value of the completion of the given kind at `(τ, w)`; `w = Cusp` gives the
/// false theta function itself.
pub fn completion(kind: &CompletionKind, tau: C64, w: Endpoint, cfg: &QuadratureConfig) -> Result<CompletionValue> {
    let im = match w {
        Endpoint::Finite(w) => tau.im.min(w.im),
        Endpoint::Cusp => tau.im,
    };
    if !(im > 0.0) {
        return Err(Error::NonconvergentEvaluation(im));
    }
    let (sep, kernel, pre, extra) = match kind {
        CompletionKind::Psi => (psi_integrand(im)?, Kernel::Regularized, 3f64.sqrt() / (2.0 * PI), c(0.0)),
        CompletionKind::Phi => (phi_integrand(tau, im)?, Kernel::Regularized, 1.0 / PI, c(0.0)),
        CompletionKind::Fk(k) => (fk_integrand(*k, im)?, Kernel::Plain, ((2 * k + 1) as f64).sqrt() / 2.0, c(0.0)),
        CompletionKind::Fsqe(input) => {
            let (s, t) = fsqe_parts(input, tau, im)?;
            (s, Kernel::Plain, 1.0, t)
        }
    };
    let mut v = iterated_integral(&sep, kernel, tau, w, cfg)?;
    v.value = v.value * pre + extra;
    v.error_estimate *= pre;
    v.tail_estimate *= pre;
    Ok(v)
}

// ---------------------------------------------------------------------------
// multipliers and modular residuals

/// `M = [[a, b], [c, d]]` with determinant one.
pub type Matrix = [[i64; 2]; 2];

/// The multiplier `ν_η(M)` with its decomposition into `T` and `S`.
#[derive(Clone, Debug, Serialize)]
pub struct EtaMultiplierState {
    pub matrix: Matrix,
    #[serde(serialize_with = "ser_c64")]
    pub value: C64,
    /// Generators applied left to right, e.g. `["T^2", "S", "T^-1"]`.
    pub word: Vec<String>,
    /// `|η(Mτ) − ν(M)(cτ+d)^{1/2}η(τ)|` at a sample point.
    pub check_residual: f64,
}

fn mat_mul(x: Matrix, y: Matrix) -> Matrix {
    [
        [x[0][0] * y[0][0] + x[0][1] * y[1][0], x[0][0] * y[0][1] + x[0][1] * y[1][1]],
        [x[1][0] * y[0][0] + x[1][1] * y[1][0], x[1][0] * y[0][1] + x[1][1] * y[1][1]],
    ]
}

pub fn mobius(m: Matrix, t: C64) -> C64 {
    (t * m[0][0] as f64 + m[0][1] as f64) / (t * m[1][0] as f64 + m[1][1] as f64)
}

fn jfac(m: Matrix, t: C64) -> C64 {
    t * m[1][0] as f64 + m[1][1] as f64
}

/// `√(j(A, Bτ)) √(j(B, τ)) / √(j(AB, τ)) ∈ {±1}`, evaluated at τ = i.
fn cocycle(a: Matrix, b: Matrix) -> f64 {
    let t = C64::new(0.137, 1.0);
    let v = psqrt(jfac(a, mobius(b, t))) * psqrt(jfac(b, t)) / psqrt(jfac(mat_mul(a, b), t));
    v.re.signum()
}

pub fn eta_multiplier(m: Matrix) -> Result<EtaMultiplierState> {
    if m[0][0] * m[1][1] - m[0][1] * m[1][0] != 1 {
        return Err(Error::NotUnimodular);
    }
    let mut word = Vec::new();
    let value = multiplier_rec(m, &mut word);
    let [[_, _], [cc, dd]] = m;
    let t = if cc != 0 {
        C64::new(-(dd as f64) / cc as f64 + 0.1, 1.0 / (cc.abs() as f64))
    } else {
        C64::new(0.1, 1.0)
    };
    let lhs = eta_value(mobius(m, t))?;
    let rhs = value * psqrt(jfac(m, t)) * eta_value(t)?;
    Ok(EtaMultiplierState { matrix: m, value, word, check_residual: (lhs - rhs).norm() })
}

fn multiplier_rec(m: Matrix, word: &mut Vec<String>) -> C64 {
    let [[a, b], [cc, d]] = m;
    let phase = |x: f64| C64::from_polar(1.0, PI * x);
    if cc == 0 {
        // ±T^n
        let n = if a == 1 { b } else { -b };
        if n != 0 {
            word.push(format!("T^{n}"));
        }
        let t = phase(n as f64 / 12.0);
        return if a == 1 {
            t
        } else {
            word.push("-I".into());
            let neg: Matrix = [[-1, 0], [0, -1]];
            let tn: Matrix = [[1, n], [0, 1]];
            t * C64::new(0.0, -1.0) * cocycle(tn, neg)
        };
    }
    // M = T^n S M'
    let n = a.div_euclid(cc);
    let rest: Matrix = [[cc, d], [-(a - n * cc), -(b - n * d)]];
    if n != 0 {
        word.push(format!("T^{n}"));
    }
    word.push("S".into());
    let s: Matrix = [[0, -1], [1, 0]];
    let inner = multiplier_rec(rest, word);
    let nu_s = phase(-0.25);
    phase(n as f64 / 12.0) * nu_s * inner * cocycle(s, rest)
}

/// `|Ĝ(Mτ, Mw) − ν_η(M)^k (cτ+d)^wt Ĝ(τ, w)|` for Ψ̂ (`k = 8`, weight 2) or Φ̂ (`k = 10`, weight 3).
pub fn modular_residual(kind: &CompletionKind, m: Matrix, tau: C64, w: C64, cfg: &QuadratureConfig) -> Result<f64> {
    let (k, wt) = match kind {
        CompletionKind::Psi => (8, 2),
        CompletionKind::Phi => (10, 3),
        _ => return Err(Error::MalformedParams("modular residuals are defined for psi and phi".into())),
    };
    let nu = eta_multiplier(m)?.value;
    let lhs = completion(kind, mobius(m, tau), Endpoint::Finite(mobius(m, w)), cfg)?.value;
    let rhs = completion(kind, tau, Endpoint::Finite(w), cfg)?.value * nu.powi(k) * jfac(m, tau).powi(wt);
    Ok((lhs - rhs).norm())
}

/// Named generators accepted by [`parse_matrix`].
pub fn named_matrix(name: &str) -> Option<Matrix> {
    Some(match name {
        "I" => [[1, 0], [0, 1]],
        "T" => [[1, 1], [0, 1]],
        "S" => [[0, -1], [1, 0]],
        "TS" => [[1, -1], [1, 0]],
        "ST^-1S" | "ST-1S" => [[-1, 0], [-1, -1]],
        _ => return None,
    })
}

// ---------------------------------------------------------------------------
// sign lemma and the rank two false theta representation

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∫_τ^{τ+i∞} a e^{πia²w1}/√(i(w1−τ)) ∫_τ^{w1} b e^{πib²w2}/√(i(w2−τ)) dw2 dw1` by quadrature.
fn sign_integral(a: f64, b: f64, tau: C64, cfg: &QuadratureConfig) -> Result<C64> {
    if a == 0.0 || b == 0.0 {
        return Ok(c(0.0));
    }
    let f = Separable {
        outer: vec![(c(a), NumericSeries::monomial(a * a / 2.0, 1.0))],
        inner: vec![NumericSeries::monomial(b * b / 2.0, b)],
        inner_factor: None,
    };
    Ok(iterated_integral(&f, Kernel::Plain, tau, Endpoint::Cusp, cfg)?.value)
}

/// Both sides of the sign-function identity for `sgn(ℓ1)sgn(ℓ2+κℓ1)q^{(ℓ1²+ℓ2²)/2}`; returns the
/// absolute difference.
pub fn sign_lemma_residual(l1: f64, l2: f64, kappa: f64, tau: C64) -> Result<f64> {
    let cfg = QuadratureConfig { tolerance: 1e-13, grading: 14, ..QuadratureConfig::default() };
    let qe = e2pi(tau * ((l1 * l1 + l2 * l2) / 2.0));
    let lhs = qe * (sgn(l1) * sgn(l2 + kappa * l1));
    let n = (1.0 + kappa * kappa).sqrt();
    let (m1, m2) = ((l2 + kappa * l1) / n, (l1 - kappa * l2) / n);
    let rhs = sign_integral(l1, l2, tau, &cfg)? + sign_integral(m1, m2, tau, &cfg)? + qe * (2.0 / PI * kappa.atan());
    Ok((lhs - rhs).norm())
}

/// Numeric check of the iterated-integral representation of
/// `Σ_{n∈ℤ²+α} sgn(n1)sgn(n2) q^{(a n1² + 2b n1n2 + c n2²)/2}` for `α ∉ ℤ²`.
/// Returns `(series value, integral side)`.
pub fn rank_two_sign_check(abc: [i64; 3], alpha: [Exp; 2], tau: C64, cfg: &QuadratureConfig) -> Result<(C64, C64)> {
    let [a, b, cc] = abc;
    let delta = a * cc - b * b;
    if a <= 0 || delta <= 0 {
        return Err(Error::NotPositiveDefiniteQ(format!("{abc:?}")));
    }
    if alpha[0].is_integer() && alpha[1].is_integer() {
        return Err(Error::MalformedParams("shift must not be integral".into()));
    }
    let (af, bf, cf, df) = (a as f64, b as f64, cc as f64, delta as f64);
    let (x0, y0) = (exp_f64(alpha[0]), exp_f64(alpha[1]));
    let lam = df / (af + cf);
    let bound = (48.0 / (PI * tau.im * lam)).sqrt().ceil() as i64 + 2;
    let range = |s: f64| (-bound..=bound).map(move |j| j as f64 + s);
    let mut series = c(0.0);
    let mut theta = c(0.0);
    for n1 in range(x0) {
        for n2 in range(y0) {
            let qf = e2pi(tau * ((af * n1 * n1 + 2.0 * bf * n1 * n2 + cf * n2 * n2) / 2.0));
            series += qf * (sgn(n1) * sgn(n2));
            theta += qf;
        }
    }
    // Θ1 + Θ2 grouped by the w1-variable
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    for (p, pp, sp, sq) in [(af, cf, x0, y0), (cf, af, y0, x0)] {
        // Θ1 for (p, pp) = (a, c) uses n1 outside and y = n2 + (b/c) n1 inside
        for n in range(sp) {
            if n == 0.0 {
                continue;
            }
            let terms = range(sq)
                .map(|m| {
                    let y = m + bf / pp * n;
                    (pp * y * y / 2.0, y)
                })
                .collect();
            outer.push((c(n), NumericSeries::monomial(df / pp * n * n / 2.0, 1.0)));
            inner.push(NumericSeries { terms });
        }
        let _ = p;
    }
    let f = Separable { outer, inner, inner_factor: None };
    let integral = iterated_integral(&f, Kernel::Plain, tau, Endpoint::Cusp, cfg)?.value;
    let rhs = integral * df.sqrt() - theta * (2.0 / PI * (bf / df.sqrt()).atan());
    Ok((series, rhs))
}

// ---------------------------------------------------------------------------
// decomposition lemmas

/// Identities for quotients of Jacobi theta functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LemmaId {
    /// `ζ^r/(ϑ(z)ϑ(z+w))`, `r ∈ ℤ`.
    ThetaPair,
    /// `ζ^r/(ϑ(z)ϑ(z+w1)ϑ(z+w2))`, `r ∈ ℤ+1/2`.
    ThetaTriple,
    /// `ζ^r/(ϑ(2z)ϑ(z+w1)ϑ(z+w2))`, `r ∈ ℤ`.
    DoubledTriple,
    /// `ζ^r/ϑ(z)³`, `r ∈ ℤ+1/2`.
    ThetaCubed,
    /// `ζ^r/(ϑ(z)²ϑ(2z))`, `r ∈ ℤ`.
    DoubledSquare,
    /// `ζ^r/ϑ(z)²`, `r ∈ ℤ`.
    ThetaSquared,
}

impl std::str::FromStr for LemmaId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().replace(['.', '_'], "").as_str() {
            "THETAPAIR" => LemmaId::ThetaPair,
            "THETATRIPLE" => LemmaId::ThetaTriple,
            "DOUBLEDTRIPLE" => LemmaId::DoubledTriple,
            "THETACUBED" => LemmaId::ThetaCubed,
            "DOUBLEDSQUARE" => LemmaId::DoubledSquare,
            "THETASQUARED" => LemmaId::ThetaSquared,
            _ => return Err(Error::MalformedParams(format!("unknown lemma `{s}`"))),
        })
    }
}

/// Evaluation point of a lemma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaPoint {
    pub z: C64,
    pub w1: C64,
    pub w2: C64,
    pub tau: C64,
    /// Twice the index `r`.
    pub r2: i64,
}

/// `Σ_{n=-N}^{N} f(n)`, dropping summands that are not finite; those only arise once the
/// q-power prefactor has underflowed.
fn bilateral(n: i64, f: impl Fn(f64) -> C64) -> C64 {
    (-n..=n).map(|k| f(k as f64)).filter(|v| v.is_finite()).sum()
}

fn on_lattice(w: C64, tau: C64, half: bool) -> bool {
    let s = if half { 2.0 } else { 1.0 };
    let (x, y) = (w.re * s, w.im * s);
    let b = y / tau.im;
    let a = x - b * tau.re;
    (b - b.round()).abs() < 1e-9 && (a - a.round()).abs() < 1e-9
}

/// `|LHS − RHS|` of the chosen identity at the given point, with `terms` summands on each side
/// of the bilateral sums.
pub fn lemma_residual(id: LemmaId, p: LemmaPoint, terms: i64) -> Result<f64> {
    let LemmaPoint { z, w1, w2, tau, r2 } = p;
    let r = r2 as f64 / 2.0;
    let half_r = matches!(id, LemmaId::ThetaTriple | LemmaId::ThetaCubed);
    if (r2.rem_euclid(2) == 1) != half_r {
        return Err(Error::MalformedParams("r has the wrong integrality for this identity".into()));
    }
    let q = |x: C64| e2pi(tau * x);
    let qr = |x: f64| e2pi(tau * x);
    let zeta = e2pi(z);
    let zr = e2pi(z * r);
    let th = |x: C64| jtheta(x, tau);
    let eta = eta_value(tau)?;
    let eta3 = eta * eta * eta;
    let pole = |what: &str| Err(Error::PolePoint(what.into()));
    if on_lattice(z, tau, matches!(id, LemmaId::DoubledTriple | LemmaId::DoubledSquare)) {
        return pole("z");
    }
    let n = terms;
    let diff = match id {
        LemmaId::ThetaPair => {
            if on_lattice(w1, tau, false) {
                return pole("w ∈ ℤτ+ℤ");
            }
            let lhs = zr / (th(z) * th(z + w1));
            let ew = e2pi(w1);
            let s1 = bilateral(n, |k| qr(k * k - r * k) * e2pi(-w1 * k) / (1.0 - zeta * qr(k)));
            let s2 = bilateral(n, |k| qr(k * k - r * k) * e2pi(w1 * k) / (1.0 - zeta * ew * qr(k)));
            let pre = I / (eta3 * th(w1));
            lhs - (pre * s1 - pre * e2pi(-w1 * r) * s2)
        }
        LemmaId::ThetaTriple => {
            if on_lattice(w1, tau, false) || on_lattice(w2, tau, false) || on_lattice(w1 - w2, tau, false) {
                return pole("w1, w2, w1−w2 ∉ ℤτ+ℤ");
            }
            let lhs = zr / (th(z) * th(z + w1) * th(z + w2));
            let alt = |k: f64| if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let base = |k: f64| qr(1.5 * k * k - r * k) * alt(k);
            let t1 = I / (eta3 * th(w1) * th(w2))
                * bilateral(n, |k| base(k) * e2pi(-(w1 + w2) * k) / (1.0 - zeta * qr(k)));
            let t2 = I * e2pi(-w1 * r) / (eta3 * th(w1) * th(w1 - w2))
                * bilateral(n, |k| base(k) * e2pi(-(w2 - 2.0 * w1) * k) / (1.0 - zeta * e2pi(w1) * qr(k)));
            let t3 = I * e2pi(-w2 * r) / (eta3 * th(w2) * th(w2 - w1))
                * bilateral(n, |k| base(k) * e2pi(-(w1 - 2.0 * w2) * k) / (1.0 - zeta * e2pi(w2) * qr(k)));
            lhs - (t1 + t2 + t3)
        }
        LemmaId::DoubledTriple => {
            if on_lattice(w1, tau, true) || on_lattice(w2, tau, true) || on_lattice(w1 - w2, tau, false) {
                return pole("w1, w2 ∉ ½(ℤτ+ℤ) and w1−w2 ∉ ℤτ+ℤ");
            }
            let lhs = zr / (th(z * 2.0) * th(z + w1) * th(z + w2));
            let base = |k: f64| qr(3.0 * k * k - r * k);
            let t1 = I * e2pi(-w1 * r) / (eta3 * th(w1 * 2.0) * th(w1 - w2))
                * bilateral(n, |k| base(k) * e2pi((w1 * 5.0 - w2) * k) / (1.0 - zeta * e2pi(w1) * qr(k)));
            let t2 = I * e2pi(-w2 * r) / (eta3 * th(w2 * 2.0) * th(w2 - w1))
                * bilateral(n, |k| base(k) * e2pi((w2 * 5.0 - w1) * k) / (1.0 - zeta * e2pi(w2) * qr(k)));
            let mut t3 = c(0.0);
            for l1 in 0..2i64 {
                for l2 in 0..2i64 {
                    let (a, b) = (l1 as f64, l2 as f64);
                    let shift = (tau * a + b) / 2.0;
                    let sign = if (l1 + l2 + (r2 / 2) * l2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    let pm = if l2 == 0 { 1.0 } else { -1.0 };
                    let s = bilateral(n, |k| {
                        qr(3.0 * k * k - (3.0 * a + r) * k) * e2pi(-(w1 + w2) * k)
                            / (1.0 - zeta * pm * qr(k - a / 2.0))
                    });
                    t3 += qr(a * (a + r) / 2.0) * sign / (th(w1 + shift) * th(w2 + shift)) * s;
                }
            }
            lhs - (t1 + t2 + t3 * I / (eta3 * 2.0))
        }
        LemmaId::ThetaCubed => {
            let lhs = zr / (th(z) * th(z) * th(z));
            let e2 = e2_value(tau)?;
            let alt = |k: f64| if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let s = bilateral(n, |k| {
                let d = 1.0 - zeta * qr(k);
                let x = 3.0 * k - r - 1.0;
                qr(1.5 * k * k - r * k) * alt(k)
                    * ((4.0 * x * x - e2) / (8.0 * d) + (6.0 * k - 2.0 * r - 3.0) / (2.0 * d * d) + 1.0 / (d * d * d))
            });
            lhs + I / eta3.powi(3) * s
        }
        LemmaId::DoubledSquare => {
            let lhs = zr / (th(z) * th(z) * th(z * 2.0));
            let e2 = e2_value(tau)?;
            let eta6 = eta3 * eta3;
            let mut tors = Vec::new();
            for (l1, l2) in [(0i64, 1i64), (1, 0), (1, 1)] {
                let t = th((tau * l1 as f64 + l2 as f64) / 2.0);
                let sign = if (l1 + l2 + (r2 / 2) * l2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                tors.push((l1 as f64, if l2 == 0 { 1.0 } else { -1.0 }, sign / (t * t)));
            }
            let s = bilateral(n, |k| {
                let d = 1.0 - zeta * qr(k);
                let x = 6.0 * k - r - 1.0;
                let mut v = (2.0 * x * x - e2) / (8.0 * d) + (12.0 * k - 2.0 * r - 3.0) / (4.0 * d * d) + 1.0 / (2.0 * d * d * d);
                let mut tsum = c(0.0);
                for &(a, pm, coef) in &tors {
                    tsum += coef * qr(a * (a - r) / 2.0 + 3.0 * a * k) / (1.0 - zeta * pm * qr(k + a / 2.0));
                }
                v -= eta6 / 2.0 * tsum;
                qr(3.0 * k * k - r * k) * v
            });
            lhs + I / eta3.powi(3) * s
        }
        LemmaId::ThetaSquared => {
            let lhs = zr / (th(z) * th(z));
            let s = bilateral(n, |k| {
                let d = 1.0 - zeta * qr(k);
                qr(k * k - r * k) * ((2.0 * k - r - 1.0) / d + 1.0 / (d * d))
            });
            lhs + s / (eta3 * eta3)
        }
    };
    let _ = q(c(0.0));
    Ok(diff.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::lattice::{builtin, BuiltinParams};

    fn ci(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn series_value(name: &str, params: &BuiltinParams, tau: C64) -> C64 {
        builtin(name, params, Exp::from_integer(30)).unwrap().eval_numeric(tau).unwrap()
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let gl = GaussLegendre::new(10);
        let v = gl.integrate(0.0, 2.0, |x| x.powi(19));
        assert!((v - 2f64.powi(20) / 20.0).abs() < 1e-9);
        let v = gl.integrate(-1.0, 1.0, |x| x.cos());
        assert!((v - 2.0 * 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn eta_at_i() {
        let v = theta_numeric(ThetaKind::Eta, Exp::from_integer(1), ci(0.0, 1.0)).unwrap();
        assert!((v.re - 0.768_225_422_326_056_7).abs() < 1e-12 && v.im.abs() < 1e-14);
        let t = ci(0.3, 0.8);
        let e = theta_numeric(ThetaKind::Eta, Exp::from_integer(1), t).unwrap();
        let e3 = theta_numeric(ThetaKind::Eta3, Exp::from_integer(1), t).unwrap();
        assert!((e * e * e - e3).norm() < 1e-12);
        let z = theta_numeric(ThetaKind::Unary { m: Exp::from_integer(3), r: 0, k: 1 }, Exp::from_integer(1), t);
        assert!(z.unwrap().norm() < 1e-15);
    }

    #[test]
    fn jacobi_theta_derivative_and_torsion() {
        // ϑ'(0) = −2π η³
        let t = ci(0.1, 1.1);
        let h = 1e-5;
        let d = (jtheta(ci(h, 0.0), t) - jtheta(ci(-h, 0.0), t)) / (2.0 * h);
        let e = eta_value(t).unwrap();
        assert!((d + 2.0 * PI * e * e * e).norm() < 1e-7);
        assert!(matches!(
            theta_numeric(ThetaKind::Torsion(0, 0), Exp::from_integer(1), t),
            Err(Error::InvalidTorsionPoint)
        ));
    }

    #[test]
    fn multiplier_generators() {
        let t = eta_multiplier([[1, 1], [0, 1]]).unwrap();
        assert!((t.value - C64::from_polar(1.0, PI / 12.0)).norm() < 1e-14);
        let s = eta_multiplier([[0, -1], [1, 0]]).unwrap();
        assert!(s.check_residual < 1e-10);
        assert!(matches!(eta_multiplier([[1, 1], [1, 1]]), Err(Error::NotUnimodular)));
        for m in [[[5, 2], [2, 1]], [[-3, 7], [2, -5]], [[13, 8], [-18, -11]], [[-1, 0], [0, -1]], [[7, 3], [-19, -8]]] {
            let st = eta_multiplier(m).unwrap();
            assert!(st.check_residual < 1e-8, "{m:?}: {}", st.check_residual);
            assert!((st.value.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn regularized_inner_constant_and_linear() {
        let cfg = QuadratureConfig::default();
        let (tau, w1) = (ci(0.2, 1.0), ci(0.9, 1.4));
        let v = regularized_inner(&|_| ci(3.0, 0.0), tau, w1, &cfg).unwrap();
        assert!((v - 6.0 * I / psqrt(I * (w1 - tau))).norm() < 1e-12);
        // f = i(w2−τ): integrand (i(w2−τ))^{-1/2}, antiderivative −2i·√(i(w2−τ))
        let v = regularized_inner(&|w| I * (w - tau), tau, w1, &cfg).unwrap();
        assert!((v + 2.0 * I * psqrt(I * (w1 - tau))).norm() < 1e-11);
    }

    #[test]
    fn psi_completion_matches_series() {
        let cfg = QuadratureConfig::default();
        for tau in [ci(0.0, 2.0), ci(1.0 / 3.0, 1.5)] {
            let v = completion(&CompletionKind::Psi, tau, Endpoint::Cusp, &cfg).unwrap();
            let s = series_value("Psi", &BuiltinParams::default(), tau);
            assert!((v.value - s).norm() < 1e-8, "{tau}: {} vs {s}", v.value);
            assert!(v.error_estimate < 1e-9);
        }
    }

    #[test]
    fn phi_and_fk_completions_match_series() {
        let cfg = QuadratureConfig::default();
        let tau = ci(0.25, 1.2);
        let v = completion(&CompletionKind::Phi, tau, Endpoint::Cusp, &cfg).unwrap();
        let s = series_value("Phi", &BuiltinParams::default(), tau);
        assert!((v.value - s).norm() < 1e-8, "{} vs {s}", v.value);
        for k in [1, 2] {
            let v = completion(&CompletionKind::Fk(k), tau, Endpoint::Cusp, &cfg).unwrap();
            let s = series_value("Fk", &BuiltinParams { k: Some(k), ..Default::default() }, tau);
            assert!((v.value - s).norm() < 1e-8, "k={k}: {} vs {s}", v.value);
        }
    }

    #[test]
    fn completion_vanishes_on_short_paths() {
        let cfg = QuadratureConfig::default();
        let tau = ci(0.1, 1.0);
        let a = completion(&CompletionKind::Psi, tau, Endpoint::Finite(tau + ci(0.0, 1e-2)), &cfg).unwrap();
        let b = completion(&CompletionKind::Psi, tau, Endpoint::Finite(tau + ci(0.0, 1e-4)), &cfg).unwrap();
        assert!(b.value.norm() < a.value.norm() / 10.0);
    }

    #[test]
    fn geodesic_and_straight_paths_agree() {
        let cfg = QuadratureConfig::default();
        let (tau, w) = (ci(0.1, 1.0), ci(0.6, 1.3));
        let g = GeodesicPath::new(tau, w).unwrap();
        let (cx, r) = g.circle().unwrap();
        assert!(((g.point(0.4) - cx).norm() - r).abs() < 1e-12);
        assert!((g.point(1.0) - w).norm() < 1e-12);
        let f = psi_integrand(1.0).unwrap();
        let a = iterated(&g, Kernel::Regularized, &f, &cfg).unwrap().value;
        let b = iterated(&GeodesicPath::straight(tau, w).unwrap(), Kernel::Regularized, &f, &cfg).unwrap().value;
        assert!((a - b).norm() < 1e-10, "{a} {b}");
    }

    #[test]
    fn modular_residuals_psi_phi() {
        let cfg = QuadratureConfig::default();
        for kind in [CompletionKind::Psi, CompletionKind::Phi] {
            for (tau, w) in [(ci(0.0, 1.0), ci(0.5, 2.0)), (ci(0.15, 0.95), ci(-0.25, 1.3))] {
                for m in ["I", "T", "S", "TS", "ST^-1S"] {
                    let r = modular_residual(&kind, named_matrix(m).unwrap(), tau, w, &cfg).unwrap();
                    assert!(r < 1e-7, "{kind:?} {m} at {tau},{w}: {r}");
                }
            }
        }
    }

    #[test]
    fn sign_lemma_examples() {
        assert!(sign_lemma_residual(1.0, 1.0, 0.0, ci(0.0, 1.0)).unwrap() < 1e-10);
        assert!(sign_lemma_residual(1.0, 0.5, 1.0 / 3.0, ci(0.2, 0.8)).unwrap() < 1e-10);
        assert!(sign_lemma_residual(0.0, 1.0, -2.0, ci(0.0, 1.0)).unwrap() < 1e-12);
        assert!(sign_lemma_residual(-0.7, -1.3, -2.0, ci(0.3, 1.1)).unwrap() < 1e-9);
    }

    #[test]
    fn rank_two_representation() {
        let cfg = QuadratureConfig::default();
        let (s, r) = rank_two_sign_check([2, 1, 3], [Exp::new(1, 3), Exp::new(1, 4)], ci(0.1, 0.9), &cfg).unwrap();
        assert!((s - r).norm() < 1e-8, "{s} vs {r}");
    }

    #[test]
    fn lemma_residuals_small() {
        let p = |r2| LemmaPoint { z: ci(0.21, 0.3), w1: ci(0.37, 0.41), w2: ci(-0.13, 0.22), tau: ci(0.1, 1.3), r2 };
        for (id, r2) in [
            (LemmaId::ThetaPair, 0),
            (LemmaId::ThetaPair, 2),
            (LemmaId::ThetaTriple, 1),
            (LemmaId::ThetaTriple, -3),
            (LemmaId::DoubledTriple, 0),
            (LemmaId::DoubledTriple, 2),
            (LemmaId::ThetaCubed, 1),
            (LemmaId::ThetaCubed, 3),
            (LemmaId::DoubledSquare, 0),
            (LemmaId::DoubledSquare, -2),
            (LemmaId::ThetaSquared, 2),
        ] {
            let v = lemma_residual(id, p(r2), 30).unwrap();
            assert!(v < 1e-9, "{id:?} r2={r2}: {v}");
        }
        assert!(matches!(
            lemma_residual(LemmaId::ThetaPair, LemmaPoint { w1: ci(0.1, 1.3), ..p(0) }, 30),
            Err(Error::PolePoint(_))
        ));
    }
    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn refinement_changes_little(x in -0.5f64..0.5, y in 0.8f64..2.0) {
            let cfg = QuadratureConfig::default();
            let tau = ci(x, y);
            let a = completion(&CompletionKind::Psi, tau, Endpoint::Cusp, &cfg).unwrap();
            let b = completion(&CompletionKind::Psi, tau, Endpoint::Cusp, &cfg.refined()).unwrap();
            prop_assert!((a.value - b.value).norm() < cfg.tolerance);
        }

        #[test]
        fn limit_recovery(x in -0.5f64..0.5, y in 0.8f64..2.0) {
            let cfg = QuadratureConfig::default();
            let tau = ci(x, y);
            let cusp = completion(&CompletionKind::Fk(1), tau, Endpoint::Cusp, &cfg).unwrap().value;
            let err = |t: f64| {
                (completion(&CompletionKind::Fk(1), tau, Endpoint::Finite(tau + ci(0.0, t)), &cfg).unwrap().value - cusp).norm()
            };
            let (e1, e2) = (err(0.5), err(1.5));
            prop_assert!(e2 < e1 * 0.1 || e2 < 1e-12, "{e1} {e2}");
        }
    }

    #[test]
    fn modular_residuals_third_sample() {
        let cfg = QuadratureConfig::default();
        let (tau, w) = (ci(-0.31, 1.17), ci(0.22, 0.88));
        for kind in [CompletionKind::Psi, CompletionKind::Phi] {
            for m in ["T", "S", "TS", "ST^-1S"] {
                let r = modular_residual(&kind, named_matrix(m).unwrap(), tau, w, &cfg).unwrap();
                assert!(r < 1e-6, "{kind:?} {m}: {r}");
            }
        }
    }
}
