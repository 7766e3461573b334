//! Command-line front end: argument parsing, dispatch and report formatting.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::eichler::{self, CompletionKind, Endpoint, QuadratureConfig};
use crate::error::Error;
use crate::invariants::{self, FsqeInput, PlumbingGraph};
use crate::jacobi_ct::{self, Which};
use crate::lattice::{self, BuiltinParams};
use crate::qseries::{format_exp, parse_exp, Exp, QExpansion};
use crate::special;

/// Environment variable selecting the floating-point mode of numeric verbs.
pub const PRECISION_ENV: &str = "FALSETHETA_PRECISION";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGENT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "falsetheta", version, about = "False theta functions, their completions and Ẑ-invariants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,
    /// Write the report to this file instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact q-expansion of a named series, exact through q^N.
    Expand {
        #[arg(long)]
        series: String,
        #[arg(short = 'N', value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
        #[command(flatten)]
        params: SeriesParams,
    },
    /// Exact check of a decomposition identity through q^N.
    Verify {
        #[arg(long)]
        which: String,
        #[arg(short = 'N', value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
    },
    /// Numerical value of a series or of a completion at a point.
    Eval {
        /// A named series (see `expand`), evaluated from its q-expansion.
        #[arg(long, conflicts_with = "completion")]
        series: Option<String>,
        /// psi, phi, fk or fsqe.
        #[arg(long)]
        completion: Option<String>,
        #[command(flatten)]
        point: Point,
        #[command(flatten)]
        params: SeriesParams,
        #[command(flatten)]
        quad: Quad,
    },
    /// Residual of the modular transformation law of a completion.
    Transform {
        /// psi or phi.
        #[arg(long)]
        kind: String,
        /// `a,b,c,d` or one of I, T, S, TS, ST^-1S.
        #[arg(long, allow_hyphen_values = true)]
        matrix: String,
        #[command(flatten)]
        point: Point,
        #[command(flatten)]
        quad: Quad,
        /// Exit with status 1 when the residual exceeds this bound.
        #[arg(long)]
        max_residual: Option<f64>,
    },
    /// Ẑ-invariant of a plumbing graph, exact through q^N.
    Zhat {
        #[arg(long)]
        graph: PathBuf,
        #[arg(short = 'N', value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
        /// Class vector `a1,a2,...`; defaults to δ.
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        /// Also run the second enumeration and compare.
        #[arg(long)]
        check: bool,
    },
    /// The series F_{S,Q,ε} of an input file, with its symmetrized-form check.
    Fsqe {
        #[arg(long)]
        spec: PathBuf,
        #[arg(short = 'N', value_parser = clap::value_parser!(u32).range(1..), default_value_t = 10)]
        n: u32,
        /// Also compare with the integral representation at this point.
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<String>,
        #[command(flatten)]
        quad: Quad,
    },
}

#[derive(Args, Debug, Default)]
pub struct SeriesParams {
    /// Parameter `a` of Lambda, as `a1,a2`.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<i64>,
    /// F_{S,Q,ε} input file, for Fsqe.
    #[arg(long = "fsqe")]
    pub fsqe: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Point {
    /// τ as `re,im`; rationals `p/q` are accepted.
    #[arg(long, allow_hyphen_values = true)]
    pub tau: String,
    /// Second variable `re,im`; the cusp when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub w: Option<String>,
}

#[derive(Args, Debug)]
pub struct Quad {
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub panels: Option<usize>,
    #[arg(long)]
    pub grading: Option<usize>,
    /// Height of the vertical tail.
    #[arg(long)]
    pub tail: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl Quad {
    fn config(&self) -> Result<QuadratureConfig, Failure> {
        let d = QuadratureConfig::default();
        let cfg = QuadratureConfig {
            nodes: self.nodes.unwrap_or(d.nodes),
            panels: self.panels.unwrap_or(d.panels),
            grading: self.grading.unwrap_or(d.grading),
            tail_cutoff: self.tail.or(d.tail_cutoff),
            tolerance: self.tol.unwrap_or(d.tolerance),
        };
        cfg.validate().map_err(|e| usage("quadrature", e))?;
        Ok(cfg)
    }
}

/// A finished run: exit status plus the report in both renderings.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub json: Value,
    pub human: String,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(field: &str, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_USAGE, message: format!("{field}: {e}") }
}

fn from_error(field: &str, e: Error) -> Failure {
    let code = match e {
        Error::NonconvergentEvaluation(_) | Error::BranchCrossing => EXIT_NONCONVERGENT,
        _ => EXIT_USAGE,
    };
    Failure { code, message: format!("{field}: {e}") }
}

fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some(_) => parse_exp(s).map(|e| *e.numer() as f64 / *e.denom() as f64),
        None => s.parse().ok(),
    }
}

pub fn parse_complex(field: &str, s: &str) -> Result<Complex64, Failure> {
    let bad = || usage(field, format!("expected `re,im`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let z = Complex64::new(parse_real(a).ok_or_else(bad)?, parse_real(b).ok_or_else(bad)?);
    if !(z.im > 0.0) {
        return Err(usage(field, "imaginary part must be positive"));
    }
    Ok(z)
}

fn parse_ints(field: &str, s: &str) -> Result<Vec<i64>, Failure> {
    s.split(',').map(|t| t.trim().parse().map_err(|e| usage(field, format!("`{t}`: {e}")))).collect()
}

fn read(field: &str, p: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(p).map_err(|e| usage(field, format!("{}: {e}", p.display())))
}

fn c64_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

/// `-N n` means exact through `q^n`.
fn order_of(n: u32) -> Exp {
    Exp::from_integer(n as i64 + 1)
}

fn series_params(p: &SeriesParams) -> Result<BuiltinParams, Failure> {
    let a = match &p.a {
        Some(s) => match parse_ints("a", s)?.as_slice() {
            [x, y] => Some([*x, *y]),
            _ => return Err(usage("a", "expected two integers")),
        },
        None => None,
    };
    let fsqe = match &p.fsqe {
        Some(path) => Some(FsqeInput::from_json(&read("fsqe", path)?).map_err(|e| from_error("fsqe", e))?),
        None => None,
    };
    Ok(BuiltinParams { a, k: p.k, r: p.r, fsqe })
}

/// A named series as `i^phase · series`.
fn named_series(name: &str, params: &BuiltinParams, order: Exp) -> Result<(u8, QExpansion), Failure> {
    let err = |e| from_error("series", e);
    match name {
        "A2char" => jacobi_ct::a2_ct_formula(order, true).map(|s| (0, s)).map_err(err),
        "B2char" => jacobi_ct::b2_ct_formula(order).map(|s| (0, s)).map_err(err),
        _ if lattice::BUILTIN_NAMES.contains(&name) => lattice::builtin(name, params, order).map(|s| (0, s)).map_err(err),
        _ => special::registry(name, order).map(|p| (p.i_power, p.series)).map_err(err),
    }
}

fn series_json(s: &QExpansion) -> Value {
    serde_json::to_value(s).expect("series serializes")
}

fn expand(name: &str, n: u32, p: &SeriesParams) -> Result<Outcome, Failure> {
    let params = series_params(p)?;
    let (phase, s) = named_series(name, &params, order_of(n))?;
    let prefix = ["", "i·", "-", "-i·"][phase as usize % 4];
    let human = if phase == 0 { format!("{s}") } else { format!("{prefix}({s})") };
    Ok(Outcome {
        code: EXIT_OK,
        json: json!({ "series": name, "i_power": phase, "expansion": series_json(&s) }),
        human,
    })
}

fn verify(which: &str, n: u32) -> Result<Outcome, Failure> {
    let w: Which = which.parse().map_err(|e| from_error("which", e))?;
    let r = jacobi_ct::verify_decomposition(w, order_of(n)).map_err(|e| from_error("which", e))?;
    let human = match &r.first_mismatch_exponent {
        None => format!("{which}: pass through q^{n} ({:.2} s)", r.elapsed),
        Some(e) => format!("{which}: FAIL, first mismatch at q^{e}"),
    };
    Ok(Outcome {
        code: if r.passed() { EXIT_OK } else { EXIT_FAILED },
        json: serde_json::to_value(&r).expect("report serializes"),
        human,
    })
}

fn completion_kind(name: &str, p: &BuiltinParams) -> Result<CompletionKind, Failure> {
    Ok(match name {
        "psi" | "Psi" => CompletionKind::Psi,
        "phi" | "Phi" => CompletionKind::Phi,
        "fk" | "Fk" => CompletionKind::Fk(p.k.ok_or_else(|| usage("k", "fk needs --k"))?),
        "fsqe" | "Fsqe" => CompletionKind::Fsqe(p.fsqe.clone().ok_or_else(|| usage("fsqe", "fsqe needs --fsqe FILE"))?),
        _ => return Err(usage("completion", format!("unknown kind `{name}`"))),
    })
}

fn series_of_kind(kind: &CompletionKind, order: Exp) -> crate::Result<QExpansion> {
    match kind {
        CompletionKind::Psi => lattice::psi(order),
        CompletionKind::Phi => lattice::phi(order),
        CompletionKind::Fk(k) => lattice::fk(*k, order),
        CompletionKind::Fsqe(inp) => invariants::fsqe_series(inp, order),
    }
}

fn numeric_value(s: &QExpansion, phase: u8, tau: Complex64) -> crate::Result<Complex64> {
    Ok(s.eval_numeric(tau)? * Complex64::i().powu(phase as u32))
}

fn eval(
    series: Option<&str>,
    completion: Option<&str>,
    point: &Point,
    p: &SeriesParams,
    quad: &Quad,
) -> Result<Outcome, Failure> {
    let tau = parse_complex("tau", &point.tau)?;
    let params = series_params(p)?;
    let order = invariants::numeric_order(tau.im);
    if let Some(name) = series {
        if point.w.is_some() {
            return Err(usage("w", "only completions take a second variable"));
        }
        let (phase, s) = named_series(name, &params, order)?;
        let v = numeric_value(&s, phase, tau).map_err(|e| from_error("tau", e))?;
        return Ok(Outcome {
            code: EXIT_OK,
            json: json!({ "series": name, "tau": c64_json(tau), "value": c64_json(v) }),
            human: format!("{name}({tau}) = {v}"),
        });
    }
    let name = completion.ok_or_else(|| usage("completion", "give --series or --completion"))?;
    let kind = completion_kind(name, &params)?;
    let cfg = quad.config()?;
    let w = match &point.w {
        Some(s) => Endpoint::Finite(parse_complex("w", s)?),
        None => Endpoint::Cusp,
    };
    let v = eichler::completion(&kind, tau, w, &cfg).map_err(|e| from_error("completion", e))?;
    let mut rec = json!({
        "completion": name,
        "tau": c64_json(tau),
        "w": match w { Endpoint::Finite(w) => c64_json(w), Endpoint::Cusp => json!("cusp") },
        "value": c64_json(v.value),
        "error_estimate": v.error_estimate,
        "tail_estimate": v.tail_estimate,
        "chi": v.chi,
        "tail_height": v.tail_height,
        "quadrature": serde_json::to_value(cfg).expect("config serializes"),
    });
    let mut human = format!(
        "{name}({tau}, {}) = {}\n  error estimate {:.2e}, tail estimate {:.2e}",
        point.w.as_deref().unwrap_or("i∞"),
        v.value,
        v.error_estimate,
        v.tail_estimate
    );
    if let Endpoint::Cusp = w {
        let s = series_of_kind(&kind, order)
            .and_then(|s| s.eval_numeric(tau))
            .map_err(|e| from_error("series", e))?;
        rec["series_value"] = c64_json(s);
        rec["difference"] = json!((s - v.value).norm());
        human += &format!("\n  series value {s}, difference {:.2e}", (s - v.value).norm());
    }
    Ok(Outcome { code: EXIT_OK, json: rec, human })
}

fn parse_matrix(s: &str) -> Result<eichler::Matrix, Failure> {
    if let Some(m) = eichler::named_matrix(s) {
        return Ok(m);
    }
    match parse_ints("matrix", s)?.as_slice() {
        [a, b, c, d] => Ok([[*a, *b], [*c, *d]]),
        _ => Err(usage("matrix", "expected a name or four integers `a,b,c,d`")),
    }
}

fn transform(kind: &str, matrix: &str, point: &Point, quad: &Quad, max: Option<f64>) -> Result<Outcome, Failure> {
    let tau = parse_complex("tau", &point.tau)?;
    let w = parse_complex("w", point.w.as_deref().ok_or_else(|| usage("w", "transform needs --w"))?)?;
    let kind_v = match kind {
        "psi" | "Psi" => CompletionKind::Psi,
        "phi" | "Phi" => CompletionKind::Phi,
        _ => return Err(usage("kind", format!("`{kind}` has no modular law here; use psi or phi"))),
    };
    let m = parse_matrix(matrix)?;
    let nu = eichler::eta_multiplier(m).map_err(|e| from_error("matrix", e))?;
    let cfg = quad.config()?;
    let r = eichler::modular_residual(&kind_v, m, tau, w, &cfg).map_err(|e| from_error("transform", e))?;
    let ok = max.is_none_or(|b| r <= b);
    Ok(Outcome {
        code: if ok { EXIT_OK } else { EXIT_FAILED },
        json: json!({
            "kind": kind,
            "matrix": m,
            "tau": c64_json(tau),
            "w": c64_json(w),
            "multiplier": c64_json(nu.value),
            "word": nu.word,
            "residual": r,
        }),
        human: format!("{kind} under {m:?} at ({tau}, {w}): residual {r:.3e}, ν_η = {}", nu.value),
    })
}

fn zhat(graph: &PathBuf, n: u32, a: Option<&str>, check: bool) -> Result<Outcome, Failure> {
    let g = PlumbingGraph::from_json(&read("graph", graph)?).map_err(|e| from_error("graph", e))?;
    let a = a.map(|s| parse_ints("a", s)).transpose()?;
    let lm = invariants::linking_matrix(&g);
    let order = order_of(n);
    let s = invariants::zhat_series(&g, a.as_deref(), order).map_err(|e| from_error("graph", e))?;
    let mut rec = json!({
        "linking_matrix": serde_json::to_value(&lm).expect("matrix serializes"),
        "zhat": series_json(&s),
    });
    let mut human = format!("det M = {}\nẐ = {s}", lm.det);
    let mut code = EXIT_OK;
    if check {
        let t = invariants::zhat_series_reordered(&g, a.as_deref(), order).map_err(|e| from_error("graph", e))?;
        let mismatch = s.first_difference(&t);
        rec["pipelines_agree"] = json!(mismatch.is_none());
        match mismatch {
            None => human += "\nsecond enumeration agrees",
            Some(e) => {
                code = EXIT_FAILED;
                human += &format!("\nsecond enumeration differs at q^{}", format_exp(e));
            }
        }
    }
    Ok(Outcome { code, json: rec, human })
}

fn fsqe(spec: &PathBuf, n: u32, tau: Option<&str>, quad: &Quad) -> Result<Outcome, Failure> {
    let inp = FsqeInput::from_json(&read("spec", spec)?).map_err(|e| from_error("spec", e))?;
    let warnings = inp.validate().map_err(|e| from_error("spec", e))?;
    let order = order_of(n);
    let s = invariants::fsqe_series(&inp, order).map_err(|e| from_error("spec", e))?;
    let sym = invariants::fsqe_symmetrized(&inp, order).map_err(|e| from_error("spec", e))?;
    let agree = s == sym;
    let mut rec = json!({
        "series": series_json(&s),
        "symmetrized_agrees": agree,
        "warnings": warnings,
    });
    let mut human = format!("F = {s}\nsymmetrized form {}", if agree { "agrees" } else { "DIFFERS" });
    for w in &warnings {
        human += &format!("\nwarning: {w}");
    }
    if let Some(t) = tau {
        let t = parse_complex("tau", t)?;
        let r = invariants::verify_integral_form(&inp, t, &quad.config()?).map_err(|e| from_error("tau", e))?;
        human += &format!("\nseries {} vs integral {}: residual {:.3e}", r.series, r.integral, r.residual);
        rec["integral_check"] = serde_json::to_value(&r).expect("report serializes");
    }
    Ok(Outcome { code: if agree { EXIT_OK } else { EXIT_FAILED }, json: rec, human })
}

fn check_precision() -> Result<(), Failure> {
    match std::env::var(PRECISION_ENV) {
        Err(_) => Ok(()),
        Ok(v) if v == "double" => Ok(()),
        Ok(v) => Err(usage(PRECISION_ENV, format!("unsupported precision mode `{v}`; only `double` is available"))),
    }
}

pub fn dispatch(cli: &Cli) -> Result<Outcome, Failure> {
    check_precision()?;
    match &cli.command {
        Command::Expand { series, n, params } => expand(series, *n, params),
        Command::Verify { which, n } => verify(which, *n),
        Command::Eval { series, completion, point, params, quad } => {
            eval(series.as_deref(), completion.as_deref(), point, params, quad)
        }
        Command::Transform { kind, matrix, point, quad, max_residual } => {
            transform(kind, matrix, point, quad, *max_residual)
        }
        Command::Zhat { graph, n, a, check } => zhat(graph, *n, a.as_deref(), *check),
        Command::Fsqe { spec, n, tau, quad } => fsqe(spec, *n, tau.as_deref(), quad),
    }
}

/// Parses `args`, runs the verb and renders the report; returns the exit status and the text
/// meant for stdout.
pub fn run<I, T>(args: I) -> (i32, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return (code, e.to_string());
        }
    };
    let (code, text) = match dispatch(&cli) {
        Ok(o) => {
            let text = match cli.format {
                Format::Human => o.human,
                Format::Json => serde_json::to_string_pretty(&o.json).expect("json renders"),
            };
            (o.code, text)
        }
        Err(f) => return (f.code, format!("error: {}", f.message)),
    };
    match &cli.output {
        Some(p) => match std::fs::write(p, format!("{text}\n")) {
            Ok(()) => (code, String::new()),
            Err(e) => (EXIT_USAGE, format!("error: output: {}: {e}", p.display())),
        },
        None => (code, text),
    }
}
