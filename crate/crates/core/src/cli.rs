//! Config-driven front end: a TOML problem description, five commands, a
//! JSON report and an optional CSV table.
//!
//! ```toml
//! kappa = 1.0
//!
//! [expression]
//! kind = "schrodinger"
//! potential = { kind = "harmonic" }
//!
//! [interval]
//! a = 0.0
//! b = "+inf"
//!
//! [bc]
//! kind = "robin"
//! lambda_left = "dirichlet"
//!
//! [spectrum]
//! e_min = 0.5
//! e_max = 12.0
//! max_count = 3
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bcalg::{self, BoundaryCondition, RobinParam};
use crate::endpoints::{self, classify_endpoint, weyl_fastpath, DeficiencyReport, EndpointError, EndpointKind};
use crate::expr::{Coefficient, DifferentialExpression, ExprError, Table};
use crate::interval::{ext_f64, Interval, Side};
use crate::ode::{TailOptions, Tolerances};
use crate::spectral::{self, SpectralError, SpectralOptions, Spectrum};
use crate::verify::{self, ComplexPolynomial, ExpPolynomial, FormReport};
use crate::C64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NO_EXTENSION: i32 = 4;

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    #[default]
    Zero,
    Constant { value: f64 },
    Power { c: f64, p: f64 },
    Harmonic,
    InverseSquare { alpha: f64 },
    /// Two-column CSV `x,value`, path relative to the config file.
    Table { path: PathBuf },
    Sum { terms: Vec<CoefficientSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    /// Term `(−1)^k (f ψ^{(k)})^{(k)}`.
    pub k: usize,
    pub coefficient: CoefficientSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpressionSpec {
    Momentum,
    Schrodinger {
        #[serde(default)]
        potential: CoefficientSpec,
    },
    CustomEven {
        order: usize,
        terms: Vec<TermSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    #[serde(with = "ext_f64")]
    pub a: f64,
    #[serde(with = "ext_f64")]
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    pub e_min: f64,
    pub e_max: f64,
    pub max_count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub expression: ExpressionSpec,
    pub interval: IntervalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BoundaryCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("table {path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Canonical serialized form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(ConfigError::Invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid(format!("tau must be positive, got {t}")));
            }
        }
        self.interval()?;
        if let Some(s) = &self.spectrum {
            if !(s.e_min < s.e_max) || !s.e_min.is_finite() || !s.e_max.is_finite() {
                return Err(ConfigError::Invalid("spectrum needs finite e_min < e_max".into()));
            }
        }
        Ok(())
    }

    pub fn interval(&self) -> Result<Interval, ConfigError> {
        Interval::new(self.interval.a, self.interval.b).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Builds the expression; table paths are resolved against `base`.
    pub fn expression(&self, base: &Path) -> Result<DifferentialExpression, ConfigError> {
        let interval = self.interval()?;
        match &self.expression {
            ExpressionSpec::Momentum => Ok(DifferentialExpression::momentum()),
            ExpressionSpec::Schrodinger { potential } => {
                Ok(DifferentialExpression::schrodinger(build_coefficient(potential, base)?))
            }
            ExpressionSpec::CustomEven { order, terms } => {
                let even = terms
                    .iter()
                    .map(|t| Ok((t.k, build_coefficient(&t.coefficient, base)?)))
                    .collect::<Result<Vec<_>, ConfigError>>()?;
                let expr = DifferentialExpression::build_canonical(even, vec![], &interval)?;
                if expr.order() != *order {
                    return Err(ConfigError::Invalid(format!(
                        "terms give order {}, config says {order}",
                        expr.order()
                    )));
                }
                Ok(expr)
            }
        }
    }
}

fn build_coefficient(spec: &CoefficientSpec, base: &Path) -> Result<Coefficient, ConfigError> {
    Ok(match spec {
        CoefficientSpec::Zero => Coefficient::Zero,
        CoefficientSpec::Constant { value } => Coefficient::Constant(*value),
        CoefficientSpec::Power { c, p } => Coefficient::Power { c: *c, p: *p },
        CoefficientSpec::Harmonic => Coefficient::Harmonic,
        CoefficientSpec::InverseSquare { alpha } => Coefficient::InverseSquare { alpha: *alpha },
        CoefficientSpec::Table { path } => {
            let full = base.join(path);
            let bytes = std::fs::read(&full).map_err(|e| ConfigError::Table { path: full.clone(), message: e.to_string() })?;
            let table = Table::from_csv_bytes(&bytes).map_err(|e| ConfigError::Table { path: full, message: e.to_string() })?;
            Coefficient::Tabulated(Arc::new(table))
        }
        CoefficientSpec::Sum { terms } => {
            Coefficient::Sum(terms.iter().map(|t| build_coefficient(t, base)).collect::<Result<_, _>>()?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Classify,
    Deficiency,
    Extensions,
    Spectrum,
    Verify,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub max_x: Option<f64>,
    /// Directory against which table paths are resolved.
    pub base_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, max_x: None, base_dir: PathBuf::from(".") }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Value,
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ReportTolerances {
    ode_rtol: f64,
    ode_atol: f64,
    tail_rtol: f64,
    tail_far_cap: f64,
    scan_points: usize,
    root_rel_tol: f64,
    residual_tol: f64,
    max_x: f64,
}

struct Context {
    config: ProblemConfig,
    opts: RunOptions,
    tail: TailOptions,
    spectral: SpectralOptions,
}

impl Context {
    fn new(config: &ProblemConfig, opts: &RunOptions) -> Self {
        let solver = config.solver.unwrap_or_default();
        let mut tol = Tolerances::default();
        if let Some(r) = solver.rtol {
            tol.rtol = r;
        }
        if let Some(a) = solver.atol {
            tol.atol = a;
        }
        let max_x = opts.max_x.or(solver.max_x);
        let mut tail = TailOptions::default();
        let mut spectral = SpectralOptions { tol, ..Default::default() };
        if let Some(m) = max_x {
            tail.far_cap = m;
            spectral.max_x = m;
        }
        if let Some(p) = solver.scan_points {
            spectral.scan_points = p;
        }
        Self { config: config.clone(), opts: opts.clone(), tail, spectral }
    }

    fn tolerances(&self) -> ReportTolerances {
        ReportTolerances {
            ode_rtol: self.spectral.tol.rtol,
            ode_atol: self.spectral.tol.atol,
            tail_rtol: self.tail.tol.rtol,
            tail_far_cap: self.tail.far_cap,
            scan_points: self.spectral.scan_points,
            root_rel_tol: self.spectral.root_tol,
            residual_tol: self.spectral.residual_tol,
            max_x: self.spectral.max_x,
        }
    }

    /// τ used for abv columns: explicit, from the condition, or the length.
    fn tau(&self) -> f64 {
        if let Some(t) = self.config.tau {
            return t;
        }
        if let Some(BoundaryCondition::AbvUnitary { tau, .. }) = &self.config.bc {
            return *tau;
        }
        let iv = &self.config.interval;
        if iv.a.is_finite() && iv.b.is_finite() {
            iv.b - iv.a
        } else {
            1.0
        }
    }
}

struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, kind: "config", message: message.to_string() }
    }

    fn numerical(message: impl ToString) -> Self {
        Self { code: EXIT_NUMERICAL, kind: "numerical", message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

impl From<EndpointError> for Failure {
    fn from(e: EndpointError) -> Self {
        match e {
            EndpointError::BadKappa(_) | EndpointError::Expr(_) => Failure::config(e),
            _ => Failure::numerical(e),
        }
    }
}

impl From<SpectralError> for Failure {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::Ode(_) | SpectralError::NoDecayingBranch { .. } | SpectralError::NotEigenvalue { .. } => {
                Failure::numerical(e)
            }
            _ => Failure::config(e),
        }
    }
}

impl From<verify::VerifyError> for Failure {
    fn from(e: verify::VerifyError) -> Self {
        match e {
            verify::VerifyError::Expr(_) | verify::VerifyError::Bc(_) | verify::VerifyError::Segment(..) => {
                Failure::config(e)
            }
            _ => Failure::numerical(e),
        }
    }
}

struct Produced {
    code: i32,
    status: &'static str,
    result: Value,
    csv: Option<String>,
}

fn csv_table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn kind_name(k: EndpointKind) -> &'static str {
    match k {
        EndpointKind::Regular => "regular",
        EndpointKind::Singular => "singular",
    }
}

fn classify(expr: &DifferentialExpression, iv: &Interval) -> Produced {
    let side = |s: Side| {
        let kind = classify_endpoint(expr, iv, s);
        let e = iv.endpoint(s);
        let fastpath =
            if expr.is_schrodinger() && !e.is_finite() { weyl_fastpath(&expr.potential(), e > 0.0) } else { None };
        (e, kind, fastpath)
    };
    let (l, r) = (side(Side::Left), side(Side::Right));
    let loc = |v: f64| serde_json::to_value(ExtF64(v)).expect("serializable");
    let result = json!({
        "order": expr.order(),
        "even": expr.is_even(),
        "left": { "location": loc(l.0), "kind": l.1, "fastpath": l.2 },
        "right": { "location": loc(r.0), "kind": r.1, "fastpath": r.2 },
    });
    let fmt = |v: f64| if v.is_finite() { v.to_string() } else if v > 0.0 { "+inf".into() } else { "-inf".into() };
    let csv = csv_table(
        &["side", "location", "kind"],
        vec![
            vec!["left".into(), fmt(l.0), kind_name(l.1).into()],
            vec!["right".into(), fmt(r.0), kind_name(r.1).into()],
        ],
    );
    Produced { code: EXIT_OK, status: "ok", result, csv: Some(csv) }
}

#[derive(Serialize)]
struct ExtF64(#[serde(with = "ext_f64")] f64);

fn deficiency_csv(rep: &DeficiencyReport) -> String {
    let fmt = |v: f64| if v.is_finite() { v.to_string() } else if v > 0.0 { "+inf".into() } else { "-inf".into() };
    let row = |name: &str, e: &endpoints::EndpointInfo| {
        vec![name.into(), fmt(e.location), kind_name(e.kind).into(), e.counts.0.to_string(), e.counts.1.to_string()]
    };
    let mut rows = vec![row("left", &rep.left), row("right", &rep.right)];
    rows.push(vec!["global".into(), String::new(), String::new(), rep.global.0.to_string(), rep.global.1.to_string()]);
    csv_table(&["end", "location", "kind", "m_plus", "m_minus"], rows)
}

fn deficiency(ctx: &Context, expr: &DifferentialExpression, iv: &Interval) -> Result<Produced, Failure> {
    let rep = endpoints::deficiency_indices(expr, iv, ctx.config.kappa, &ctx.tail)?;
    let equal = rep.has_extensions();
    Ok(Produced {
        code: if equal { EXIT_OK } else { EXIT_NO_EXTENSION },
        status: if equal { "ok" } else { "no_self_adjoint_extension" },
        csv: Some(deficiency_csv(&rep)),
        result: serde_json::to_value(&rep).expect("serializable"),
    })
}

#[derive(Serialize)]
struct Preset {
    name: &'static str,
    bc: BoundaryCondition,
}

fn presets(expr: &DifferentialExpression, iv: &Interval, rep: &DeficiencyReport) -> Vec<Preset> {
    let both_regular = rep.left.kind == EndpointKind::Regular && rep.right.kind == EndpointKind::Regular;
    let n = expr.order();
    let mut out = Vec::new();
    if both_regular && n == 1 {
        out.push(Preset { name: "momentum_phase", bc: BoundaryCondition::MomentumPhase { vartheta: 0.0 } });
    } else if both_regular && n == 2 {
        out.push(Preset { name: "dirichlet", bc: BoundaryCondition::dirichlet() });
        out.push(Preset { name: "neumann", bc: BoundaryCondition::neumann() });
        out.push(Preset { name: "periodic", bc: BoundaryCondition::QuasiPeriodic { vartheta: 0.0 } });
        out.push(Preset { name: "antiperiodic", bc: BoundaryCondition::QuasiPeriodic { vartheta: std::f64::consts::PI } });
        out.push(Preset { name: "exotic", bc: BoundaryCondition::exotic(iv.length()) });
    } else if both_regular {
        out.push(Preset { name: "periodic", bc: BoundaryCondition::QuasiPeriodic { vartheta: 0.0 } });
    } else if n == 2 && rep.global == (1, 1) {
        let robin = |l: Option<RobinParam>, r: Option<RobinParam>| BoundaryCondition::Robin { lambda_left: l, lambda_right: r };
        if rep.left.kind == EndpointKind::Regular {
            out.push(Preset { name: "dirichlet", bc: robin(Some(RobinParam::Dirichlet), None) });
            out.push(Preset { name: "neumann", bc: robin(Some(RobinParam::Finite(0.0)), None) });
        } else if rep.right.kind == EndpointKind::Regular {
            out.push(Preset { name: "dirichlet", bc: robin(None, Some(RobinParam::Dirichlet)) });
            out.push(Preset { name: "neumann", bc: robin(None, Some(RobinParam::Finite(0.0))) });
        } else if let Some(alpha) = expr.potential().as_inverse_square().filter(|a| *a > 0.25 && iv.a == 0.0) {
            out.push(Preset {
                name: "singular_asymptotic",
                bc: BoundaryCondition::SingularAsymptotic { alpha, vartheta: 0.0, mu0: 1.0 },
            });
        }
    }
    out
}

fn extensions(ctx: &Context, expr: &DifferentialExpression, iv: &Interval) -> Result<Produced, Failure> {
    let rep = endpoints::deficiency_indices(expr, iv, ctx.config.kappa, &ctx.tail)?;
    let (mp, mm) = rep.global;
    if mp != mm {
        return Ok(Produced {
            code: EXIT_NO_EXTENSION,
            status: "no_self_adjoint_extension",
            result: json!({ "deficiency": rep, "family": Value::Null }),
            csv: Some(deficiency_csv(&rep)),
        });
    }
    let presets = presets(expr, iv, &rep);
    let bc_check = match &ctx.config.bc {
        None => Value::Null,
        Some(bc) => match bcalg::validate(bc, expr.order()) {
            Ok(()) => json!({ "valid": true }),
            Err(v) => {
                return Err(Failure::config(format!("boundary condition is not self-adjoint: {v}")));
            }
        },
    };
    let rows = presets.iter().map(|p| vec![p.name.to_string(), serde_json::to_string(&p.bc).expect("serializable")]).collect();
    Ok(Produced {
        code: EXIT_OK,
        status: "ok",
        csv: Some(csv_table(&["preset", "bc"], rows)),
        result: json!({
            "deficiency": rep,
            "family": format!("U({mp})"),
            "parameters": mp * mp,
            "presets": presets,
            "bc": bc_check,
        }),
    })
}

fn spectrum(ctx: &Context, expr: &DifferentialExpression, iv: &Interval) -> Result<Produced, Failure> {
    let bc = ctx.config.bc.as_ref().ok_or_else(|| Failure::config("spectrum needs a [bc] table"))?;
    let spec = ctx.config.spectrum.ok_or_else(|| Failure::config("spectrum needs a [spectrum] table"))?;
    let s: Spectrum = spectral::eigenvalues(expr, iv, bc, (spec.e_min, spec.e_max), spec.max_count, &ctx.spectral)?;
    let rows = s
        .eigenvalues
        .iter()
        .zip(&s.residuals)
        .enumerate()
        .map(|(i, (e, r))| vec![i.to_string(), e.to_string(), r.to_string()])
        .collect();
    Ok(Produced {
        code: EXIT_OK,
        status: "ok",
        csv: Some(csv_table(&["index", "eigenvalue", "residual"], rows)),
        result: serde_json::to_value(&s).expect("serializable"),
    })
}

const LAGRANGE_PAIRS: usize = 10;
const PROBE_SAMPLES: usize = 20;
const PROBE_TOL: f64 = 1e-9;

/// A segment around the anchor, a quarter of the way to the nearer end.
fn interior_segment(expr: &DifferentialExpression, iv: &Interval) -> Option<(f64, f64)> {
    let x0 = endpoints::regular_anchor(expr, iv)?;
    let room = (x0 - iv.a).min(iv.b - x0).min(4.0);
    Some((x0 - 0.25 * room, x0 + 0.25 * room))
}

fn run_verify(ctx: &Context, expr: &DifferentialExpression, iv: &Interval) -> Result<Produced, Failure> {
    let seg = interior_segment(expr, iv).ok_or_else(|| Failure::config("no regular interior segment"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.opts.seed);
    let mut pairs = Vec::with_capacity(LAGRANGE_PAIRS);
    for _ in 0..LAGRANGE_PAIRS {
        let mut f = || ExpPolynomial {
            poly: ComplexPolynomial::random(3, &mut rng),
            rate: C64::new(0.0, rng.random_range(-2.0..2.0)),
        };
        pairs.push((f(), f()));
    }
    let reports: Vec<FormReport> =
        pairs.iter().map(|(c, p)| verify::lagrange_check(expr, c, p, seg)).collect::<Result<_, _>>()?;
    let lagrange_ok = reports.iter().all(FormReport::passes);
    let worst = reports.iter().map(|r| r.discrepancy).fold(0.0, f64::max);

    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| vec!["lagrange".into(), i.to_string(), r.discrepancy.to_string(), r.passes().to_string()])
        .collect();
    let mut all_ok = lagrange_ok;
    let symmetry = match &ctx.config.bc {
        None => Value::Null,
        Some(bc) => {
            let valid = bcalg::validate(bc, expr.order());
            let d = verify::symmetry_probe(expr, iv, bc, PROBE_SAMPLES, ctx.opts.seed)?;
            let ok = d <= PROBE_TOL;
            all_ok &= ok;
            rows.push(vec!["symmetry_probe".into(), "0".into(), d.to_string(), ok.to_string()]);
            json!({
                "samples": PROBE_SAMPLES,
                "max_delta_star": d,
                "passed": ok,
                "validation": match valid { Ok(()) => Value::Null, Err(v) => json!(v.to_string()) },
            })
        }
    };
    let result = json!({
        "verify": {
            "lagrange": {
                "segment": seg,
                "pairs": LAGRANGE_PAIRS,
                "max_discrepancy": worst,
                "passed": lagrange_ok,
                "reports": reports,
            },
            "symmetry": symmetry,
            "passed": all_ok,
        }
    });
    Ok(Produced {
        code: if all_ok { EXIT_OK } else { EXIT_NUMERICAL },
        status: if all_ok { "ok" } else { "check_failed" },
        result,
        csv: Some(csv_table(&["check", "index", "value", "passed"], rows)),
    })
}

fn dispatch(ctx: &Context, command: Command) -> Result<Produced, Failure> {
    let iv = ctx.config.interval()?;
    let expr = ctx.config.expression(&ctx.opts.base_dir)?;
    expr.check_supported().map_err(Failure::config)?;
    match command {
        Command::Classify => Ok(classify(&expr, &iv)),
        Command::Deficiency => deficiency(ctx, &expr, &iv),
        Command::Extensions => extensions(ctx, &expr, &iv),
        Command::Spectrum => spectrum(ctx, &expr, &iv),
        Command::Verify => run_verify(ctx, &expr, &iv),
    }
}

/// Runs one command. The report always carries κ, τ, the tolerances, the
/// seed and the canonical configuration including the boundary condition.
pub fn run(config: &ProblemConfig, command: Command, opts: &RunOptions) -> RunOutcome {
    let ctx = Context::new(config, opts);
    let header = json!({
        "command": command,
        "kappa": config.kappa,
        "tau": ctx.tau(),
        "seed": opts.seed,
        "tolerances": ctx.tolerances(),
        "bc": config.bc,
        "config": config,
    });
    let mut report = header;
    let obj = report.as_object_mut().expect("object");
    match dispatch(&ctx, command) {
        Ok(p) => {
            obj.insert("status".into(), json!(p.status));
            obj.insert("exit_code".into(), json!(p.code));
            obj.insert("result".into(), p.result);
            RunOutcome { exit_code: p.code, report, csv: p.csv }
        }
        Err(f) => {
            obj.insert("status".into(), json!("error"));
            obj.insert("exit_code".into(), json!(f.code));
            obj.insert("error".into(), json!({ "kind": f.kind, "message": f.message }));
            RunOutcome { exit_code: f.code, report, csv: None }
        }
    }
}

/// Report for a config that could not be loaded.
pub fn config_failure(command: Command, err: &ConfigError) -> RunOutcome {
    let report = json!({
        "command": command,
        "status": "error",
        "exit_code": EXIT_CONFIG,
        "error": { "kind": "config", "message": err.to_string() },
    });
    RunOutcome { exit_code: EXIT_CONFIG, report, csv: None }
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    ProblemConfig::from_toml(&text)
}

/// Pretty JSON with a trailing newline.
pub fn render_report(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARMONIC: &str = r#"
[expression]
kind = "schrodinger"
potential = { kind = "harmonic" }

[interval]
a = 0
b = "+inf"

[bc]
kind = "robin"
lambda_left = "dirichlet"

[spectrum]
e_min = 0.5
e_max = 12.0
max_count = 3
"#;

    #[test]
    fn canonical_round_trip() {
        let cfg = ProblemConfig::from_toml(HARMONIC).unwrap();
        let once = cfg.to_toml();
        let again = ProblemConfig::from_toml(&once).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(once, again.to_toml());
    }

    #[test]
    fn harmonic_spectrum_csv() {
        let cfg = ProblemConfig::from_toml(HARMONIC).unwrap();
        let out = run(&cfg, Command::Spectrum, &RunOptions::default());
        assert_eq!(out.exit_code, 0, "{}", out.report);
        let csv = out.csv.unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("index,eigenvalue,residual"));
        let vals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 3);
        for (v, w) in vals.iter().zip([3.0, 7.0, 11.0]) {
            assert!((v - w).abs() < 1e-6);
        }
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn momentum_semiaxis_has_no_extension() {
        let cfg = ProblemConfig::from_toml(
            "[expression]\nkind = \"momentum\"\n[interval]\na = 0.0\nb = \"+inf\"\n",
        )
        .unwrap();
        let out = run(&cfg, Command::Extensions, &RunOptions::default());
        assert_eq!(out.exit_code, EXIT_NO_EXTENSION);
        assert_eq!(out.report["result"]["deficiency"]["global"], json!([1, 0]));
    }

    #[test]
    fn segment_family_is_u2() {
        let cfg = ProblemConfig::from_toml(
            "[expression]\nkind = \"schrodinger\"\n[interval]\na = 0.0\nb = 1.0\n",
        )
        .unwrap();
        let out = run(&cfg, Command::Extensions, &RunOptions::default());
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.report["result"]["family"], "U(2)");
        assert_eq!(out.report["result"]["parameters"], 4);
        assert_eq!(out.report["result"]["presets"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn config_errors() {
        assert!(ProblemConfig::from_toml("[expression]\nkind = \"schrodinger\"\npotential = { kind = \"cubic\" }\n[interval]\na = 0\nb = 1\n").is_err());
        assert!(ProblemConfig::from_toml("[expression]\nkind = \"momentum\"\n[interval]\na = 1\nb = 0\n").is_err());
        assert!(ProblemConfig::from_toml("kappa = -1\n[expression]\nkind = \"momentum\"\n[interval]\na = 0\nb = 1\n").is_err());
        // asymptotic condition at a regular end
        let cfg = ProblemConfig::from_toml(
            "[expression]\nkind = \"schrodinger\"\n[interval]\na = 0\nb = 1\n[bc]\nkind = \"singular_asymptotic\"\nalpha = 1.0\nvartheta = 0.0\nmu0 = 1.0\n[spectrum]\ne_min = 1\ne_max = 2\nmax_count = 1\n",
        )
        .unwrap();
        assert_eq!(run(&cfg, Command::Spectrum, &RunOptions::default()).exit_code, EXIT_CONFIG);
    }

    #[test]
    fn verify_report_passes_for_dirichlet() {
        let cfg = ProblemConfig::from_toml(
            "[expression]\nkind = \"schrodinger\"\n[interval]\na = 0\nb = 1\n[bc]\nkind = \"robin\"\nlambda_left = \"dirichlet\"\nlambda_right = \"dirichlet\"\n",
        )
        .unwrap();
        let out = run(&cfg, Command::Verify, &RunOptions { seed: 7, ..Default::default() });
        assert_eq!(out.exit_code, 0, "{}", out.report);
        assert_eq!(out.report["result"]["verify"]["passed"], true);
    }
}
