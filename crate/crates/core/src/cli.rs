//! Command-line front end: argument and config resolution, dispatch, and
//! CSV/JSON emission.
//!
//! Every value flag is also a config-file key (`alpha = 2`, `max-k = 10`).
//! Precedence is flag > config > default; the seed additionally honours
//! `TRICOMI_SEED` between the flag and the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, ErrorClass};
use crate::fixed_point::{
    apply_t, integral_identity_check, iterate_to_fixed_point, ode_residuals, C1Function,
};
use crate::lab::{dyadic_schedule, run_study, ConvergenceReport, StudyConfig, StudyVariant};
use crate::noise::{
    cell_integrals, h_norm_variance, l2_variance, mollified_h, mollified_kernel, mollified_l2,
    overlap_integral, sample_brownian, sample_fbm, truncated_lower_variance, MollifierFamily,
    MollifierSpec, NoisePath, Variance,
};
use crate::quadrature::pairwise_sum;
use crate::solvers::{
    residual_oracle, solve_lower_order, solve_mc, solve_quadrature, solve_wave_lower, GridField,
    InitialVelocity, PdeVariant,
};
use crate::tricomi::{make_params, xi, KernelSpec, KernelVariant};

pub const SEED_ENV: &str = "TRICOMI_SEED";
pub const DEFAULT_SEED: u64 = 42;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "tricomi", version, about = "Tricomi-type equations: solvers, fixed points and noise studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Deterministic solve on a (t, x) grid, with a PDE residual check.
    Solve(SolveArgs),
    /// Monte Carlo solve through the probabilistic representation.
    McSolve(McArgs),
    /// Check the similarity profile ξ against its ODEs and fixed-point map.
    XiVerify(XiArgs),
    /// Sample the noise-driven solution on a grid from one shared path.
    FieldSample(FieldArgs),
    /// Mollifier convergence study.
    Study(StudyArgs),
    /// Variance of the limit field at one point.
    Variance(VarianceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::McSolve(_) => "mc-solve",
            Command::XiVerify(_) => "xi-verify",
            Command::FieldSample(_) => "field-sample",
            Command::Study(_) => "study",
            Command::Variance(_) => "variance",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Solve(a) => &a.common,
            Command::McSolve(a) => &a.common,
            Command::XiVerify(a) => &a.common,
            Command::FieldSample(a) => &a.common,
            Command::Study(a) => &a.common,
            Command::Variance(a) => &a.common,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// Write <command>.csv / <command>.json here instead of stdout.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// csv, json or both (both needs --output-dir).
    #[arg(long)]
    pub format: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<String>,
    /// Include wall-clock timings in the JSON envelope.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PhiArgs {
    /// one, identity, square, cos or gaussian-bump.
    #[arg(long)]
    pub phi: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub amplitude: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub center: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub width: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// tricomi, tricomi-lower, wave or wave-lower.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[command(flatten)]
    pub phi: PhiArgs,
    /// A value or start:end:count.
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    /// A value or start:end:count.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[command(flatten)]
    pub phi: PhiArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    #[arg(long)]
    pub samples: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct XiArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// Horizon T.
    #[arg(long = "T", allow_hyphen_values = true)]
    pub horizon: Option<String>,
    /// Grid points on [0, T].
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long)]
    pub max_iter: Option<String>,
    /// Seed the iteration with ξ(t)(1 + p sin t).
    #[arg(long, allow_hyphen_values = true)]
    pub perturbation: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct FieldArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// Noise cell width.
    #[arg(long)]
    pub dx: Option<String>,
    /// white or fractional.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub hurst: Option<String>,
    /// Mollifier index; omit for the unmollified kernel.
    #[arg(long)]
    pub n: Option<String>,
    /// bump or poly-bump.
    #[arg(long)]
    pub family: Option<String>,
    /// Paths for the empirical variance/covariance check.
    #[arg(long)]
    pub paths: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub hurst: Option<String>,
    /// Schedule n = 2^k, k = 0..=max-k.
    #[arg(long)]
    pub max_k: Option<String>,
    /// Explicit comma-separated schedule; overrides max-k.
    #[arg(long)]
    pub n_values: Option<String>,
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub tolerance: Option<String>,
    /// true/false: run the Monte Carlo cross-check.
    #[arg(long)]
    pub empirical: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct VarianceArgs {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub hurst: Option<String>,
    /// Truncation for the lower-order kernel's L² mass.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Argument => 2,
            ErrorClass::Numeric => 3,
            ErrorClass::Resource => 4,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn arg_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: msg.into(),
    }
}

fn io_err(what: &str, e: io::Error) -> CliError {
    CliError {
        code: 4,
        message: format!("{what}: {e}"),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses, runs and reports; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

// ---------------------------------------------------------------- config

/// Resolves each setting from flag, config file and default, and records
/// the result for the config echo.
struct Resolver {
    file: BTreeMap<String, String>,
    known: BTreeSet<String>,
    echo: Map<String, Value>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('_', "-")
}

/// Flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(format!("config line {}: duplicate key {key}", i + 1));
        }
    }
    Ok(out)
}

impl Resolver {
    fn new(path: Option<&Path>) -> CliResult<Self> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| arg_err(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text).map_err(arg_err)?
            }
        };
        Ok(Resolver {
            file,
            known: BTreeSet::new(),
            echo: Map::new(),
        })
    }

    fn raw(&mut self, key: &str, flag: &Option<String>) -> Option<String> {
        self.known.insert(key.to_string());
        flag.clone().or_else(|| self.file.get(key).cloned())
    }

    fn get<T: Serialize>(
        &mut self,
        key: &str,
        flag: &Option<String>,
        default: Option<T>,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> CliResult<Option<T>> {
        let v = match self.raw(key, flag) {
            Some(s) => Some(parse(s.trim()).map_err(|m| arg_err(format!("--{key}: {m}")))?),
            None => default,
        };
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
        }
        Ok(v)
    }

    fn f64(&mut self, key: &str, flag: &Option<String>, default: Option<f64>) -> CliResult<Option<f64>> {
        self.get(key, flag, default, parse_f64)
    }

    fn req_f64(&mut self, key: &str, flag: &Option<String>, default: f64) -> CliResult<f64> {
        Ok(self.f64(key, flag, Some(default))?.unwrap_or(default))
    }

    fn uint(&mut self, key: &str, flag: &Option<String>, default: u64) -> CliResult<u64> {
        Ok(self.get(key, flag, Some(default), parse_u64)?.unwrap_or(default))
    }

    fn grid(&mut self, key: &str, flag: &Option<String>, default: &str) -> CliResult<Vec<f64>> {
        let text = self.raw(key, flag).unwrap_or_else(|| default.to_string());
        let v = parse_grid(&text).map_err(|m| arg_err(format!("--{key}: {m}")))?;
        self.echo.insert(key.to_string(), Value::String(text.trim().to_string()));
        Ok(v)
    }

    /// Keys that only steer where and how output goes; never echoed.
    fn quiet(&mut self, key: &str, flag: &Option<String>) -> Option<String> {
        self.raw(key, flag)
    }

    fn finish(self) -> CliResult<Map<String, Value>> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(arg_err(format!(
                "unknown config key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(self.echo)
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("not finite: {s:?}"));
    }
    Ok(v)
}

fn parse_u64(s: &str) -> std::result::Result<u64, String> {
    s.parse().map_err(|_| format!("not a non-negative integer: {s:?}"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("not a boolean: {s:?}")),
    }
}

/// `v` or `start:end:count`.
pub fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![parse_f64(v)?]),
        [a, b, n] => {
            let (a, b) = (parse_f64(a)?, parse_f64(b)?);
            let n = parse_u64(n)? as usize;
            if n == 0 {
                return Err("grid count must be >= 1".into());
            }
            if n > 1 && !(b > a) {
                return Err("grid end must exceed start".into());
            }
            Ok(crate::solvers::linspace(a, b, n))
        }
        _ => Err(format!("expected a value or start:end:count, got {s:?}")),
    }
}

fn parse_choice<'a>(options: &'a [&'a str]) -> impl Fn(&str) -> std::result::Result<String, String> + 'a {
    move |s: &str| {
        if options.contains(&s) {
            Ok(s.to_string())
        } else {
            Err(format!("expected one of {}, got {s:?}", options.join(", ")))
        }
    }
}

const VARIANTS: &[&str] = &["tricomi", "tricomi-lower", "wave", "wave-lower"];
const PHIS: &[&str] = &["one", "identity", "square", "cos", "gaussian-bump"];
const FAMILIES: &[&str] = &["bump", "poly-bump"];
const NOISES: &[&str] = &["white", "fractional"];
const FORMATS: &[&str] = &["csv", "json", "both"];

fn study_variant(s: &str) -> StudyVariant {
    match s {
        "tricomi-lower" => StudyVariant::TricomiLower,
        "wave" => StudyVariant::Wave,
        "wave-lower" => StudyVariant::WaveLower,
        _ => StudyVariant::Tricomi,
    }
}

fn family(s: &str) -> MollifierFamily {
    if s == "poly-bump" {
        MollifierFamily::PolyBump
    } else {
        MollifierFamily::Bump
    }
}

fn resolve_phi(r: &mut Resolver, a: &PhiArgs) -> CliResult<InitialVelocity> {
    let name = r.get("phi", &a.phi, Some("gaussian-bump".to_string()), parse_choice(PHIS))?.unwrap();
    let amp = r.req_f64("amplitude", &a.amplitude, 1.0)?;
    let c = r.req_f64("center", &a.center, 0.0)?;
    let w = r.req_f64("width", &a.width, 1.0)?;
    if !(w > 0.0) {
        return Err(arg_err("--width must be positive"));
    }
    // amplitude and center apply to every preset, width to the bump
    let phi = match name.as_str() {
        "one" => InitialVelocity::new(format!("{amp}"), move |_| amp),
        "identity" => InitialVelocity::new(format!("{amp}*(y-{c})"), move |y| amp * (y - c)),
        "square" => InitialVelocity::new(format!("{amp}*(y-{c})^2"), move |y| amp * (y - c) * (y - c)),
        "cos" => InitialVelocity::new(format!("{amp}*cos(y-{c})"), move |y| amp * (y - c).cos()),
        _ => InitialVelocity::gaussian_bump(amp, c, w),
    };
    Ok(phi)
}

fn missing(sub: &str, key: &str) -> CliError {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(sub)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    arg_err(format!("missing required --{key}\n\n{usage}"))
}

fn kernel_variant(variant: &str, alpha: Option<f64>, sub: &str) -> CliResult<KernelVariant> {
    Ok(match variant {
        "tricomi" => {
            let a = alpha.ok_or_else(|| missing(sub, "alpha"))?;
            KernelVariant::TricomiAlpha(make_params(a)?)
        }
        "tricomi-lower" => KernelVariant::TricomiLower,
        "wave" => KernelVariant::Wave,
        _ => KernelVariant::WaveLower,
    })
}

// ---------------------------------------------------------------- output

/// A CSV table with a fixed header.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
}

pub fn to_json_bytes(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter);
    v.serialize(&mut ser).expect("serializing a Value cannot fail");
    out.push(b'\n');
    out
}

pub fn to_csv_bytes(t: &Table) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&t.header).map_err(|e| arg_err(e.to_string()))?;
    for r in &t.rows {
        w.write_record(r).map_err(|e| arg_err(e.to_string()))?;
    }
    w.into_inner().map_err(|e| arg_err(e.to_string()))
}

struct Outcome {
    table: Table,
    payload: Value,
    code: i32,
}

fn execute(cmd: &Command) -> CliResult<i32> {
    let common = cmd.common().clone();
    let name = cmd.name();
    let mut r = Resolver::new(common.config.as_deref())?;

    let env_seed = std::env::var(SEED_ENV).ok();
    let seed_src = common.seed.clone().or(env_seed);
    let seed = r.get("seed", &seed_src, Some(DEFAULT_SEED), parse_u64)?.unwrap();
    let format = r.quiet("format", &common.format).unwrap_or_else(|| "json".into());
    parse_choice(FORMATS)(&format).map_err(|m| arg_err(format!("--format: {m}")))?;
    let output_dir = common
        .output_dir
        .clone()
        .or_else(|| r.quiet("output-dir", &None).map(PathBuf::from));
    let threads = match r.quiet("threads", &common.threads) {
        Some(s) => {
            let n = parse_u64(&s).map_err(|m| arg_err(format!("--threads: {m}")))?;
            if n == 0 {
                return Err(arg_err("--threads must be >= 1"));
            }
            Some(n as usize)
        }
        None => None,
    };
    if format == "both" && output_dir.is_none() {
        return Err(arg_err("--format both needs --output-dir"));
    }

    let start = Instant::now();
    let body = |r: &mut Resolver| -> CliResult<Outcome> {
        match cmd {
            Command::Solve(a) => cmd_solve(r, a),
            Command::McSolve(a) => cmd_mc_solve(r, a, seed),
            Command::XiVerify(a) => cmd_xi_verify(r, a),
            Command::FieldSample(a) => cmd_field_sample(r, a, seed),
            Command::Study(a) => cmd_study(r, a, seed),
            Command::Variance(a) => cmd_variance(r, a),
        }
    };
    let outcome = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError {
                    code: 4,
                    message: format!("cannot start {n} threads: {e}"),
                })?;
            pool.install(|| body(&mut r))?
        }
        None => body(&mut r)?,
    };
    let config = r.finish()?;

    let mut env = Map::new();
    env.insert("tool_version".into(), Value::String(TOOL_VERSION.into()));
    env.insert("command".into(), Value::String(name.into()));
    env.insert("config".into(), Value::Object(config));
    if common.timings {
        env.insert("timings".into(), json!({ "total_seconds": start.elapsed().as_secs_f64() }));
    }
    env.insert("payload".into(), outcome.payload);
    let json_bytes = to_json_bytes(&Value::Object(env));
    let csv_bytes = to_csv_bytes(&outcome.table)?;

    match output_dir {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(|e| io_err(&format!("cannot create {}", dir.display()), e))?;
            if format != "json" {
                let p = dir.join(format!("{name}.csv"));
                fs::write(&p, &csv_bytes).map_err(|e| io_err(&format!("cannot write {}", p.display()), e))?;
            }
            if format != "csv" {
                let p = dir.join(format!("{name}.json"));
                fs::write(&p, &json_bytes).map_err(|e| io_err(&format!("cannot write {}", p.display()), e))?;
            }
        }
        None => {
            let bytes = if format == "csv" { &csv_bytes } else { &json_bytes };
            io::stdout().write_all(bytes).map_err(|e| io_err("stdout", e))?;
        }
    }
    Ok(outcome.code)
}

fn variance_json(v: Variance) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

// ---------------------------------------------------------------- commands

fn cmd_solve(r: &mut Resolver, a: &SolveArgs) -> CliResult<Outcome> {
    let variant = r.get("variant", &a.variant, Some("tricomi".to_string()), parse_choice(VARIANTS))?.unwrap();
    let alpha = if variant == "tricomi" {
        Some(r.f64("alpha", &a.alpha, None)?.ok_or_else(|| missing("solve", "alpha"))?)
    } else {
        r.f64("alpha", &a.alpha, None)?
    };
    let phi = resolve_phi(r, &a.phi)?;
    let ts = r.grid("t", &a.t, "1")?;
    let xs = r.grid("x", &a.x, "0")?;
    let params = make_params(if variant == "tricomi" { alpha.unwrap_or(0.0) } else { 0.0 })?;
    let field = GridField::tabulate(ts.clone(), xs.clone(), |t, x| match variant.as_str() {
        "tricomi" | "wave" => solve_quadrature(&params, &phi, t, x),
        "tricomi-lower" => solve_lower_order(&phi, t, x),
        _ => solve_wave_lower(&phi, t, x),
    })?;
    let pde = match variant.as_str() {
        "tricomi" => PdeVariant::Tricomi,
        "tricomi-lower" => PdeVariant::TricomiLower,
        "wave" => PdeVariant::Wave,
        _ => PdeVariant::WaveLower,
    };
    let residual = if ts.len() >= 3 && xs.len() >= 3 {
        let rep = residual_oracle(&field, pde, params.alpha)?;
        json!({
            "max_abs_residual": rep.max_abs_residual,
            "dt": rep.dt,
            "dx": rep.dx,
            "rows_checked": [rep.interior_t.0, rep.interior_t.1],
            "columns_checked": [rep.interior_x.0, rep.interior_x.1],
        })
    } else {
        Value::Null
    };
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (it, &t) in ts.iter().enumerate() {
        for (ix, &x) in xs.iter().enumerate() {
            let u = field.get(it, ix);
            rows.push(vec![fmt_f64(t), fmt_f64(x), fmt_f64(u)]);
            points.push(json!({ "t": t, "x": x, "u": u }));
        }
    }
    let mut payload = json!({
        "variant": variant,
        "phi": phi.description,
        "points": points,
        "residual": residual,
    });
    if field.values.len() == 1 {
        payload["u"] = json!(field.values[0]);
    }
    Ok(Outcome {
        table: Table {
            header: vec!["t", "x", "u"],
            rows,
        },
        payload,
        code: 0,
    })
}

fn cmd_mc_solve(r: &mut Resolver, a: &McArgs, seed: u64) -> CliResult<Outcome> {
    let alpha = r.f64("alpha", &a.alpha, None)?.ok_or_else(|| missing("mc-solve", "alpha"))?;
    let phi = resolve_phi(r, &a.phi)?;
    let t = r.req_f64("t", &a.t, 1.0)?;
    let x = r.req_f64("x", &a.x, 0.0)?;
    let samples = r.uint("samples", &a.samples, 100_000)?;
    let params = make_params(alpha)?;
    let mc = solve_mc(&params, &phi, t, x, samples, seed)?;
    let reference = solve_quadrature(&params, &phi, t, x)?;
    let z = if mc.std_error > 0.0 { (mc.estimate - reference) / mc.std_error } else { 0.0 };
    Ok(Outcome {
        table: Table {
            header: vec!["t", "x", "estimate", "std_error", "pairs", "quadrature"],
            rows: vec![vec![
                fmt_f64(t),
                fmt_f64(x),
                fmt_f64(mc.estimate),
                fmt_f64(mc.std_error),
                mc.pairs.to_string(),
                fmt_f64(reference),
            ]],
        },
        payload: json!({
            "phi": phi.description,
            "estimate": mc.estimate,
            "std_error": mc.std_error,
            "pairs": mc.pairs,
            "quadrature": reference,
            "z_score": z,
        }),
        code: 0,
    })
}

fn cmd_xi_verify(r: &mut Resolver, a: &XiArgs) -> CliResult<Outcome> {
    let alpha = r.f64("alpha", &a.alpha, None)?.ok_or_else(|| missing("xi-verify", "alpha"))?;
    let horizon = r.req_f64("T", &a.horizon, 0.5)?;
    let grid = r.uint("grid", &a.grid, 2049)? as usize;
    let tol = r.req_f64("tol", &a.tol, 1e-8)?;
    let max_iter = r.uint("max-iter", &a.max_iter, 1000)? as usize;
    let p = r.req_f64("perturbation", &a.perturbation, 0.0)?;
    if !(horizon > 0.0) {
        return Err(Error::Domain {
            func: "xi-verify",
            arg: horizon,
            domain: "T in (0, inf)",
        }
        .into());
    }
    let params = make_params(alpha)?;
    let xi_fn = C1Function::xi(&params, horizon, grid)?;
    let (r1, r2) = ode_residuals(&params, &xi_fn)?;
    let image = apply_t(&params, &xi_fn)?;
    let map_gap = image.function.derivative_gap(&xi_fn);
    let identity_gap = integral_identity_check(&params, &xi_fn, horizon)?;
    let beta = params.beta();
    let seed_fn = C1Function::from_fn(
        horizon,
        grid,
        |t| xi(&params, t).unwrap_or(0.0) * (1.0 + p * t.sin()),
        |t| t.powf(beta - 1.0) * (1.0 + p * t.sin()) + xi(&params, t).unwrap_or(0.0) * p * t.cos(),
    )?;
    let (result, report, failure, code) = match iterate_to_fixed_point(&params, &seed_fn, horizon, tol, max_iter) {
        Ok((g, rep)) => {
            let code = if rep.converged { 0 } else { 3 };
            (Some(g), rep, None, code)
        }
        Err(Error::NonContraction { report, .. }) => (None, *report, Some("non-contraction"), 3),
        Err(e) => return Err(e.into()),
    };
    let distance = result.as_ref().map(|g| g.derivative_gap(&xi_fn));
    let g = result.as_ref().unwrap_or(&seed_fn);
    let rows = (0..xi_fn.len())
        .map(|i| {
            vec![
                fmt_f64(xi_fn.t(i)),
                fmt_f64(xi_fn.values[i]),
                fmt_f64(xi_fn.derivatives[i]),
                fmt_f64(g.values[i]),
                fmt_f64(g.derivatives[i]),
            ]
        })
        .collect();
    let gap = report.gaps.last().copied();
    if let Some(f) = failure {
        eprintln!("error: fixed-point iteration stopped ({f}) after {} updates", report.iterations);
    }
    Ok(Outcome {
        table: Table {
            header: vec!["t", "xi", "xi_prime", "g", "g_prime"],
            rows,
        },
        payload: json!({
            "alpha": alpha,
            "T": horizon,
            "dt": xi_fn.dt(),
            "ode_residuals": { "first_order": r1, "second_order": r2 },
            "map_gap_at_xi": map_gap,
            "identity_gap": identity_gap,
            "converged": report.converged,
            "gap": gap,
            "distance_to_xi": distance,
            "failure": failure,
            "contraction": report,
        }),
        code,
    })
}

/// Weights w_i such that U = Σ w_i ΔB_i / dx reproduces the cell average of
/// the kernel (or the mollified kernel at the midpoint when n is given).
fn field_weights(kernel: &KernelSpec, spec: Option<&MollifierSpec>, x_min: f64, dx: f64, cells: usize) -> CliResult<Vec<(usize, f64)>> {
    Ok(match spec {
        None => cell_integrals(kernel, x_min, dx, cells)?
            .into_iter()
            .map(|(i, v)| (i, v / dx))
            .collect(),
        Some(m) => {
            let s = kernel.support();
            let lo = (((s.lo - m.radius - x_min) / dx).floor().max(0.0)) as usize;
            let hi = ((((s.hi + m.radius - x_min) / dx).ceil().max(0.0)) as usize).min(cells);
            (lo..hi)
                .into_par_iter()
                .map(|i| mollified_kernel(kernel, m, x_min + (i as f64 + 0.5) * dx).map(|v| (i, v)))
                .collect::<crate::error::Result<Vec<_>>>()?
                .into_iter()
                .filter(|(_, v)| *v != 0.0)
                .collect()
        }
    })
}

fn apply_weights(w: &[(usize, f64)], path: &NoisePath) -> f64 {
    w.iter().map(|&(i, v)| v * path.increments[i]).sum()
}

fn cmd_field_sample(r: &mut Resolver, a: &FieldArgs, seed: u64) -> CliResult<Outcome> {
    let variant = r.get("variant", &a.variant, Some("tricomi".to_string()), parse_choice(VARIANTS))?.unwrap();
    let alpha = r.f64("alpha", &a.alpha, if variant == "tricomi" { None } else { Some(0.0) })?;
    let kv = kernel_variant(&variant, alpha, "field-sample")?;
    let ts = r.grid("t", &a.t, "1")?;
    let xs = r.grid("x", &a.x, "0")?;
    let dx = r.req_f64("dx", &a.dx, 1e-3)?;
    let noise = r.get("noise", &a.noise, Some("white".to_string()), parse_choice(NOISES))?.unwrap();
    let hurst = r.f64("hurst", &a.hurst, None)?;
    let n = r.get("n", &a.n, None, parse_u64)?;
    let fam = r.get("family", &a.family, Some("bump".to_string()), parse_choice(FAMILIES))?.unwrap();
    let paths = r.get("paths", &a.paths, None, parse_u64)?;
    if !(dx > 0.0) {
        return Err(arg_err("--dx must be positive"));
    }
    let h = match (noise.as_str(), hurst) {
        ("white", None) => None,
        ("white", Some(_)) => return Err(arg_err("--hurst needs --noise fractional")),
        (_, None) => return Err(arg_err("--noise fractional needs --hurst")),
        (_, Some(h)) => {
            if !(h > 0.5 && h < 1.0) {
                return Err(Error::Domain {
                    func: "field-sample",
                    arg: h,
                    domain: "H in (0.5, 1)",
                }
                .into());
            }
            Some(h)
        }
    };
    if let Some(p) = paths {
        if p < 2 {
            return Err(arg_err("--paths must be >= 2"));
        }
    }
    let spec = n.map(|n| MollifierSpec::new(family(&fam), n)).transpose()?;
    let kernels = ts
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| (t, x)))
        .map(|(t, x)| KernelSpec::new(kv, t, x))
        .collect::<crate::error::Result<Vec<_>>>()?;

    // the window holds every support with a unit margin, rounded to whole cells
    let reach = kernels
        .iter()
        .map(|k| k.x.abs() + k.radius())
        .fold(0.0f64, f64::max)
        + spec.map_or(0.0, |s| s.radius)
        + 1.0;
    let half = (reach / dx).ceil();
    if 2.0 * half > crate::noise::MAX_CELLS as f64 {
        return Err(Error::Resource(format!("{} cells exceed the limit", 2.0 * half)).into());
    }
    let r_window = half * dx;
    let cells = 2 * half as usize;
    let x_min = -r_window;
    let weights = kernels
        .iter()
        .map(|k| field_weights(k, spec.as_ref(), x_min, dx, cells))
        .collect::<CliResult<Vec<_>>>()?;
    let draw = |s: u64| -> crate::error::Result<NoisePath> {
        match h {
            None => sample_brownian(r_window, dx, s),
            Some(h) => sample_fbm(r_window, dx, h, s),
        }
    };
    let path = draw(seed)?;
    let values: Vec<f64> = weights.iter().map(|w| apply_weights(w, &path)).collect();
    let rows = kernels
        .iter()
        .zip(&values)
        .map(|(k, v)| vec![fmt_f64(k.t), fmt_f64(k.x), fmt_f64(*v)])
        .collect();

    let stats = match paths {
        None => Value::Null,
        Some(p) => {
            let samples: Vec<Vec<f64>> = (0..p)
                .into_par_iter()
                .map(|i| draw(seed.wrapping_add(i)).map(|path| weights.iter().map(|w| apply_weights(w, &path)).collect()))
                .collect::<crate::error::Result<_>>()?;
            let m = p as f64;
            let moment = |f: &dyn Fn(&[f64]) -> f64| -> (f64, f64) {
                let xs: Vec<f64> = samples.iter().map(|s| f(s)).collect();
                let mean = pairwise_sum(&xs) / m;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
                (mean, (var / m).sqrt())
            };
            let analytic_var = |k: &KernelSpec| -> crate::error::Result<Variance> {
                match (h, spec) {
                    (None, None) => l2_variance(k),
                    (None, Some(s)) => Ok(Variance::Finite(mollified_l2(k, &s)?.variance)),
                    (Some(h), None) => h_norm_variance(k, h).map(Variance::Finite),
                    (Some(h), Some(s)) => Ok(Variance::Finite(mollified_h(k, &s, h)?.variance)),
                }
            };
            let mut pts = Vec::new();
            for (j, k) in kernels.iter().enumerate() {
                let (var, se) = moment(&|s: &[f64]| s[j] * s[j]);
                let (cov, cov_se) = moment(&|s: &[f64]| s[0] * s[j]);
                let discrete = match h {
                    None => Some(weights[j].iter().map(|(_, v)| v * v).sum::<f64>() * dx),
                    Some(_) => None,
                };
                let cov_ref = if h.is_none() && spec.is_none() {
                    Some(variance_json(overlap_integral(&kernels[0], k)?))
                } else {
                    None
                };
                pts.push(json!({
                    "t": k.t,
                    "x": k.x,
                    "empirical_variance": var,
                    "std_error": se,
                    "analytic_variance": variance_json(analytic_var(k)?),
                    "discrete_variance": discrete,
                    "empirical_covariance_with_first": cov,
                    "covariance_std_error": cov_se,
                    "overlap_integral_with_first": cov_ref,
                }));
            }
            json!({ "paths": p, "points": pts })
        }
    };
    Ok(Outcome {
        table: Table {
            header: vec!["t", "x", "value"],
            rows,
        },
        payload: json!({
            "variant": variant,
            "noise": noise,
            "dx": dx,
            "window": r_window,
            "values": values,
            "statistics": stats,
        }),
        code: 0,
    })
}

fn cmd_study(r: &mut Resolver, a: &StudyArgs, seed: u64) -> CliResult<Outcome> {
    let variant = r.get("variant", &a.variant, Some("tricomi".to_string()), parse_choice(VARIANTS))?.unwrap();
    let mut cfg = StudyConfig::new(study_variant(&variant));
    cfg.seed = seed;
    cfg.alpha = r.req_f64("alpha", &a.alpha, cfg.alpha)?;
    cfg.t = r.req_f64("t", &a.t, cfg.t)?;
    cfg.x = r.req_f64("x", &a.x, cfg.x)?;
    let fam = r.get("family", &a.family, Some("bump".to_string()), parse_choice(FAMILIES))?.unwrap();
    cfg.family = family(&fam);
    let noise = r.get("noise", &a.noise, Some("white".to_string()), parse_choice(NOISES))?.unwrap();
    let hurst = r.f64("hurst", &a.hurst, None)?;
    cfg.hurst = match (noise.as_str(), hurst) {
        ("white", None) => None,
        ("white", Some(_)) => return Err(arg_err("--hurst needs --noise fractional")),
        (_, None) => return Err(arg_err("--noise fractional needs --hurst")),
        (_, Some(h)) => Some(h),
    };
    let max_k = r.uint("max-k", &a.max_k, crate::lab::DEFAULT_MAX_K as u64)?;
    if max_k > 40 {
        return Err(arg_err("--max-k must be <= 40"));
    }
    cfg.n_values = match r.get("n-values", &a.n_values, None, |s| {
        s.split(',').map(|p| parse_u64(p.trim())).collect::<std::result::Result<Vec<u64>, String>>()
    })? {
        Some(v) => v,
        None => dyadic_schedule(max_k as u32),
    };
    cfg.paths = r.uint("paths", &a.paths, cfg.paths as u64)? as usize;
    cfg.tolerance = r.req_f64("tolerance", &a.tolerance, cfg.tolerance)?;
    cfg.empirical = r.get("empirical", &a.empirical, Some(true), parse_bool)?.unwrap();
    let report: ConvergenceReport = run_study(&cfg)?;
    let rows = (0..report.curve.n_values.len())
        .map(|i| {
            vec![
                report.curve.n_values[i].to_string(),
                fmt_f64(report.curve.r_values[i]),
                fmt_f64(report.curve.variances[i]),
                report.gaps[i].map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    Ok(Outcome {
        table: Table {
            header: vec!["n", "r_n", "variance", "gap"],
            rows,
        },
        payload: serde_json::to_value(&report).unwrap_or(Value::Null),
        code: 0,
    })
}

fn cmd_variance(r: &mut Resolver, a: &VarianceArgs) -> CliResult<Outcome> {
    let variant = r.get("variant", &a.variant, Some("tricomi".to_string()), parse_choice(VARIANTS))?.unwrap();
    let alpha = r.f64("alpha", &a.alpha, if variant == "tricomi" { None } else { Some(0.0) })?;
    let kv = kernel_variant(&variant, alpha, "variance")?;
    let t = r.req_f64("t", &a.t, 1.0)?;
    let x = r.req_f64("x", &a.x, 0.0)?;
    let hurst = r.f64("hurst", &a.hurst, None)?;
    let eps = r.f64("eps", &a.eps, None)?;
    let n = r.get("n", &a.n, None, parse_u64)?;
    let fam = r.get("family", &a.family, Some("bump".to_string()), parse_choice(FAMILIES))?.unwrap();
    let k = KernelSpec::new(kv, t, x)?;
    let mut rows = Vec::new();
    let mut payload = Map::new();
    let l2 = l2_variance(&k)?;
    rows.push(vec!["l2".to_string(), l2.finite().map(fmt_f64).unwrap_or_else(|| "inf".into())]);
    payload.insert("l2".into(), variance_json(l2));
    if let Some(h) = hurst {
        let v = h_norm_variance(&k, h)?;
        rows.push(vec!["h_norm".into(), fmt_f64(v)]);
        payload.insert("h_norm".into(), json!(v));
    }
    if let Some(e) = eps {
        if !matches!(kv, KernelVariant::TricomiLower) {
            return Err(arg_err("--eps applies to the tricomi-lower variant"));
        }
        let v = truncated_lower_variance(t, e)?;
        rows.push(vec!["truncated_l2".into(), fmt_f64(v)]);
        payload.insert("truncated_l2".into(), json!(v));
    }
    if let Some(n) = n {
        let spec = MollifierSpec::new(family(&fam), n)?;
        let m = mollified_l2(&k, &spec)?;
        rows.push(vec!["mollified_l2".into(), fmt_f64(m.variance)]);
        payload.insert("mollified_l2".into(), json!(m.variance));
        if let Some(g) = m.gap {
            rows.push(vec!["mollified_l2_gap".into(), fmt_f64(g)]);
            payload.insert("mollified_l2_gap".into(), json!(g));
        }
        if let Some(h) = hurst {
            let mh = mollified_h(&k, &spec, h)?;
            rows.push(vec!["mollified_h".into(), fmt_f64(mh.variance)]);
            payload.insert("mollified_h".into(), json!(mh.variance));
            if let Some(g) = mh.gap {
                rows.push(vec!["mollified_h_gap".into(), fmt_f64(g)]);
                payload.insert("mollified_h_gap".into(), json!(g));
            }
        }
    }
    Ok(Outcome {
        table: Table {
            header: vec!["quantity", "value"],
            rows,
        },
        payload: Value::Object(payload),
        code: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("1.5").unwrap(), vec![1.5]);
        assert_eq!(parse_grid("-1:1:3").unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn config_lines() {
        let m = parse_config("# c\nalpha = 2\nmax_k=3 # trailing\n\n").unwrap();
        assert_eq!(m.get("alpha").unwrap(), "2");
        assert_eq!(m.get("max-k").unwrap(), "3");
        assert!(parse_config("alpha").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        let b = to_json_bytes(&json!({"a": 0.5, "b": [1, 2.0]}));
        assert_eq!(String::from_utf8(b).unwrap(), "{\"a\":5.0000000000000000e-1,\"b\":[1,2.0000000000000000e0]}\n");
    }

    #[test]
    fn csv_quoting() {
        let t = Table {
            header: vec!["a", "b"],
            rows: vec![vec!["x,y".into(), "q\"".into()]],
        };
        let s = String::from_utf8(to_csv_bytes(&t).unwrap()).unwrap();
        assert_eq!(s, "a,b\r\n\"x,y\",\"q\"\"\"\r\n");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::arg("x")).code, 2);
        assert_eq!(CliError::from(Error::Numeric("x".into())).code, 3);
        assert_eq!(CliError::from(Error::Resource("x".into())).code, 4);
    }
}
