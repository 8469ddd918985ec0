//! `lamelab`: command-line driver for the solvers and checkers of the `lamelab` crate.

mod commands;
mod config;
mod verify;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lamelab::C64;
use serde_json::{json, Value};

use config::{parse_complex, Command, RunConfig};

/// Double-Bloch eigenfunctions of generalized Lamé operators.
///
/// Results are written as JSON (complex numbers as [re, im]) to stdout or
/// `--output`; a one-line summary goes to stderr. Exit status 2 means invalid
/// input, 3 a numerical failure. LAMELAB_THREADS caps the worker count.
#[derive(Parser, Debug)]
#[command(name = "lamelab", version)]
struct Cli {
    /// JSON run configuration; flags given on the command line override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// θ[α;β](z | mult·τ) and its z-derivatives.
    Theta(Flags),
    /// ℘(z) and its derivatives.
    Wp(Flags),
    /// Quasi-invariance of a catalog potential on all its hyperplanes.
    QuasiinvCheck(Flags),
    /// Solve the one-dimensional locus equations from initial poles.
    LocusSolve(Flags),
    /// All non-trivial points of the continuous B2 variety over (a1, a2).
    B2Variety(Flags),
    /// Eigen-residual and Floquet multipliers of a continuous B2 Bloch solution.
    B2Eigen(Flags),
    /// All points of the difference B2 variety over (a1, a2) at step omega.
    Qb2Variety(Flags),
    /// Eigen-residuals of L and L1 on a difference B2 Bloch solution.
    Qb2Eigen(Flags),
    /// Convergence of the difference variety to the continuous one as omega shrinks.
    Qb2Limit(Flags),
    /// Bloch solution of the continuous Hietarinta operator.
    HietEigen(Flags),
    /// Bloch solution of the difference Hietarinta operator.
    HietqEigen(Flags),
    /// Quantized B2 bound state for the label k = (iπm, iπn); τ purely imaginary.
    Spectrum(Flags),
    /// Recompute the residuals recorded in a JSON result file.
    VerifyFile(Flags),
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::Theta(f) => (Command::Theta, f),
            Sub::Wp(f) => (Command::Wp, f),
            Sub::QuasiinvCheck(f) => (Command::QuasiinvCheck, f),
            Sub::LocusSolve(f) => (Command::LocusSolve, f),
            Sub::B2Variety(f) => (Command::B2Variety, f),
            Sub::B2Eigen(f) => (Command::B2Eigen, f),
            Sub::Qb2Variety(f) => (Command::Qb2Variety, f),
            Sub::Qb2Eigen(f) => (Command::Qb2Eigen, f),
            Sub::Qb2Limit(f) => (Command::Qb2Limit, f),
            Sub::HietEigen(f) => (Command::HietEigen, f),
            Sub::HietqEigen(f) => (Command::HietqEigen, f),
            Sub::Spectrum(f) => (Command::Spectrum, f),
            Sub::VerifyFile(f) => (Command::VerifyFile, f),
        }
    }
}

/// Complex values are written `x+yi`, `yi`, `x` or `x,y`. Vector arguments are repeated.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Input file of verify-file.
    file: Option<PathBuf>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    tau: Option<C64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    omega: Option<C64>,
    /// Step sizes for qb2-limit (default 0.05 and 0.025).
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    omegas: Vec<C64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    z: Option<C64>,
    /// a1, a2 (repeat the flag); drawn from the seed when absent.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    a: Vec<C64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    k: Vec<C64>,
    /// b12, b23 (b31 follows) or all three.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    b: Vec<C64>,
    /// a1², a2², a3² of the Hietarinta operator (default the cube roots of unity).
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    a_sq: Vec<C64>,
    /// Free parameter of the Hietarinta family.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    t: Option<C64>,
    #[arg(long, allow_hyphen_values = true)]
    m: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    n: Option<i64>,
    /// Catalog entry without parameters, e.g. B2_CM.
    #[arg(long)]
    name: Option<String>,
    /// Catalog entry as JSON, e.g. '{"name":"A","n":3,"m":2}'.
    #[arg(long)]
    entry: Option<String>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    poles: Vec<C64>,
    #[arg(long)]
    mults: Vec<u32>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    mult: Option<u32>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// CSV file for the grid of the symmetrized state (spectrum).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Record the wall time in the manifest.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    tol_variety: Option<f64>,
    #[arg(long)]
    tol_eigen: Option<f64>,
    #[arg(long)]
    tol_q_eigen: Option<f64>,
    #[arg(long)]
    tol_verify: Option<f64>,
}

#[derive(Debug)]
pub enum Failure {
    Lib(lamelab::Error),
    Invalid(String),
    Io(String),
    Mismatch(String),
}

impl Failure {
    pub fn invalid(msg: String) -> Self {
        Failure::Invalid(msg)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }

    pub fn mismatch(msg: String) -> Self {
        Failure::Mismatch(msg)
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Lib(e) => e.kind(),
            Failure::Invalid(_) => "InvalidConfig",
            Failure::Io(_) => "Io",
            Failure::Mismatch(_) => "VerifyMismatch",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Lib(e) if !e.is_validation() => 3,
            Failure::Mismatch(_) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Invalid(m) | Failure::Io(m) | Failure::Mismatch(m) => f.write_str(m),
        }
    }
}

impl From<lamelab::Error> for Failure {
    fn from(e: lamelab::Error) -> Self {
        Failure::Lib(e)
    }
}

fn load_config(cli: Cli) -> Result<RunConfig, Failure> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            Some(
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let (mut cfg, f) = match (base, cli.command) {
        (base, Some(sub)) => {
            let (command, f) = sub.split();
            let mut cfg = base.unwrap_or_else(|| RunConfig::new(command));
            cfg.command = command;
            (cfg, f)
        }
        (Some(cfg), None) => (cfg, Flags::default()),
        (None, None) => return Err(Failure::invalid("a subcommand or --config is required".into())),
    };
    let vec = |v: Vec<C64>| if v.is_empty() { None } else { Some(v) };
    if let Some(v) = f.tau {
        cfg.tau = v;
    }
    cfg.omega = f.omega.or(cfg.omega);
    cfg.omegas = vec(f.omegas).or(cfg.omegas);
    cfg.z = f.z.or(cfg.z);
    cfg.a = vec(f.a).or(cfg.a);
    cfg.k = vec(f.k).or(cfg.k);
    cfg.b = vec(f.b).or(cfg.b);
    cfg.a_sq = vec(f.a_sq).or(cfg.a_sq);
    cfg.t = f.t.or(cfg.t);
    cfg.poles = vec(f.poles).or(cfg.poles);
    if !f.mults.is_empty() {
        cfg.mults = Some(f.mults);
    }
    match (f.m, f.n) {
        (Some(m), Some(n)) => cfg.label = Some((m, n)),
        (None, None) => {}
        _ => return Err(Failure::invalid("--m and --n must be given together".into())),
    }
    let entry = match (f.entry, f.name) {
        (Some(json), _) => Some(json),
        (None, Some(name)) => Some(json!({ "name": name }).to_string()),
        (None, None) => None,
    };
    if let Some(e) = entry {
        cfg.entry = Some(serde_json::from_str(&e).map_err(|err| Failure::invalid(format!("catalog entry {e}: {err}")))?);
    }
    if f.alpha.is_some() || f.beta.is_some() {
        let (a, b) = cfg.characteristic.unwrap_or((0.5, 0.5));
        cfg.characteristic = Some((f.alpha.unwrap_or(a), f.beta.unwrap_or(b)));
    }
    cfg.mult = f.mult.or(cfg.mult);
    cfg.order = f.order.or(cfg.order);
    cfg.file = f.file.or(cfg.file);
    cfg.seed = f.seed.unwrap_or(cfg.seed);
    cfg.output = f.output.or(cfg.output);
    cfg.csv = f.csv.or(cfg.csv);
    cfg.timing |= f.timing;
    let t = &mut cfg.tolerances;
    t.variety = f.tol_variety.unwrap_or(t.variety);
    t.eigen = f.tol_eigen.unwrap_or(t.eigen);
    t.q_eigen = f.tol_q_eigen.unwrap_or(t.q_eigen);
    t.verify = f.tol_verify.unwrap_or(t.verify);
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("LAMELAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::invalid(format!("LAMELAB_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::invalid(format!("thread pool: {e}")))
}

fn manifest(cfg: Option<&RunConfig>) -> Value {
    json!({
        "tool": "lamelab",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    })
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn fail(cfg: Option<&RunConfig>, e: Failure) -> ExitCode {
    let code = e.exit_code();
    let doc = json!({
        "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code },
        "manifest": manifest(cfg),
    });
    emit(&(serde_json::to_string_pretty(&doc).unwrap() + "\n"));
    eprintln!("error: {}: {e}", e.kind());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprint!("{e}");
            return fail(None, Failure::invalid(e.kind().to_string()));
        }
    };
    let cfg = match load_config(cli) {
        Ok(cfg) => cfg,
        Err(e) => return fail(None, e),
    };
    if let Err(e) = configure_threads() {
        return fail(Some(&cfg), e);
    }
    let start = Instant::now();
    let out = match commands::run(&cfg) {
        Ok(out) => out,
        Err(e) => return fail(Some(&cfg), e),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut man = manifest(Some(&cfg));
    if cfg.timing {
        man["wall_time_s"] = json!(secs);
    }
    let doc = json!({ "manifest": man, "result": out.result });
    let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
    match &cfg.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                return fail(Some(&cfg), Failure::io(path, e));
            }
        }
        None => emit(&text),
    }
    eprintln!("{}: {} ({secs:.2} s)", cfg.command.name(), out.summary);
    ExitCode::SUCCESS
}
