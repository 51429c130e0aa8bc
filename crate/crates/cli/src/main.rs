//! `gausscol`: batch front end for node generation, operator checks, solves,
//! verification suites and convergence studies.
//!
//! Exit codes: 0 success, 2 numerical failure (no convergence, failed check),
//! 3 usage error or unknown problem.

mod format;
mod manifest;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gauss_colloc::analysis::{
    self, convergence_row, fit_rows, verify_appendix1, verify_appendix2, verify_interpolation,
    CONVERGENCE_HEADER,
};
use gauss_colloc::diffmat::property_row;
use gauss_colloc::problem::builtin;
use gauss_colloc::solver::{solve, SolverConfig};
use gauss_colloc::{Error, QuadratureRule, RuleKind};
use serde::Serialize;

use format::{fmt17, parse_n_list};
use manifest::RunManifest;

const EXIT_NUMERICAL: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gausscol", version, about = "Legendre-Gauss collocation for control-constrained optimal control")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print quadrature nodes and weights as `i,tau,omega`.
    Nodes(NodesArgs),
    /// Check the inverse bounds of D_{1:N} for N = 1..=n-max.
    Props(PropsArgs),
    /// Solve a built-in problem and print the JSON report.
    Solve(SolveArgs),
    /// Run a verification suite and print its JSON report.
    #[command(subcommand)]
    Verify(VerifySuite),
    /// Solve over a list of N and fit error slopes.
    Convergence(ConvergenceArgs),
}

#[derive(Args, Debug, Serialize)]
struct NodesArgs {
    #[arg(long, short = 'n', alias = "N", value_parser = clap::value_parser!(u64).range(1..=1000))]
    n: u64,
    #[arg(long, default_value = "gauss")]
    kind: RuleKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PropsArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=1000))]
    n_max: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long = "N", visible_alias = "n", value_parser = clap::value_parser!(u64).range(1..=1000))]
    n: u64,
    #[arg(long, default_value_t = SolverConfig::default().tol_y)]
    tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_outer)]
    max_iter: usize,
    /// Also write the residual components as JSON.
    #[arg(long)]
    dump_residual: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum VerifySuite {
    /// Sampled bound |p| <= 2 for p in P_N with p(-1) = 0 and |p'| <= 1 at the nodes.
    Appendix1(Appendix1Args),
    /// Weighted projection inequality in the H^1_0 basis (1 - t^2) P_k'.
    Appendix2(Appendix2Args),
    /// H^1 interpolation error at -1 and the Gauss points.
    Interp(InterpArgs),
}

#[derive(Args, Debug, Serialize)]
struct Appendix1Args {
    #[arg(long, default_value = "gauss")]
    kind: RuleKind,
    /// Largest N; the suite runs N = 2, 4, 8, ... up to and including it.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..=1000))]
    n_max: u64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct Appendix2Args {
    /// Largest N; the suite runs N = 4, 8, 16, ... up to and including it.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..=1000))]
    n_max: u64,
    /// Comma-separated test functions vanishing at both ends.
    #[arg(long, default_value = "sinpi,hat,bump")]
    functions: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct InterpArgs {
    #[arg(long, default_value = "cospi")]
    function: String,
    /// `start:step:end` or a comma list; defaults to 4:1:32.
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ConvergenceArgs {
    #[arg(long, default_value = "hager84-constrained")]
    problem: String,
    /// `start:step:end` or a comma list.
    #[arg(long, default_value = "4:4:40")]
    n_list: String,
    #[arg(long, default_value_t = SolverConfig::default().tol_y)]
    tol: f64,
    /// CSV destination; the fit goes to `<out>.fit.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for two-column `N err` files, one per error series.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownProblem(_) | Error::InvalidInput(_) | Error::InsufficientData { .. } => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_USAGE, message: format!("i/o error: {e}") }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self { code: EXIT_NUMERICAL, message: format!("serialization failed: {e}") }
    }
}

type CmdResult = Result<u8, Failure>;

/// Writes `text` to `path`, or to stdout without one.
fn emit(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn emit_with_manifest(path: Option<&Path>, text: &str, manifest: &RunManifest) -> std::io::Result<()> {
    emit(path, text)?;
    manifest.emit(path)
}

fn json(value: &impl Serialize) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn pass_code(pass: bool) -> u8 {
    if pass {
        0
    } else {
        EXIT_NUMERICAL
    }
}

fn powers_of_two(start: usize, n_max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(start), |n| Some(n * 2))
        .take_while(|n| *n <= n_max)
        .collect();
    if out.last() != Some(&n_max) {
        out.push(n_max);
    }
    out
}

fn cmd_nodes(a: &NodesArgs, seed: u64) -> CmdResult {
    let rule = QuadratureRule::new(a.kind, a.n as usize)?;
    let mut text = String::new();
    for (i, (t, w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        writeln!(text, "{},{},{}", i + 1, fmt17(*t), fmt17(*w)).expect("write to string");
    }
    emit_with_manifest(a.out.as_deref(), &text, &RunManifest::new("nodes", a, seed))?;
    Ok(0)
}

fn cmd_props(a: &PropsArgs, seed: u64) -> CmdResult {
    let mut text = String::from("N,p1_norm,p1_pass,p2_max_row_norm,p2_pass,last_row_gap\n");
    let mut all = true;
    for n in 1..=a.n_max as usize {
        let r = property_row(n)?;
        all &= r.p1.pass && r.p2.pass;
        writeln!(
            text,
            "{},{},{},{},{},{}",
            n,
            fmt17(r.p1.norm),
            r.p1.pass,
            fmt17(r.p2.max_row_norm),
            r.p2.pass,
            fmt17(r.p2.last_row_gap)
        )
        .expect("write to string");
    }
    emit_with_manifest(a.out.as_deref(), &text, &RunManifest::new("props", a, seed))?;
    Ok(pass_code(all))
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    problem: &'a str,
    config: SolverConfig,
    #[serde(flatten)]
    report: &'a gauss_colloc::solver::SolveReport,
}

fn cmd_solve(a: &SolveArgs, seed: u64) -> CmdResult {
    let problem = builtin(&a.problem)?;
    let config = SolverConfig {
        tol_y: a.tol,
        max_outer: a.max_iter,
        ..SolverConfig::default()
    };
    config.validate()?;
    let report = solve(&problem, a.n as usize, &config, None)?;
    let manifest = RunManifest::new("solve", a, seed);
    let out = SolveOutput { problem: problem.name(), config, report: &report };
    emit_with_manifest(a.out.as_deref(), &json(&out)?, &manifest)?;
    if let Some(path) = &a.dump_residual {
        emit_with_manifest(Some(path), &json(&report.residual)?, &manifest)?;
    }
    if !report.converged {
        eprintln!(
            "not converged ({:?}) after {} iterations, y_norm = {:e}",
            report.termination, report.outer_iters, report.y_norm
        );
    }
    Ok(pass_code(report.converged))
}

fn cmd_appendix1(a: &Appendix1Args, seed: u64) -> CmdResult {
    let n_list = powers_of_two(2.min(a.n_max as usize), a.n_max as usize);
    let report = verify_appendix1(&n_list, a.samples, a.kind, seed)?;
    emit_with_manifest(a.out.as_deref(), &json(&report)?, &RunManifest::new("verify appendix1", a, seed))?;
    Ok(pass_code(report.pass))
}

#[derive(Serialize)]
struct Appendix2Output {
    basis: Vec<analysis::BasisCheck>,
    max_off_diagonal: f64,
    reports: Vec<analysis::ProjectionReport>,
    pass: bool,
}

fn cmd_appendix2(a: &Appendix2Args, seed: u64) -> CmdResult {
    let n_max = a.n_max as usize;
    let n_list = powers_of_two(4.min(n_max), n_max);
    let (basis, max_off_diagonal) = analysis::psi_basis_checks(12)?;
    let reports = a
        .functions
        .split(',')
        .map(|name| verify_appendix2(&analysis::test_function(name.trim())?, &n_list))
        .collect::<Result<Vec<_>, Error>>()?;
    let basis_ok = max_off_diagonal <= 1e-10
        && basis.iter().all(|b| {
            b.h1_error <= 1e-12 * analysis::psi_h1_norm_sq(b.k)
                && b.weighted_error <= 1e-12 * analysis::psi_weighted_norm_sq(b.k)
        });
    let pass = basis_ok && reports.iter().all(|r| r.pass);
    let out = Appendix2Output { basis, max_off_diagonal, reports, pass };
    emit_with_manifest(a.out.as_deref(), &json(&out)?, &RunManifest::new("verify appendix2", a, seed))?;
    Ok(pass_code(pass))
}

fn cmd_interp(a: &InterpArgs, seed: u64) -> CmdResult {
    let f = analysis::test_function(&a.function)?;
    let n_list = match &a.n_list {
        Some(s) => parse_n_list(s).map_err(Failure::usage)?,
        None => (4..=32).collect(),
    };
    let report = verify_interpolation(&f, &n_list)?;
    emit_with_manifest(a.out.as_deref(), &json(&report)?, &RunManifest::new("verify interp", a, seed))?;
    Ok(pass_code(report.pass))
}

fn write_plot_data(dir: &Path, rows: &[analysis::ConvergenceRow], manifest: &RunManifest) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let series: [(&str, fn(&analysis::ConvergenceRow) -> f64); 3] =
        [("err_x", |r| r.err_x), ("err_u", |r| r.err_u), ("err_lambda", |r| r.err_lambda)];
    for (name, get) in series {
        let mut text = format!("# N {name}\n");
        for r in rows.iter().filter(|r| r.converged) {
            writeln!(text, "{} {}", r.n, fmt17(get(r))).expect("write to string");
        }
        emit_with_manifest(Some(&dir.join(format!("{name}.dat"))), &text, manifest)?;
    }
    Ok(())
}

fn cmd_convergence(a: &ConvergenceArgs, seed: u64) -> CmdResult {
    let n_list = parse_n_list(&a.n_list).map_err(Failure::usage)?;
    let problem = builtin(&a.problem)?;
    let config = SolverConfig { tol_y: a.tol, ..SolverConfig::default() };
    config.validate()?;
    let rows = n_list
        .iter()
        .map(|&n| convergence_row(&problem, n, &config))
        .collect::<Result<Vec<_>, Error>>()?;
    let manifest = RunManifest::new("convergence", a, seed);

    let mut csv = format!("{CONVERGENCE_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    emit_with_manifest(a.out.as_deref(), &csv, &manifest)?;
    if let Some(dir) = &a.plot_data {
        write_plot_data(dir, &rows, &manifest)?;
    }

    let fits = fit_rows(&rows)?;
    let fit_text = json(&fits)?;
    match &a.out {
        Some(path) => {
            let mut p = path.as_os_str().to_owned();
            p.push(".fit.json");
            let p = PathBuf::from(p);
            emit_with_manifest(Some(&p), &fit_text, &manifest)?;
            print!("{fit_text}");
        }
        None => eprint!("{fit_text}"),
    }
    Ok(pass_code(rows.iter().all(|r| r.converged)))
}

fn run(cli: &Cli) -> CmdResult {
    let seed = cli.seed;
    match &cli.command {
        Command::Nodes(a) => cmd_nodes(a, seed),
        Command::Props(a) => cmd_props(a, seed),
        Command::Solve(a) => cmd_solve(a, seed),
        Command::Verify(VerifySuite::Appendix1(a)) => cmd_appendix1(a, seed),
        Command::Verify(VerifySuite::Appendix2(a)) => cmd_appendix2(a, seed),
        Command::Verify(VerifySuite::Interp(a)) => cmd_interp(a, seed),
        Command::Convergence(a) => cmd_convergence(a, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("gausscol: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
