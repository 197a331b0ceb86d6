//! The `plap` command line.
//!
//! Every command prints one JSON document (or CSV where noted) on standard
//! output or to `--out`. Errors go to standard error as
//! `{"code": ..., "detail": ...}`. Exit codes: 0 success, 1 invalid input,
//! 2 solver did not converge (the best iterate is still printed).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::check_bounds;
use crate::discretize::{fmt_sig, round_sig};
use crate::eigensolver::{solve_first_eigenpair, Eigenpair, SolverError, SolverOptions, P_MAX, P_MIN};
use crate::graph::{load_graph, MetricGraph};
use crate::limits::{cheeger_constant, infinity_convergence, lambda_infinity, one_convergence, LimitError, LimitReport};
use crate::perturbation::{derivative_report, PerturbError};
use crate::ptrig::{interval_eigenvalue, pi_p, sin_p, PValue};

#[derive(Debug, Parser)]
#[command(name = "plap", version, about = "First p-Laplacian eigenpair on metric graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the first eigenvalue and eigenfunction.
    Solve(SolveArgs),
    /// Compare the first eigenvalue with the length bounds.
    Bounds(SolveArgs),
    /// Shape derivative with respect to one edge length.
    Deriv(DerivArgs),
    /// The p → ∞ and p → 1 limits.
    Limits(LimitArgs),
    /// Table of π_p and interval eigenvalues, or samples of sin_p with `--p`.
    PtrigTable(TableArgs),
    /// Check a graph file.
    Validate(GraphArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Infty,
    Cheeger,
    Sweep,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Graph document (JSON).
    #[arg(long)]
    graph: PathBuf,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Numerics {
    /// Target element size [default: 1e-3 · shortest edge].
    #[arg(long)]
    h: Option<f64>,
    /// Relative tolerance on λ.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for the initial guess.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration budget on the finest mesh [default: 200 · unknowns].
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    p: f64,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(Debug, Args)]
struct DerivArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    p: f64,
    /// Edge whose length is perturbed.
    #[arg(long)]
    edge: String,
    /// Finite-difference step [default: 1e-3 · edge length].
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(Debug, Args)]
struct LimitArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Comma-separated p values for the convergence reports.
    #[arg(long, value_delimiter = ',')]
    p_list: Option<Vec<f64>>,
    #[command(flatten)]
    numerics: Numerics,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Comma-separated p values.
    #[arg(long, value_delimiter = ',', default_value = "1.05,1.5,2,3,4,8,16,64", conflicts_with = "p")]
    p_list: Vec<f64>,
    /// Sample sin_p over one period [0, 2π_p] instead.
    #[arg(long)]
    p: Option<f64>,
    /// Number of samples for `--p`.
    #[arg(long, default_value_t = 101)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

const DEFAULT_SWEEP: [f64; 12] = [1.05, 1.1, 1.2, 1.3, 1.4, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 40.0];

#[derive(Debug)]
struct Failure {
    code: String,
    detail: String,
    exit: i32,
}

impl Failure {
    fn invalid(code: &str, detail: impl Into<String>) -> Self {
        Failure {
            code: code.into(),
            detail: detail.into(),
            exit: 1,
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let exit = if matches!(e, SolverError::NotConverged(_)) { 2 } else { 1 };
        Failure {
            code: e.code().into(),
            detail: e.to_string(),
            exit,
        }
    }
}

impl From<PerturbError> for Failure {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::Solver(s) => s.into(),
            e => Failure::invalid(e.code(), e.to_string()),
        }
    }
}

impl From<LimitError> for Failure {
    fn from(e: LimitError) -> Self {
        match e {
            LimitError::Solver(s) => s.into(),
            e => Failure::invalid(e.code(), e.to_string()),
        }
    }
}

/// What a command produced: the document and whether every solve converged.
struct Output {
    text: String,
    converged: bool,
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{}", e.render());
                return 0;
            }
            let failure = Failure::invalid("invalid_arguments", e.render().to_string().trim());
            report_failure(stderr, &failure, None);
            return failure.exit;
        }
    };
    let out_path = match &cli.command {
        Command::Solve(a) | Command::Bounds(a) => a.graph.out.clone(),
        Command::Deriv(a) => a.graph.out.clone(),
        Command::Limits(a) => a.graph.out.clone(),
        Command::PtrigTable(a) => a.out.clone(),
        Command::Validate(a) => a.out.clone(),
    };
    let result = match cli.command {
        Command::Solve(a) => solve(&a),
        Command::Bounds(a) => bounds(&a),
        Command::Deriv(a) => deriv(&a),
        Command::Limits(a) => limits(&a),
        Command::PtrigTable(a) => table(&a),
        Command::Validate(a) => validate(&a),
    };
    match result {
        Ok(output) => {
            if let Err(f) = emit(stdout, out_path.as_ref(), &output.text) {
                report_failure(stderr, &f, None);
                return f.exit;
            }
            if output.converged {
                0
            } else {
                let f = Failure {
                    code: "not_converged".into(),
                    detail: "the solver stopped before reaching the tolerances".into(),
                    exit: 2,
                };
                report_failure(stderr, &f, Some(false));
                2
            }
        }
        Err(f) => {
            report_failure(stderr, &f, None);
            f.exit
        }
    }
}

fn report_failure(stderr: &mut dyn Write, f: &Failure, converged: Option<bool>) {
    let mut doc = json!({ "code": f.code, "detail": f.detail });
    if let Some(c) = converged {
        doc["converged"] = Value::Bool(c);
    }
    let _ = writeln!(stderr, "{doc}");
}

fn emit(stdout: &mut dyn Write, path: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::invalid("io_error", format!("cannot write {}: {e}", p.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::invalid("io_error", e.to_string())),
    }
}

/// Serializes with every float rounded to 12 significant digits.
fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("output serializes");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// JSON has no infinities or NaN; they are written as strings.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(x.to_string()))
}

fn read_graph(path: &PathBuf) -> Result<MetricGraph, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid("parse_error", format!("cannot read {}: {e}", path.display())))?;
    load_graph(&text).map_err(|e| Failure::invalid(e.code(), e.to_string()))
}

fn check_p(p: f64) -> Result<PValue, Failure> {
    if !(P_MIN..=P_MAX).contains(&p) {
        return Err(Failure::invalid(
            "p_out_of_range",
            format!("p = {p} is outside the solver range [{P_MIN}, {P_MAX}]"),
        ));
    }
    PValue::new(p).map_err(|e| Failure::invalid("p_out_of_range", e.to_string()))
}

fn options(graph: &MetricGraph, n: &Numerics) -> Result<SolverOptions, Failure> {
    let mut opts = match n.h {
        Some(h) => SolverOptions::new(h),
        None => SolverOptions::for_graph(graph),
    };
    opts.seed = n.seed;
    opts.max_iterations = n.max_iterations;
    if let Some(t) = n.tol {
        opts.lambda_tol = t;
    }
    opts.validate().map_err(Failure::from)?;
    Ok(opts)
}

fn json_only(format: Format, what: &str) -> Result<(), Failure> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(Failure::invalid("unsupported_format", format!("{what} has no CSV output"))),
    }
}

/// Solves, keeping the best iterate when the solver did not converge.
fn solve_pair(graph: &MetricGraph, p: PValue, opts: &SolverOptions) -> Result<Eigenpair, Failure> {
    match solve_first_eigenpair(graph, p, opts) {
        Ok(pair) => Ok(pair),
        Err(SolverError::NotConverged(best)) => Ok(*best),
        Err(e) => Err(e.into()),
    }
}

fn solve_summary(graph: &MetricGraph, pair: &Eigenpair, opts: &SolverOptions) -> Value {
    let kirchhoff_max = pair.kirchhoff.values().copied().fold(0.0, f64::max);
    json!({
        "p": pair.p.get(),
        "lambda": pair.lambda,
        "converged": pair.converged,
        "iterations": pair.iterations,
        "gradient_norm": pair.gradient_norm,
        "h": opts.h_target,
        "seed": opts.seed,
        "elements": pair.mesh().elements().len(),
        "total_length": graph.total_length(),
        "kirchhoff": pair.kirchhoff,
        "kirchhoff_max": kirchhoff_max,
        "simple_candidate": pair.is_simple_candidate(),
    })
}

fn solve(a: &SolveArgs) -> Result<Output, Failure> {
    let p = check_p(a.p)?;
    let graph = read_graph(&a.graph.graph)?;
    let opts = options(&graph, &a.numerics)?;
    let pair = solve_pair(&graph, p, &opts)?;
    let text = match a.numerics.format {
        Format::Json => to_json(&solve_summary(&graph, &pair, &opts)),
        Format::Csv => pair.eigenfunction.to_csv(),
    };
    Ok(Output {
        text,
        converged: pair.converged,
    })
}

fn bounds(a: &SolveArgs) -> Result<Output, Failure> {
    let p = check_p(a.p)?;
    json_only(a.numerics.format, "bounds")?;
    let graph = read_graph(&a.graph.graph)?;
    let opts = options(&graph, &a.numerics)?;
    let pair = solve_pair(&graph, p, &opts)?;
    let report = check_bounds(&graph, p, &pair);
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc["passed"] = Value::Bool(report.passed());
    doc["converged"] = Value::Bool(pair.converged);
    doc["total_length"] = num(graph.total_length());
    doc["edge_count"] = json!(graph.edge_count());
    Ok(Output {
        text: to_json(&doc),
        converged: pair.converged,
    })
}

fn deriv(a: &DerivArgs) -> Result<Output, Failure> {
    let p = check_p(a.p)?;
    json_only(a.numerics.format, "deriv")?;
    if let Some(d) = a.delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Failure::invalid("invalid_delta", format!("delta must be positive, got {d}")));
        }
    }
    let graph = read_graph(&a.graph.graph)?;
    graph
        .edge_index(&a.edge)
        .map_err(|e| Failure::invalid(e.code(), e.to_string()))?;
    let opts = options(&graph, &a.numerics)?;
    let report = derivative_report(&graph, &a.edge, p, a.delta, &opts)?;
    Ok(Output {
        text: to_json(&report),
        converged: true,
    })
}

fn report_csv(reports: &[&LimitReport]) -> String {
    let mut out = String::from("kind,p,lambda,value,target,gap,converged\n");
    for r in reports {
        let kind = serde_json::to_value(r.kind).expect("kind serializes");
        for row in &r.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                kind.as_str().unwrap_or_default(),
                fmt_sig(row.p),
                fmt_sig(row.lambda),
                fmt_sig(row.value),
                fmt_sig(r.target),
                fmt_sig(row.gap),
                row.converged
            );
        }
    }
    out
}

fn limits(a: &LimitArgs) -> Result<Output, Failure> {
    if let Some(ps) = &a.p_list {
        for &p in ps {
            check_p(p)?;
        }
    }
    let graph = read_graph(&a.graph.graph)?;
    let opts = options(&graph, &a.numerics)?;
    match a.mode {
        Mode::Cheeger => {
            json_only(a.numerics.format, "cheeger mode")?;
            let set = cheeger_constant(&graph)?;
            Ok(Output {
                text: to_json(&set),
                converged: true,
            })
        }
        Mode::Infty => {
            let (value, witness) = lambda_infinity(&graph);
            let report = match &a.p_list {
                Some(ps) => Some(infinity_convergence(&graph, ps, &opts)?),
                None => None,
            };
            let converged = report.as_ref().map_or(true, |r| r.converged);
            let text = match a.numerics.format {
                Format::Csv => report_csv(&report.iter().collect::<Vec<_>>()),
                Format::Json => to_json(&json!({
                    "lambda_infinity": value,
                    "max_distance": 1.0 / value,
                    "witness": { "edge": graph.edge(witness.edge).id, "x": witness.x },
                    "report": report,
                })),
            };
            Ok(Output { text, converged })
        }
        Mode::Sweep => {
            let ps = a.p_list.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let (near_one, rest): (Vec<f64>, Vec<f64>) = ps.iter().partition(|&&p| p <= 1.5);
            let one = if near_one.is_empty() {
                None
            } else {
                Some(one_convergence(&graph, &near_one, &opts)?)
            };
            let inf = if rest.is_empty() {
                None
            } else {
                Some(infinity_convergence(&graph, &rest, &opts)?)
            };
            let converged = one.iter().chain(inf.iter()).all(|r| r.converged);
            let text = match a.numerics.format {
                Format::Csv => report_csv(&one.iter().chain(inf.iter()).collect::<Vec<_>>()),
                Format::Json => to_json(&json!({
                    "cheeger": cheeger_constant(&graph).ok(),
                    "lambda_infinity": lambda_infinity(&graph).0,
                    "one": one,
                    "infinity": inf,
                })),
            };
            Ok(Output { text, converged })
        }
    }
}

#[derive(Serialize)]
struct TableRow {
    p: f64,
    pi_p: f64,
    /// First eigenvalue of the unit interval, one end Dirichlet.
    lambda_mixed: f64,
    /// First eigenvalue of the unit interval, both ends Dirichlet.
    lambda_dirichlet: f64,
}

#[derive(Serialize)]
struct SineSample {
    x: f64,
    sin_p: f64,
}

fn sine_table(p: f64, a: &TableArgs) -> Result<Output, Failure> {
    let pv = PValue::new(p).map_err(|e| Failure::invalid("p_out_of_range", e.to_string()))?;
    if a.samples < 2 {
        return Err(Failure::invalid("invalid_arguments", "at least 2 samples are needed"));
    }
    let period = 2.0 * pi_p(pv);
    let rows: Vec<SineSample> = (0..a.samples)
        .map(|i| {
            let x = period * i as f64 / (a.samples - 1) as f64;
            SineSample { x, sin_p: sin_p(pv, x) }
        })
        .collect();
    let text = match a.format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut out = String::from("x,sin_p\n");
            for r in &rows {
                let _ = writeln!(out, "{},{}", fmt_sig(r.x), fmt_sig(r.sin_p));
            }
            out
        }
    };
    Ok(Output { text, converged: true })
}

fn table(a: &TableArgs) -> Result<Output, Failure> {
    if let Some(p) = a.p {
        return sine_table(p, a);
    }
    let mut rows = Vec::with_capacity(a.p_list.len());
    for &p in &a.p_list {
        let pv = PValue::new(p).map_err(|e| Failure::invalid("p_out_of_range", e.to_string()))?;
        rows.push(TableRow {
            p,
            pi_p: pi_p(pv),
            lambda_mixed: interval_eigenvalue(pv, 1, 2.0),
            lambda_dirichlet: interval_eigenvalue(pv, 1, 1.0),
        });
    }
    let text = match a.format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut out = String::from("p,pi_p,lambda_mixed,lambda_dirichlet\n");
            for r in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt_sig(r.p),
                    fmt_sig(r.pi_p),
                    fmt_sig(r.lambda_mixed),
                    fmt_sig(r.lambda_dirichlet)
                );
            }
            out
        }
    };
    Ok(Output { text, converged: true })
}

fn validate(a: &GraphArgs) -> Result<Output, Failure> {
    let graph = read_graph(&a.graph)?;
    let dirichlet: Vec<&str> = graph.dirichlet_vertices().iter().map(|&v| graph.vertex_id(v)).collect();
    Ok(Output {
        text: to_json(&json!({
            "valid": true,
            "vertices": graph.vertex_count(),
            "edges": graph.edge_count(),
            "total_length": graph.total_length(),
            "dirichlet": dirichlet,
        })),
        converged: true,
    })
}
