//! `hzwalk`: constructions, Schreier graphs and random-walk experiments.
//!
//! Exit codes: 0 success, 1 validation error, 2 structure-check failure,
//! 64 usage error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::ToPrimitive;
use serde::Serialize;
use serde_json::json;

use hzwalk_core::exactnum::{ExtendedPoint, Rational};
use hzwalk_core::piecewise::{construct_h_s_detailed, construct_prechain, verify_h_s, PiecewiseProjectiveMap, Prechain};
use hzwalk_core::schreier::{build_orbit_graph, comparison_kernel, verify_tree_structure, OrbitGraph, SchreierError};
use hzwalk_core::walk::{
    entropy_estimate, estimate_returns, lamplighter_demo, nontriviality_witness, simulate_config_walk, summability_diagnostic,
    trajectory_rng, Execution, GroupMeasure, KernelWalk, LatticeWalk, MeasureWalk, PrechainTreeWalk, ReturnEstimate,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_STRUCTURE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "hzwalk",
    version,
    about = "Exact piecewise projective maps, Schreier graphs and random-walk diagnostics"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output file; defaults to `<out-dir>/<command>.<ext>`, or stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Default output directory.
    #[arg(long, global = true, env = "HZWALK_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
    Dot,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Dot => "dot",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and verify h_s, whose configuration is the delta at s.
    ConstructHs(PointArgs),
    /// Build the 2-prechain (f, g) = (h̃_s^p, h_s^q) at s.
    Prechain(PointArgs),
    /// Explore the Schreier graph of the prechain at b.
    Graph(GraphArgs),
    /// Run the tree structure checks on the Schreier graph.
    VerifyTree(GraphArgs),
    /// Check the comparison kernel on explored vertices.
    Kernel(GraphArgs),
    /// Track C(γ) along one trajectory.
    Walk(WalkArgs),
    /// Poisson boundary non-triviality witness.
    Witness(MonteCarloArgs),
    /// Hit mass and partial sums of the summability series.
    Summability(SummabilityArgs),
    /// Plug-in entropy of n-step products.
    Entropy(EntropyArgs),
    /// Lamplighter over Z with power-law moves against a simple random walk.
    Lamplighter(LamplighterArgs),
    /// Mean return counts at T and 2T.
    Returns(ReturnsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ConstructHs(_) => "construct-hs",
            Command::Prechain(_) => "prechain",
            Command::Graph(_) => "graph",
            Command::VerifyTree(_) => "verify-tree",
            Command::Kernel(_) => "kernel",
            Command::Walk(_) => "walk",
            Command::Witness(_) => "witness",
            Command::Summability(_) => "summability",
            Command::Entropy(_) => "entropy",
            Command::Lamplighter(_) => "lamplighter",
            Command::Returns(_) => "returns",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PointArgs {
    /// Quadratic irrational `a+b*sqrt(k)`.
    #[arg(long)]
    s: String,
}

#[derive(Args, Debug, Serialize)]
struct GraphArgs {
    #[arg(long)]
    s: String,
    /// Maximum number of explored vertices.
    #[arg(long, default_value_t = 2000)]
    cap: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MeasureKind {
    /// (1 − ε) uniform on h_s^{±1}, h̃_s^{±1}; ε on x ↦ x + n with P(n) ∝ |n|^{−1−α}.
    Witness,
    /// Point mass on h_s.
    Hs,
    /// Point mass on x ↦ x + 1.
    Shift,
    /// Uniform on x ↦ x ± 1.
    Srw,
}

#[derive(Args, Debug, Serialize)]
struct MeasureArgs {
    #[arg(long, value_enum, default_value_t = MeasureKind::Witness)]
    measure: MeasureKind,
    /// Weight of the heavy tail.
    #[arg(long, default_value = "1/4")]
    epsilon: String,
    /// Tail exponent in (0, 1).
    #[arg(long, default_value = "4/5")]
    alpha: String,
    /// Compose a Poisson(1) number of draws per step.
    #[arg(long)]
    smoothing: bool,
}

#[derive(Args, Debug, Serialize)]
struct MonteCarloArgs {
    #[arg(long)]
    s: String,
    #[arg(long = "T")]
    steps: u64,
    #[arg(long = "M")]
    trajectories: u64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args, Debug, Serialize)]
struct WalkArgs {
    #[arg(long)]
    s: String,
    /// Marked orbit point; defaults to s.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "T")]
    steps: u64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args, Debug, Serialize)]
struct SummabilityArgs {
    #[command(flatten)]
    run: MonteCarloArgs,
    /// Starting orbit point; defaults to s.
    #[arg(long)]
    o: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct EntropyArgs {
    #[arg(long)]
    s: String,
    #[arg(long)]
    n: u64,
    #[arg(long = "M")]
    samples: u64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args, Debug, Serialize)]
struct LamplighterArgs {
    #[arg(long, default_value = "4/5")]
    alpha: String,
    #[arg(long = "T")]
    steps: u64,
    #[arg(long = "M")]
    trajectories: u64,
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ProcessKind {
    /// Simple random walk on the prechain Schreier graph from b.
    Prechain,
    /// Comparison kernel walk from b.
    Kernel,
    /// Simple random walk on Z from 0.
    Lattice,
    /// Induced walk of the chosen measure from s.
    Measure,
}

#[derive(Args, Debug, Serialize)]
struct ReturnsArgs {
    #[arg(long, default_value = "0+1*sqrt(3)")]
    s: String,
    #[arg(long, value_enum, default_value_t = ProcessKind::Prechain)]
    process: ProcessKind,
    #[arg(long = "T")]
    steps: u64,
    #[arg(long = "M")]
    trajectories: u64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    measure: MeasureArgs,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
struct RunConfig<'a, P: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    format: Format,
    output: Option<String>,
    parameters: &'a P,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Structure(String),
    Usage(String),
}

type Outcome = Result<(String, Format), Failure>;

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn parse_point(text: &str) -> Result<ExtendedPoint, Failure> {
    text.parse()
        .map_err(|e| Failure::Validation(format!("invalid point {text:?}: {e}")))
}

fn parse_irrational(text: &str) -> Result<ExtendedPoint, Failure> {
    let p = parse_point(text)?;
    if p.is_rational_or_infinity() {
        return Err(Failure::Validation(format!("{text:?} must be a quadratic irrational")));
    }
    Ok(p)
}

fn parse_ratio(text: &str, what: &str) -> Result<Rational, Failure> {
    let (n, d) = text.split_once('/').unwrap_or((text, "1"));
    let n = n
        .trim()
        .parse()
        .map_err(|_| Failure::Validation(format!("invalid {what} {text:?}")))?;
    let d: num_bigint::BigInt = d
        .trim()
        .parse()
        .map_err(|_| Failure::Validation(format!("invalid {what} {text:?}")))?;
    if d == 0.into() {
        return Err(Failure::Validation(format!("invalid {what} {text:?}")));
    }
    Ok(Rational::new(n, d))
}

fn ratio_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn prechain_at(s: &ExtendedPoint) -> Result<Prechain, Failure> {
    construct_prechain(s).map_err(validation)
}

fn build_measure(args: &MeasureArgs, s: &ExtendedPoint) -> Result<GroupMeasure, Failure> {
    let mu = match args.measure {
        MeasureKind::Witness => {
            let pc = prechain_at(s)?;
            let epsilon = parse_ratio(&args.epsilon, "epsilon")?;
            let alpha = parse_ratio(&args.alpha, "alpha")?;
            GroupMeasure::witness_measure(&pc.h_s, &pc.h_tilde, epsilon, alpha).map_err(validation)?
        }
        MeasureKind::Hs => GroupMeasure::point_mass(hzwalk_core::piecewise::construct_h_s(s).map_err(validation)?),
        MeasureKind::Shift => GroupMeasure::point_mass(PiecewiseProjectiveMap::translation(1)),
        MeasureKind::Srw => GroupMeasure::uniform(vec![
            PiecewiseProjectiveMap::translation(1),
            PiecewiseProjectiveMap::translation(-1),
        ])
        .map_err(validation)?,
    };
    Ok(mu.with_smoothing(args.smoothing))
}

fn require_positive(name: &str, v: u64) -> Result<(), Failure> {
    if v == 0 {
        Err(Failure::Validation(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn choose_format(requested: Option<Format>, allowed: &[Format]) -> Result<Format, Failure> {
    let f = requested.unwrap_or(allowed[0]);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        let names: Vec<&str> = allowed.iter().map(|f| f.extension()).collect();
        Err(Failure::Usage(format!(
            "unsupported format {}; choose one of {}",
            f.extension(),
            names.join(", ")
        )))
    }
}

struct Context<'a> {
    cli: &'a Cli,
    exec: Execution,
}

impl Context<'_> {
    fn report<P: Serialize, R: Serialize>(&self, params: &P, format: Format, result: R) -> String {
        let config = RunConfig {
            command: self.cli.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            threads: self.cli.threads,
            format,
            output: self.cli.output.as_ref().map(|p| p.display().to_string()),
            parameters: params,
        };
        let mut text = serde_json::to_string_pretty(&json!({ "config": config, "result": result })).expect("serializable report");
        text.push('\n');
        text
    }

    /// CSV with the run configuration as a leading comment line.
    fn csv<P: Serialize>(&self, params: &P, format: Format, header: &str, rows: &[(u64, f64)]) -> String {
        let config = RunConfig {
            command: self.cli.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            threads: self.cli.threads,
            format,
            output: self.cli.output.as_ref().map(|p| p.display().to_string()),
            parameters: params,
        };
        let mut out = format!(
            "# {}\n{header}\n",
            serde_json::to_string(&config).expect("serializable config")
        );
        for (step, v) in rows {
            let _ = writeln!(out, "{step},{v}");
        }
        out
    }
}

fn graph_for(args: &GraphArgs) -> Result<(Prechain, OrbitGraph), Failure> {
    let s = parse_irrational(&args.s)?;
    if args.cap == 0 {
        return Err(Failure::Validation("cap must be at least 1".into()));
    }
    let pc = prechain_at(&s)?;
    let graph = build_orbit_graph(&[pc.f.clone(), pc.g.clone()], &pc.b, args.cap);
    Ok((pc, graph))
}

fn structure(e: SchreierError) -> Failure {
    match e {
        SchreierError::StructureViolation { .. } => Failure::Structure(e.to_string()),
        other => Failure::Validation(other.to_string()),
    }
}

fn returns_rows(est: &[ReturnEstimate]) -> Vec<(u64, f64)> {
    est.iter().map(|e| (e.horizon, e.mean)).collect()
}

fn execute(ctx: &Context) -> Outcome {
    let fmt = ctx.cli.format;
    match &ctx.cli.command {
        Command::ConstructHs(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let s = parse_irrational(&a.s)?;
            let hc = construct_h_s_detailed(&s).map_err(validation)?;
            verify_h_s(&hc.map, &s).map_err(|e| Failure::Structure(e.to_string()))?;
            let result = json!({
                "h_s": hc.map.to_string(),
                "construction": hc,
                "verification": {
                    "configuration": "delta at s",
                    "break_count": hzwalk_core::piecewise::breakpoint_count(&hc.map),
                    "passed": true,
                },
            });
            Ok((ctx.report(a, format, result), format))
        }
        Command::Prechain(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let pc = prechain_at(&parse_irrational(&a.s)?)?;
            pc.check().map_err(Failure::Structure)?;
            let result = json!({
                "f": pc.f.to_string(),
                "g": pc.g.to_string(),
                "h_s": pc.h_s.to_string(),
                "h_tilde": pc.h_tilde.to_string(),
                "a": pc.a, "b": pc.b, "c": pc.c, "d": pc.d,
                "f_power": pc.f_power,
                "g_power": pc.g_power,
                "prime": pc.prime,
                "g_inv_c": pc.g_inv_c(),
                "f_b": pc.f_b(),
            });
            Ok((ctx.report(a, format, result), format))
        }
        Command::Graph(a) => {
            let format = choose_format(fmt, &[Format::Dot, Format::Csv, Format::Json])?;
            let (pc, mut graph) = graph_for(a)?;
            // region colouring when the checks go through; plain graph otherwise
            let report = verify_tree_structure(&mut graph, &pc.f, &pc.g, &pc.b, &pc.c).ok();
            Ok((
                match format {
                    Format::Dot => graph.to_dot(),
                    Format::Csv => graph.to_csv(),
                    Format::Json => ctx.report(
                        a,
                        format,
                        json!({
                            "vertices": graph.len(),
                            "truncated": graph.is_truncated(),
                            "labels": graph.labels(),
                            "tree_report": report,
                        }),
                    ),
                },
                format,
            ))
        }
        Command::VerifyTree(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let (pc, mut graph) = graph_for(a)?;
            let report = verify_tree_structure(&mut graph, &pc.f, &pc.g, &pc.b, &pc.c).map_err(structure)?;
            Ok((ctx.report(a, format, json!({ "passed": true, "report": report })), format))
        }
        Command::Kernel(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let (pc, graph) = graph_for(a)?;
            let kernel = comparison_kernel(&pc.f, &pc.g, &pc.a, &pc.b, &pc.c, &pc.d).map_err(structure)?;
            let mut cases = std::collections::BTreeMap::new();
            for x in graph.points() {
                kernel.check_vertex(x).map_err(structure)?;
                *cases
                    .entry(format!("{:?}", kernel.case(x).map_err(structure)?))
                    .or_insert(0u64) += 1;
            }
            let result = json!({ "passed": true, "vertices_checked": graph.len(), "cases": cases });
            Ok((ctx.report(a, format, result), format))
        }
        Command::Walk(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let s = parse_irrational(&a.s)?;
            let gamma = a.gamma.as_deref().map(parse_point).transpose()?.unwrap_or_else(|| s.clone());
            let mu = build_measure(&a.measure, &s)?;
            let mut rng = trajectory_rng(a.seed, 0);
            let tracker = simulate_config_walk(&mu, &s, &gamma, a.steps, &mut rng).map_err(validation)?;
            Ok((ctx.report(a, format, tracker), format))
        }
        Command::Witness(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            require_positive("M", a.trajectories)?;
            let s = parse_irrational(&a.s)?;
            let mu = build_measure(&a.measure, &s)?;
            let report = nontriviality_witness(&mu, &s, a.steps, a.trajectories, a.seed, ctx.exec).map_err(validation)?;
            Ok((ctx.report(a, format, report), format))
        }
        Command::Summability(a) => {
            let format = choose_format(fmt, &[Format::Json, Format::Csv])?;
            let r = &a.run;
            require_positive("M", r.trajectories)?;
            let s = parse_irrational(&r.s)?;
            let o = a.o.as_deref().map(parse_irrational).transpose()?.unwrap_or_else(|| s.clone());
            let mu = build_measure(&r.measure, &s)?;
            let report = summability_diagnostic(&mu, &s, &o, r.steps, r.trajectories, r.seed, ctx.exec).map_err(validation)?;
            Ok((
                match format {
                    Format::Csv => {
                        let rows: Vec<(u64, f64)> = report
                            .cumulative
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| (i as u64 + 1, v))
                            .collect();
                        ctx.csv(a, format, "step,estimate", &rows)
                    }
                    _ => ctx.report(a, format, report),
                },
                format,
            ))
        }
        Command::Entropy(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            let s = parse_irrational(&a.s)?;
            let mu = build_measure(&a.measure, &s)?;
            let report = entropy_estimate(&mu, a.n, a.samples, a.seed, ctx.exec).map_err(validation)?;
            Ok((ctx.report(a, format, report), format))
        }
        Command::Lamplighter(a) => {
            let format = choose_format(fmt, &[Format::Json])?;
            require_positive("M", a.trajectories)?;
            let alpha = ratio_f64(&parse_ratio(&a.alpha, "alpha")?);
            let report =
                lamplighter_demo(alpha, &[a.steps, 2 * a.steps], a.trajectories, a.seed, ctx.exec).map_err(validation)?;
            Ok((ctx.report(a, format, report), format))
        }
        Command::Returns(a) => {
            let format = choose_format(fmt, &[Format::Json, Format::Csv])?;
            require_positive("T", a.steps)?;
            require_positive("M", a.trajectories)?;
            let horizons = [a.steps, 2 * a.steps];
            let (m, seed, exec) = (a.trajectories, a.seed, ctx.exec);
            let est = match a.process {
                ProcessKind::Prechain => estimate_returns(&PrechainTreeWalk, &horizons, m, seed, exec),
                ProcessKind::Lattice => estimate_returns(&LatticeWalk, &horizons, m, seed, exec),
                ProcessKind::Kernel => {
                    let pc = prechain_at(&parse_irrational(&a.s)?)?;
                    let kernel = comparison_kernel(&pc.f, &pc.g, &pc.a, &pc.b, &pc.c, &pc.d).map_err(structure)?;
                    estimate_returns(&KernelWalk { kernel }, &horizons, m, seed, exec)
                }
                ProcessKind::Measure => {
                    let s = parse_irrational(&a.s)?;
                    let mu = build_measure(&a.measure, &s)?;
                    estimate_returns(&MeasureWalk::new(&mu, &s), &horizons, m, seed, exec)
                }
            };
            Ok((
                match format {
                    Format::Csv => ctx.csv(a, format, "step,estimate", &returns_rows(&est)),
                    _ => {
                        let growth = est[1].mean / est[0].mean - 1.0;
                        ctx.report(a, format, json!({ "estimates": est, "relative_growth": growth }))
                    }
                },
                format,
            ))
        }
    }
}

fn write_output(cli: &Cli, text: &str, format: Format) -> Result<Option<PathBuf>, Failure> {
    let path = match (&cli.output, &cli.out_dir) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Validation(format!("cannot create {}: {e}", dir.display())))?;
            Some(dir.join(format!("{}.{}", cli.command.name(), format.extension())))
        }
        (None, None) => None,
    };
    match &path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Validation(format!("cannot write {}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(path)
}

fn run(argv: impl IntoIterator<Item = String>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return EXIT_USAGE;
    }
    let ctx = Context {
        cli: &cli,
        exec: Execution::from_threads(cli.threads),
    };
    let result = execute(&ctx).and_then(|(text, format)| write_output(&cli, &text, format));
    match result {
        Ok(Some(path)) => {
            eprintln!("wrote {}", path.display());
            0
        }
        Ok(None) => 0,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            EXIT_VALIDATION
        }
        Err(Failure::Structure(m)) => {
            eprintln!("structure check failed: {m}");
            EXIT_STRUCTURE
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            eprintln!("points use the grammar a+b*sqrt(k) with a, b written as num or num/den");
            EXIT_USAGE
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args()))
}
