//! `odeftc` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.

mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use odeftc::analysis::{gain_bounds, verify_identities, GainBoundReport};
use odeftc::consensus::{run_consensus, Discretization, DEFAULT_DEADBAND};
use odeftc::report;
use odeftc::scenario::{Scenario, BUILTIN_SCENARIOS};
use odeftc::simulator::{monte_carlo, run_realization, Initialization};
use odeftc::{Error, GraphTopology};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "odeftc", version, about = "Distributed Kalman-Bucy filtering with fixed-time consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo run of the centralized filter and every node; writes CSVs.
    Simulate(SimulateArgs),
    /// Sufficient consensus gains for a scenario.
    Bounds(BoundsArgs),
    /// Randomized identity checks.
    Verify(VerifyArgs),
    /// Run the information-matrix consensus alone and report its settling time.
    Consensus(ConsensusArgs),
    /// Laplacian spectrum and settling-time bound of a graph.
    GraphInfo(GraphInfoArgs),
    /// List the built-in scenarios, or print one as TOML.
    Scenarios { name: Option<String> },
}

#[derive(Args, Debug)]
struct ScenarioArg {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long, short)]
    scenario: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Matched,
    Random,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Integration step h in seconds.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "ODEFTC_OUT_DIR", default_value = "odeftc-out")]
    out: PathBuf,
    /// Write sampled rows every `stride` steps.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Also write trace.csv for realization 0.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Use this algebraic connectivity instead of the scenario graph's.
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConsensusArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Horizon; defaults to T_max + 2 s.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    /// Use plain Euler with a deadband instead of the saturated scheme.
    #[arg(long)]
    euler: bool,
    #[arg(long, default_value_t = 1000)]
    stride: usize,
}

#[derive(Args, Debug)]
struct GraphInfoArgs {
    /// Scenario whose graph to describe.
    #[arg(long, short, conflicts_with = "graph")]
    scenario: Option<String>,
    /// `path:N`, `ring:N`, `complete:N` or `reference`.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long, default_value_t = 20.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.7)]
    gamma: f64,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn classify(error: Error) -> Failure {
    let code = match &error {
        Error::Numerical { .. } | Error::NonConvergence(_) | Error::Realization { .. } => 2,
        _ => 1,
    };
    Failure { code, error: error.into() }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Consensus(args) => cmd_consensus(args),
        Command::GraphInfo(args) => cmd_graph_info(args),
        Command::Scenarios { name } => cmd_scenarios(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

/// Resolve a path or built-in name; returns the scenario and its TOML source.
fn load_scenario(spec: &str) -> Result<(Scenario, String), Failure> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {spec}")).map_err(config_error)?;
        let mut scenario = Scenario::from_toml_str(&text).map_err(classify)?;
        if scenario.name == "unnamed" {
            scenario.name = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        }
        return Ok((scenario, text));
    }
    match (Scenario::builtin(spec), Scenario::builtin_source(spec)) {
        (Some(s), Some(text)) => Ok((s, text.to_string())),
        _ => Err(config_error(anyhow::anyhow!(
            "no scenario file `{spec}` and no built-in scenario of that name (built-ins: {})",
            BUILTIN_SCENARIOS.join(", ")
        ))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(config_error)
}

fn io(result: std::io::Result<()>, path: &Path) -> CmdResult {
    result.with_context(|| format!("writing {}", path.display())).map_err(config_error)
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let started = Instant::now();
    let (mut scenario, source) = load_scenario(&args.scenario.scenario)?;
    if let Some(kappa) = args.kappa {
        scenario.kappa = kappa;
    }
    let mut config = scenario.sim_config().map_err(classify)?;
    if let Some(v) = args.realizations {
        config.realizations = v;
    }
    if let Some(v) = args.step {
        config.h = v;
    }
    if let Some(v) = args.t_end {
        config.t_end = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.stride {
        config.stride = v;
    }
    if let Some(init) = args.init {
        config.init = match init {
            InitArg::Matched => Initialization::Matched,
            InitArg::Random => Initialization::Random,
        };
    }
    config.validate().map_err(classify)?;

    let summary = monte_carlo(&scenario, &config).map_err(classify)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).map_err(config_error)?;

    let path = args.out.join("mse.csv");
    let mut out = create(&path)?;
    io(report::write_mse_csv(&mut out, &summary).and_then(|_| out.flush()), &path)?;
    let path = args.out.join("cov_gap.csv");
    let mut out = create(&path)?;
    io(report::write_cov_gap_csv(&mut out, &summary).and_then(|_| out.flush()), &path)?;
    let path = args.out.join("mse.gp");
    let title = format!("{} kappa = {}", scenario.name, config.kappa);
    io(fs::write(&path, report::plot_script("mse.csv", scenario.nodes(), &title)), &path)?;
    if args.trace {
        let trace = run_realization(&scenario, &config, 0).map_err(classify)?;
        let path = args.out.join("trace.csv");
        let mut out = create(&path)?;
        io(report::write_trace_csv(&mut out, &trace).and_then(|_| out.flush()), &path)?;
    }

    let manifest = RunManifest::new("simulate", &args.scenario.scenario, &scenario, &source, &config, &args.out, started);
    let path = args.out.join("manifest.toml");
    io(fs::write(&path, manifest.to_toml().map_err(config_error)?), &path)?;

    let last = summary.mse_nodes.len() - 1;
    println!("scenario        {}", scenario.name);
    println!("kappa           {}", config.kappa);
    println!("realizations    {}", config.realizations);
    println!("t_end           {}", summary.time(last));
    println!("mse central     {:.6e}", summary.mse_central[last]);
    for (i, v) in summary.mse_nodes[last].iter().enumerate() {
        println!("mse node {:<6} {v:.6e}", i + 1);
    }
    println!("terminal gap    {:.6e} (se {:.2e})", summary.terminal_gap(), summary.terminal_gap_se());
    for (i, event) in summary.indefinite.iter().enumerate() {
        if let Some(e) = event {
            println!("warning: P_{} lost positive definiteness at step {} (t = {})", i + 1, e.step, e.t);
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_bounds(report: &GainBoundReport, name: &str, format: Format) {
    match format {
        Format::Text => {
            let note = if report.lambda_g_overridden { " (override)" } else { " (scenario graph)" };
            println!("scenario                 {name}");
            println!("N                        {}", report.nodes);
            println!("lambda_G                 {:.6}{note}", report.lambda_g);
            println!("c = sup ||C||            {:.6}", report.c);
            println!("r1 = inf ||R||           {:.6}", report.r1);
            println!("inf lambda_min(R)        {:.6}", report.r_min_eigenvalue);
            println!("L                        {:.6}", report.l);
            println!("kappa0 (norm r1)         {:.4}", report.kappa0_paper);
            println!("kappa0 (lambda_min r1)   {:.4}", report.kappa0_strict);
            match &report.kappa_battilotti {
                Some(b) => {
                    println!("steady-state bound       {:.4}", b.value);
                    println!("  Lyapunov term          {:.4}", b.lyapunov_term);
                    println!("  eta                    {:.4}", b.eta);
                }
                None => println!("steady-state bound       n/a (time-varying scenario)"),
            }
        }
        Format::Kv => {
            println!("scenario={name}");
            println!("nodes={}", report.nodes);
            println!("lambda_g={}", report::fmt_f64(report.lambda_g));
            println!("c={}", report::fmt_f64(report.c));
            println!("r1={}", report::fmt_f64(report.r1));
            println!("r_min_eigenvalue={}", report::fmt_f64(report.r_min_eigenvalue));
            println!("l={}", report::fmt_f64(report.l));
            println!("kappa0_paper={}", report::fmt_f64(report.kappa0_paper));
            println!("kappa0_strict={}", report::fmt_f64(report.kappa0_strict));
            if let Some(b) = &report.kappa_battilotti {
                println!("kappa_battilotti={}", report::fmt_f64(b.value));
                println!("eta={}", report::fmt_f64(b.eta));
            }
        }
    }
}

fn cmd_bounds(args: BoundsArgs) -> CmdResult {
    let (scenario, _) = load_scenario(&args.scenario.scenario)?;
    let report = gain_bounds(&scenario, args.lambda_g).map_err(classify)?;
    print_bounds(&report, &scenario.name, args.format);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let report = verify_identities(&mut rng, args.trials).map_err(classify)?;
    for check in &report.checks {
        let status = if check.passed() { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<48} trials {:>4}  failures {:>3}  worst {:.3e}  tol {:.0e}",
            check.name, check.trials, check.failures, check.worst, check.tolerance
        );
        if let Some(instance) = &check.first_failure {
            println!("     first failure: {instance}");
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure { code: 2, error: anyhow::anyhow!("identity checks failed") })
    }
}

fn cmd_consensus(args: ConsensusArgs) -> CmdResult {
    let (scenario, _) = load_scenario(&args.scenario.scenario)?;
    let params = scenario.consensus;
    let t_max = params.t_max(&scenario.graph).map_err(classify)?;
    let t_end = args.t_end.unwrap_or(t_max + 2.0);
    let scheme = if args.euler { Discretization::Euler { deadband: DEFAULT_DEADBAND } } else { Discretization::Saturated };
    let run = run_consensus(&scenario.sensors, &scenario.graph, &params, args.step, t_end, args.stride, args.threshold, scheme)
        .map_err(classify)?;
    println!("scenario     {}", scenario.name);
    println!("edges        {}", scenario.graph.edge_count());
    println!("lambda_G     {:.6}", scenario.graph.algebraic_connectivity());
    println!("T_max        {t_max:.4}");
    println!("t_end        {t_end:.4}");
    for (t, row) in run.times.iter().zip(&run.disagreement) {
        let worst = row.iter().copied().fold(0.0, f64::max);
        println!("t = {t:>8.4}  max disagreement {worst:.3e}");
    }
    println!("max |sum Q|  {:.3e}", run.max_q_sum);
    match run.settled_at {
        Some(t) if t <= t_max => {
            println!("settled below {:.0e} at t = {t:.4} (before T_max)", args.threshold);
            Ok(())
        }
        Some(t) => Err(Failure { code: 2, error: anyhow::anyhow!("settled at t = {t} after T_max = {t_max}") }),
        None => Err(Failure { code: 2, error: anyhow::anyhow!("disagreement did not stay below {}", args.threshold) }),
    }
}

fn parse_graph(spec: &str) -> Result<GraphTopology, Failure> {
    let bad = || config_error(anyhow::anyhow!("graph must be path:N, ring:N, complete:N or reference, got `{spec}`"));
    if spec == "reference" {
        return Ok(GraphTopology::reference_seven_node());
    }
    let (kind, count) = spec.split_once(':').ok_or_else(bad)?;
    let n: usize = count.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    match kind {
        "path" => Ok(GraphTopology::path(n)),
        "ring" => Ok(GraphTopology::ring(n)),
        "complete" => Ok(GraphTopology::complete(n)),
        _ => Err(bad()),
    }
}

fn cmd_graph_info(args: GraphInfoArgs) -> CmdResult {
    let graph = match (&args.scenario, &args.graph) {
        (Some(s), _) => load_scenario(s)?.0.graph,
        (None, Some(g)) => parse_graph(g)?,
        (None, None) => return Err(config_error(anyhow::anyhow!("pass --scenario or --graph"))),
    };
    println!("nodes        {}", graph.node_count());
    println!("edges        {}", graph.edge_count());
    let edges: Vec<String> = graph.edges().iter().map(|(i, j)| format!("({},{})", i + 1, j + 1)).collect();
    println!("edge list    {}", edges.join(" "));
    let degrees: Vec<String> = graph.degrees().iter().map(ToString::to_string).collect();
    println!("degrees      {}", degrees.join(" "));
    let spectrum: Vec<String> = graph.laplacian_spectrum().iter().map(|v| format!("{:.6}", v.max(0.0))).collect();
    println!("spectrum     {}", spectrum.join(" "));
    let lambda_g = graph.algebraic_connectivity();
    println!("lambda_G     {lambda_g:.6}");
    if graph.edge_count() > 0 {
        let t_max = odeftc::consensus::t_max(graph.edge_count(), args.alpha, args.gamma, lambda_g).map_err(classify)?;
        println!("T_max        {t_max:.4} (alpha = {}, gamma = {})", args.alpha, args.gamma);
    }
    Ok(())
}

fn cmd_scenarios(name: Option<String>) -> CmdResult {
    match name {
        None => {
            for name in BUILTIN_SCENARIOS {
                println!("{name}");
            }
            Ok(())
        }
        Some(name) => match Scenario::builtin_source(&name) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(config_error(anyhow::anyhow!("no built-in scenario `{name}`"))),
        },
    }
}
