use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradorder::config::{parse_permutation, parse_seeds, ExperimentConfig, Mode, StartPoint, StepSize};
use gradorder::error::write_file;
use gradorder::{lemmas, np_build, plot, run_experiment, CliError, CliResult, LemmaParams};
use gradorder_core::balancing::BalanceMode;
use gradorder_core::fl::OpInit;

#[derive(Parser, Debug)]
#[command(name = "gradorder", version, about = "Example and client ordering simulations on quadratic ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare SGD orderers across seeds.
    RunSgd(RunArgs),
    /// Compare federated orderers across seeds.
    RunFl(RunArgs),
    /// Run whatever mode the config file names.
    Run(RunArgs),
    /// Check the balancing-reordering inequalities and engine equivalences on random instances.
    VerifyLemmas(LemmaArgs),
    /// Build the NP permutation for an ensemble.
    NpBuild(RunArgs),
    /// Draw one column of a summary as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Orderers to compare, comma-separated.
    #[arg(long, value_delimiter = ',')]
    orderer: Vec<String>,
    /// Seeds, e.g. `0..10` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    a_mean: Option<f64>,
    #[arg(long)]
    a_std: Option<f64>,
    #[arg(long)]
    b_std: Option<f64>,
    #[arg(long)]
    ensemble_seed: Option<u64>,
    /// Draw a fresh ensemble for every seed.
    #[arg(long)]
    resample_ensemble: bool,
    /// A number, `cap` or `tuned`.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// One value for all coordinates or a comma-separated vector.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    local_steps: Option<usize>,
    #[arg(long)]
    clients_per_round: Option<usize>,
    /// How FL-OP picks its permutation: arbitrary, random or nice.
    #[arg(long)]
    fl_op_init: Option<String>,
    /// `prob` or `greedy`.
    #[arg(long)]
    balance_mode: Option<String>,
    #[arg(long)]
    balance_c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    np_rounds: Option<usize>,
    /// JSON file with the AP permutation schedule.
    #[arg(long)]
    ap_schedule: Option<PathBuf>,
    /// Shared starting permutation, inline JSON array or a file holding one.
    #[arg(long)]
    initial_permutation: Option<String>,
    /// Recursion specs to check on every run, comma-separated.
    #[arg(long, value_delimiter = ',')]
    specs: Vec<String>,
    #[arg(long)]
    slack: Option<f64>,
    #[arg(long)]
    record_inner: bool,
    #[arg(long, overrides_with = "no_plot")]
    plot: bool,
    #[arg(long)]
    no_plot: bool,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    summary: PathBuf,
    #[arg(long, default_value = "dist_to_opt")]
    metric: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_balance_mode(s: &str) -> CliResult<BalanceMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "prob" | "probabilistic" => Ok(BalanceMode::Probabilistic),
        "greedy" => Ok(BalanceMode::Greedy),
        other => Err(CliError::Config(format!("balance mode must be prob or greedy, got '{other}'"))),
    }
}

fn load_base(path: &Option<PathBuf>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn build_config(a: &RunArgs, mode: Option<Mode>) -> CliResult<ExperimentConfig> {
    let mut c = load_base(&a.config)?;
    if let Some(m) = mode {
        if a.config.is_some() && c.mode != m && c.mode.is_comparison() && m.is_comparison() {
            log::info!("config mode {:?} overridden by the subcommand", c.mode);
        }
        if m == Mode::Fl && a.config.is_none() && a.orderer.is_empty() {
            c.orderers = vec!["fl-rr".into(), "fl-op".into(), "fl-grab".into()];
            c.engine.gamma = StepSize::Fixed(2e-4);
        }
        c.mode = m;
    }
    if !a.orderer.is_empty() {
        c.orderers = a.orderer.clone();
    }
    if let Some(s) = &a.seeds {
        c.seeds = parse_seeds(s)?;
    }
    if let Some(v) = &a.out {
        c.out = v.clone();
    }
    let e = &mut c.ensemble;
    e.n = a.n.unwrap_or(e.n);
    e.d = a.d.unwrap_or(e.d);
    e.a_mean = a.a_mean.unwrap_or(e.a_mean);
    e.a_std = a.a_std.unwrap_or(e.a_std);
    e.b_std = a.b_std.unwrap_or(e.b_std);
    e.seed = a.ensemble_seed.unwrap_or(e.seed);
    c.resample_ensemble |= a.resample_ensemble;
    if let Some(g) = &a.gamma {
        c.engine.gamma = g.parse()?;
    }
    c.engine.epochs = a.epochs.unwrap_or(c.engine.epochs);
    if let Some(x) = &a.x0 {
        c.engine.x0 = x.parse::<StartPoint>()?;
    }
    c.engine.eta = a.eta.unwrap_or(c.engine.eta);
    c.engine.local_steps = a.local_steps.unwrap_or(c.engine.local_steps);
    c.engine.clients_per_round = a.clients_per_round.unwrap_or(c.engine.clients_per_round);
    c.engine.record_inner |= a.record_inner;
    if let Some(s) = &a.fl_op_init {
        c.ordering.fl_op_init = s.parse::<OpInit>()?;
    }
    if let Some(m) = &a.balance_mode {
        c.balance.mode = parse_balance_mode(m)?;
    }
    if a.balance_c.is_some() {
        c.balance.c = a.balance_c;
    }
    c.balance.delta = a.delta.unwrap_or(c.balance.delta);
    if a.np_rounds.is_some() {
        c.ordering.np_rounds = a.np_rounds;
    }
    if let Some(p) = &a.ap_schedule {
        c.ordering.ap_schedule = Some(p.clone());
    }
    if let Some(p) = &a.initial_permutation {
        c.ordering.initial_permutation = Some(parse_permutation(p)?);
    }
    if !a.specs.is_empty() {
        c.checks.specs = a.specs.clone();
    }
    c.checks.slack = a.slack.unwrap_or(c.checks.slack);
    if a.plot {
        c.plot = true;
    }
    if a.no_plot {
        c.plot = false;
    }
    Ok(c)
}

fn comparison(cfg: ExperimentConfig) -> CliResult<i32> {
    let outcome = run_experiment(&cfg)?;
    let s = &outcome.summary;
    println!("step size {:.6e}; artifacts in {}", s.gamma, outcome.dir.display());
    println!("{:<16} {:>16} {:>16} {:>8}", "orderer", "median dist", "median phi_inf", "ok runs");
    for o in &s.orderers {
        let ok = o.runs.iter().filter(|r| r.is_ok()).count();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!(
            "{:<16} {:>16} {:>16} {:>5}/{}",
            o.orderer,
            fmt(o.median_final_dist_to_opt),
            fmt(o.median_final_order_error_inf),
            ok,
            o.runs.len()
        );
    }
    if let Some(r) = s.spearman_order_error_vs_dist {
        println!("rank correlation (order error vs distance): {r:.3}");
    }
    let code = outcome.exit_code();
    match code {
        4 => eprintln!("error: all {} runs diverged", s.total_runs()),
        3 => eprintln!("error: deterministic recursion specs violated: {}", s.deterministic_violations.join(", ")),
        _ => {}
    }
    Ok(code)
}

fn lemma_command(a: &LemmaArgs) -> CliResult<i32> {
    let base = load_base(&a.config)?.lemmas;
    let p = LemmaParams {
        trials: a.trials.unwrap_or(base.trials),
        n_max: a.n_max.unwrap_or(base.n_max),
        d_max: a.d_max.unwrap_or(base.d_max),
        seed: a.seed.unwrap_or(base.seed),
    };
    let report = lemmas::verify_lemmas(&p)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    for c in &report.checks {
        let status = if c.ok() { "PASS" } else { "FAIL" };
        eprintln!("{status} {:<22} {}/{}", c.name, c.passed, c.trials);
    }
    if report.all_passed() {
        Ok(0)
    } else {
        Err(CliError::Property("balancing-reordering battery found counterexamples".into()))
    }
}

fn np_command(a: &RunArgs) -> CliResult<i32> {
    let mut cfg = build_config(a, Some(Mode::NpBuild))?;
    if a.out.is_none() && a.config.is_none() {
        cfg.out = PathBuf::from("np.json");
    }
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let report = np_build(&cfg, seed)?;
    write_file(&cfg.out, serde_json::to_string_pretty(&report)?)?;
    let first = report.build.herding.first().copied().unwrap_or(0.0);
    let last = report.build.herding.last().copied().unwrap_or(0.0);
    println!("NP permutation written to {} (herding {first:.4e} -> {last:.4e} over {} rounds)", cfg.out.display(), report.rounds);
    Ok(0)
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::RunSgd(a) => comparison(build_config(&a, Some(Mode::Sgd))?),
        Command::RunFl(a) => comparison(build_config(&a, Some(Mode::Fl))?),
        Command::Run(a) => {
            let cfg = build_config(&a, None)?;
            match cfg.mode {
                Mode::Sgd | Mode::Fl => comparison(cfg),
                Mode::VerifyLemmas => lemma_command(&LemmaArgs {
                    config: a.config.clone(),
                    trials: None,
                    n_max: None,
                    d_max: None,
                    seed: None,
                    out: Some(cfg.out.join("lemmas.json")),
                }),
                Mode::NpBuild => np_command(&a),
            }
        }
        Command::VerifyLemmas(a) => lemma_command(&a),
        Command::NpBuild(a) => np_command(&a),
        Command::Plot(a) => {
            plot::emit_plot(&a.summary, &a.metric, &a.out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
