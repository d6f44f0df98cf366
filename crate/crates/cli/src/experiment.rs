//! Multi-seed comparison runs: every (orderer, seed) pair on a shared
//! ensemble and starting point, with traces, summary, recursion reports and
//! plots written to one self-describing directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gradorder_core::balancing::{self, theoretical_c, BalanceConfig};
use gradorder_core::fl::{fl_step_size_cap, run_fl_auto, FlConfig, FlOrdererKind};
use gradorder_core::linalg::{self, Norm};
use gradorder_core::metrics::{
    self, check_recursion, fl_theorem_bound, min_grad_norm_sq, theorem_bound, BoundInputs, ConvergenceReport,
    FlBoundTerms, RecursionSpec, SpecContext,
};
use gradorder_core::objectives::{generate_ensemble, QuadraticEnsemble};
use gradorder_core::sgd::{run_sgd_auto, step_size_cap, tuned_step_size, SgdConfig};
use gradorder_core::strategies::{OrdererKind, OrdererSpec};
use gradorder_core::trace::EpochTrace;
use gradorder_core::{seeded_rng, Permutation};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode, OrdererList, StepSize};
use crate::error::{write_file, CliError, CliResult};
use crate::plot;
use crate::summary::{band, median, spearman, OrdererSummary, RunRecord, RunStatus, Summary};

/// Specs that hold pointwise, so any violation is a bug rather than bad luck.
pub const DETERMINISTIC_SPECS: [&str; 4] = ["ap", "op", "fl-ap", "fl-op"];

/// Columns aggregated into the summary bands.
pub const SGD_BAND_COLUMNS: [&str; 4] = ["grad_norm_sq", "dist_to_opt", "order_error_2", "order_error_inf"];
pub const FL_BAND_COLUMNS: [&str; 2] = ["fl_order_error_2", "fl_order_error_inf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Sgd(OrdererKind),
    Fl(FlOrdererKind),
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sgd(k) => k.name(),
            Strategy::Fl(k) => k.name(),
        }
    }

    /// The strategy's own recursion spec, if it has one.
    pub fn own_spec(self) -> &'static str {
        match self {
            Strategy::Sgd(k) => match k {
                OrdererKind::Ap => "ap",
                OrdererKind::Rr => "rr",
                OrdererKind::Ig | OrdererKind::So | OrdererKind::Np => "op",
                OrdererKind::GrabProto => "grab-proto",
                OrdererKind::PairgrabProto => "pairgrab-proto",
                OrdererKind::Grab => "grab",
                OrdererKind::Pairgrab => "pairgrab",
            },
            Strategy::Fl(k) => match k {
                FlOrdererKind::FlAp => "fl-ap",
                FlOrdererKind::FlRr => "fl-rr",
                FlOrdererKind::FlOp => "fl-op",
                FlOrdererKind::FlGrab => "fl-grab",
            },
        }
    }

    /// Own spec plus the AP spec, which holds for every permutation.
    pub fn default_specs(self) -> Vec<String> {
        let ap = if matches!(self, Strategy::Fl(_)) { "fl-ap" } else { "ap" };
        let own = self.own_spec();
        if own == ap {
            vec![ap.into()]
        } else {
            vec![ap.into(), own.into()]
        }
    }

    fn is_grab_family(self) -> bool {
        match self {
            Strategy::Sgd(k) => k.is_grab_family(),
            Strategy::Fl(k) => k == FlOrdererKind::FlGrab,
        }
    }
}

fn strategies(list: &OrdererList) -> Vec<Strategy> {
    match list {
        OrdererList::Sgd(v) => v.iter().map(|&k| Strategy::Sgd(k)).collect(),
        OrdererList::Fl(v) => v.iter().map(|&k| Strategy::Fl(k)).collect(),
    }
}

/// Worker pool size from `GRADORDER_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("GRADORDER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn pool() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Seed of the ensemble used by `seed` when ensembles are resampled.
pub fn ensemble_seed_for(base: u64, seed: u64) -> u64 {
    base ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17)
}

fn cap_for(cfg: &ExperimentConfig, ens: &QuadraticEnsemble, s: Strategy) -> f64 {
    let profile = ens.smoothness();
    let c = theoretical_c(ens.dim(), ens.len(), cfg.balance.delta);
    match s {
        Strategy::Sgd(k) => step_size_cap(&profile, ens.len(), k, c),
        Strategy::Fl(k) => fl_step_size_cap(
            &profile,
            ens.len(),
            cfg.engine.local_steps,
            cfg.engine.clients_per_round,
            cfg.engine.eta,
            k,
            c,
        ),
    }
}

/// Step size from the tuning rule for one strategy, with constants measured
/// at `x0` only.
fn tuned_for(cfg: &ExperimentConfig, ens: &QuadraticEnsemble, x0: &[f64], s: Strategy) -> CliResult<f64> {
    let cap = cap_for(cfg, ens, s);
    let (n, d) = (ens.len(), ens.dim());
    let mut ctx = SpecContext::new(n, d, cfg.balance.delta);
    ctx.sigma = ens.empirical_sigma([x0])?;
    ctx.phi0 = metrics::order_error(ens, x0, &Permutation::identity(n)?, Norm::L2)?;
    ctx.l = ens.smoothness().local_2;
    ctx.s = cfg.engine.clients_per_round;
    let spec = RecursionSpec::builtin(s.own_spec(), &ctx)?;
    let l = metrics::l_2p(&ens.smoothness(), spec.norm);
    let f0 = ens.value(x0)? - ens.min_value();
    let q = cfg.engine.epochs;
    let (r0, t, c) = match s {
        Strategy::Sgd(_) => (f0, n * q, l * l * spec.d),
        Strategy::Fl(_) => {
            let (k, s) = (cfg.engine.local_steps as f64, cfg.engine.clients_per_round as f64);
            let c = l * l * k * k * (spec.d / (s * s) + 2.0 * ctx.sigma * ctx.sigma);
            (f0 / cfg.engine.eta, cfg.engine.local_steps * n / cfg.engine.clients_per_round * q, c)
        }
    };
    if !(f0 > 0.0 && c > 0.0) {
        return Ok(cap);
    }
    Ok(tuned_step_size(r0, t, c, 1.0 / cap)?)
}

/// The shared step size of a comparison.
pub fn resolve_gamma(cfg: &ExperimentConfig, ens: &QuadraticEnsemble, x0: &[f64]) -> CliResult<f64> {
    let list = strategies(&cfg.orderer_list()?);
    match cfg.engine.gamma {
        StepSize::Fixed(g) => Ok(g),
        StepSize::Cap => Ok(list.iter().map(|&s| cap_for(cfg, ens, s)).fold(f64::INFINITY, f64::min)),
        StepSize::Tuned => list
            .iter()
            .map(|&s| tuned_for(cfg, ens, x0, s))
            .try_fold(f64::INFINITY, |acc, g| g.map(|g| acc.min(g))),
    }
}

struct RunInputs<'a> {
    cfg: &'a ExperimentConfig,
    gamma: f64,
    x0: &'a [f64],
    ap: Option<&'a [Permutation]>,
}

fn run_trace(inp: &RunInputs<'_>, ens: &QuadraticEnsemble, s: Strategy, seed: u64) -> gradorder_core::Result<Vec<EpochTrace>> {
    let cfg = inp.cfg;
    match s {
        Strategy::Sgd(kind) => {
            let mut spec = OrdererSpec::new(kind).with_balance(cfg.balance);
            spec.ap_schedule = inp.ap.map(<[Permutation]>::to_vec);
            spec.np_rounds = cfg.ordering.np_rounds;
            spec.initial = cfg.ordering.initial_permutation.clone();
            let mut c = SgdConfig::new(inp.gamma, cfg.engine.epochs, inp.x0.to_vec(), spec, seed);
            c.record_inner = cfg.engine.record_inner;
            run_sgd_auto(ens, &c)
        }
        Strategy::Fl(kind) => {
            let mut c = FlConfig::new(
                inp.gamma,
                cfg.engine.local_steps,
                cfg.engine.clients_per_round,
                cfg.engine.epochs,
                inp.x0.to_vec(),
                kind,
                seed,
            );
            c.eta = cfg.engine.eta;
            c.op_init = cfg.ordering.fl_op_init;
            c.balance = cfg.balance;
            c.ap_schedule = inp.ap.map(<[Permutation]>::to_vec);
            c.np_rounds = cfg.ordering.np_rounds;
            c.initial = cfg.ordering.initial_permutation.clone();
            c.record_inner = cfg.engine.record_inner;
            run_fl_auto(ens, &c)
        }
    }
}

fn spec_phi(spec: &RecursionSpec, row: &EpochTrace) -> f64 {
    let inf = spec.norm == Norm::Inf;
    match (spec.fl, inf) {
        (true, _) => row.effective_order_error(inf),
        (false, true) => row.order_error_inf,
        (false, false) => row.order_error_2,
    }
}

/// Recursion check plus bound evaluation for each requested spec.
pub fn convergence_reports(
    cfg: &ExperimentConfig,
    ens: &QuadraticEnsemble,
    trace: &[EpochTrace],
    gamma: f64,
    specs: &[String],
) -> CliResult<Vec<ConvergenceReport>> {
    let mut ctx = SpecContext::new(ens.len(), ens.dim(), cfg.balance.delta).measure(ens, trace)?;
    ctx.s = cfg.engine.clients_per_round;
    let f0 = ens.value(&trace[0].x)? - ens.min_value();
    let q = trace.len() - 1;
    let profile = ens.smoothness();
    let mut out = Vec::with_capacity(specs.len());
    for name in specs {
        let spec = RecursionSpec::builtin(name, &ctx).map_err(|e| CliError::Config(e.to_string()))?;
        let rec = check_recursion(trace, &spec, cfg.checks.slack)?;
        let early: Vec<f64> = trace.iter().take(spec.nu).map(|r| spec_phi(&spec, r)).collect();
        let bound = BoundInputs::for_spec(&spec, f0, gamma, ens.len(), q, metrics::l_2p(&profile, spec.norm), early)
            .and_then(|mut b| {
                if spec.fl {
                    b.fl = Some(FlBoundTerms {
                        eta: cfg.engine.eta,
                        k: cfg.engine.local_steps,
                        s: cfg.engine.clients_per_round,
                        sigma: ctx.sigma,
                    });
                    fl_theorem_bound(&b)
                } else {
                    theorem_bound(&b)
                }
            })
            .ok();
        out.push(ConvergenceReport {
            spec: rec.spec,
            satisfied_fraction: rec.satisfied_fraction,
            worst_ratio: rec.worst_ratio,
            bound_value: bound,
            min_grad_norm_sq: min_grad_norm_sq(trace),
        });
    }
    Ok(out)
}

/// Balancer quality on the final centered gradients, scaled by their largest
/// ∞-norm.
fn effective_c(ens: &QuadraticEnsemble, last: &EpochTrace, balance: &BalanceConfig, seed: u64) -> gradorder_core::Result<Option<f64>> {
    let dev = ens.deviations(&last.x)?;
    let ordered: Vec<Vec<f64>> = last.permutation.order().iter().map(|&i| dev[i].clone()).collect();
    let scale = ordered.iter().map(|v| linalg::norm_inf(v)).fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Ok(None);
    }
    let signs = balancing::balance(&ordered, balance, &mut seeded_rng(seed))?;
    Ok(Some(balancing::signed_herding_error(&ordered, &signs, Norm::Inf)? / scale))
}

/// Writes a trace as CSV with the standard columns.
pub fn write_trace_csv(path: &Path, trace: &[EpochTrace]) -> CliResult<()> {
    let fl = trace.first().is_some_and(|r| r.fl.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(EpochTrace::columns(fl)).map_err(io)?;
    for row in trace {
        w.write_record(row.csv_fields()).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))?;
    write_file(path, bytes)
}

/// Reads back a column of a trace CSV; empty fields become NaN.
pub fn read_trace_column(path: &Path, column: &str) -> CliResult<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Config(format!("{} has no column '{column}'", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        out.push(rec[idx].parse().unwrap_or(f64::NAN));
    }
    Ok(out)
}

fn column(trace: &[EpochTrace], name: &str) -> Vec<f64> {
    trace
        .iter()
        .map(|r| match name {
            "grad_norm_sq" => r.grad_norm_sq,
            "dist_to_opt" => r.dist_to_opt,
            "order_error_2" => r.order_error_2,
            "order_error_inf" => r.order_error_inf,
            "fl_order_error_2" => r.fl.as_ref().map_or(f64::NAN, |f| f.fl_order_error_2),
            "fl_order_error_inf" => r.fl.as_ref().map_or(f64::NAN, |f| f.fl_order_error_inf),
            _ => f64::NAN,
        })
        .collect()
}

struct RunResult {
    strategy_idx: usize,
    record: RunRecord,
    trace: Option<Vec<EpochTrace>>,
}

/// What a finished experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

impl ExperimentOutcome {
    /// Exit status: 4 if every run diverged, 3 on a deterministic spec
    /// violation, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.summary.total_runs() > 0 && self.summary.diverged_runs() == self.summary.total_runs() {
            4
        } else if !self.summary.deterministic_violations.is_empty() {
            3
        } else {
            0
        }
    }
}

fn run_one(
    inp: &RunInputs<'_>,
    ens: &QuadraticEnsemble,
    ensemble_file: &Path,
    strategy_idx: usize,
    s: Strategy,
    seed: u64,
) -> CliResult<RunResult> {
    let cfg = inp.cfg;
    let mut record = RunRecord {
        orderer: s.name().into(),
        seed,
        status: RunStatus::Ok,
        trace_file: None,
        ensemble_file: ensemble_file.to_path_buf(),
        final_dist_to_opt: None,
        final_order_error_2: None,
        final_order_error_inf: None,
        min_grad_norm_sq: None,
        effective_c: None,
        reports: Vec::new(),
    };
    let trace = match run_trace(inp, ens, s, seed) {
        Ok(t) => t,
        Err(gradorder_core::Error::Divergence { epoch }) => {
            log::warn!("{} seed {seed} diverged at epoch {epoch}", s.name());
            record.status = RunStatus::Diverged { epoch };
            return Ok(RunResult { strategy_idx, record, trace: None });
        }
        Err(gradorder_core::Error::Config(m)) => return Err(CliError::Config(m)),
        Err(e) => {
            log::error!("{} seed {seed} failed: {e}", s.name());
            record.status = RunStatus::Failed { message: e.to_string() };
            return Ok(RunResult { strategy_idx, record, trace: None });
        }
    };
    let rel = PathBuf::from("runs").join(format!("{}-seed{seed}.csv", s.name()));
    write_trace_csv(&cfg.out.join(&rel), &trace)?;
    record.trace_file = Some(rel);
    let last = trace.last().expect("runs have at least one row");
    record.final_dist_to_opt = Some(last.dist_to_opt);
    record.final_order_error_2 = Some(last.effective_order_error(false));
    record.final_order_error_inf = Some(last.effective_order_error(true));
    record.min_grad_norm_sq = Some(min_grad_norm_sq(&trace));
    if s.is_grab_family() {
        record.effective_c = effective_c(ens, last, &cfg.balance, seed)?;
    }
    let specs = if cfg.checks.specs.is_empty() { s.default_specs() } else { cfg.checks.specs.clone() };
    record.reports = convergence_reports(cfg, ens, &trace, inp.gamma, &specs)?;
    Ok(RunResult { strategy_idx, record, trace: Some(trace) })
}

/// Runs every (orderer × seed) pair and writes the artifact directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    if !cfg.mode.is_comparison() {
        return Err(CliError::Config("run_experiment handles the sgd and fl modes".into()));
    }
    cfg.validate()?;
    let list = cfg.orderer_list()?;
    let strategies = strategies(&list);
    let ap = cfg.load_ap_schedule()?;
    let x0 = cfg.engine.x0.resolve(cfg.ensemble.d)?;
    let params = cfg.ensemble.params();
    let base = generate_ensemble(&params, &mut seeded_rng(cfg.ensemble.seed))?;
    let gamma = resolve_gamma(cfg, &base, &x0)?;
    log::info!("shared step size {gamma:.6e} ({})", cfg.engine.gamma);

    let dir = cfg.out.clone();
    write_file(&dir.join("config.toml"), cfg.to_toml_string()?)?;
    let mut ensembles: BTreeMap<u64, (QuadraticEnsemble, PathBuf)> = BTreeMap::new();
    if cfg.resample_ensemble {
        for &seed in &cfg.seeds {
            let es = ensemble_seed_for(cfg.ensemble.seed, seed);
            let ens = generate_ensemble(&params, &mut seeded_rng(es))?;
            let rel = PathBuf::from(format!("ensemble-seed{seed}.json"));
            write_file(&dir.join(&rel), serde_json::to_string(&ens)?)?;
            ensembles.insert(seed, (ens, rel));
        }
    } else {
        let rel = PathBuf::from("ensemble.json");
        write_file(&dir.join(&rel), serde_json::to_string(&base)?)?;
        for &seed in &cfg.seeds {
            ensembles.insert(seed, (base.clone(), rel.clone()));
        }
    }
    if let Some(ap) = &ap {
        write_file(&dir.join("ap_schedule.json"), serde_json::to_string(ap)?)?;
    }

    for &s in &strategies {
        let cap = cap_for(cfg, &base, s);
        if gamma > cap {
            log::warn!("step size {gamma:.3e} exceeds the {} cap {cap:.3e}; its guarantees do not apply", s.name());
        }
    }

    let inputs = RunInputs { cfg, gamma, x0: &x0, ap: ap.as_deref() };
    let jobs: Vec<(usize, Strategy, u64)> = strategies
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| cfg.seeds.iter().map(move |&seed| (i, s, seed)))
        .collect();
    let results: Vec<CliResult<RunResult>> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(i, s, seed)| {
                let (ens, file) = &ensembles[&seed];
                run_one(&inputs, ens, file, i, s, seed)
            })
            .collect()
    });

    let mut per: Vec<(Vec<RunRecord>, Vec<Vec<EpochTrace>>)> = vec![(Vec::new(), Vec::new()); strategies.len()];
    for r in results {
        let r = r?;
        per[r.strategy_idx].0.push(r.record);
        if let Some(t) = r.trace {
            per[r.strategy_idx].1.push(t);
        }
    }

    let fl = cfg.mode == Mode::Fl;
    let mut orderers = Vec::with_capacity(strategies.len());
    let mut violations = Vec::new();
    for (s, (runs, traces)) in strategies.iter().zip(per) {
        let mut epochs = BTreeMap::new();
        let cols = SGD_BAND_COLUMNS.iter().chain(if fl { &FL_BAND_COLUMNS[..] } else { &[] });
        for &col in cols {
            let series: Vec<Vec<f64>> = traces.iter().map(|t| column(t, col)).collect();
            if !series.is_empty() {
                epochs.insert(col.to_string(), band(&series));
            }
        }
        for r in &runs {
            for rep in &r.reports {
                if DETERMINISTIC_SPECS.contains(&rep.spec.as_str()) && rep.satisfied_fraction < 1.0 {
                    violations.push(format!("{}/{}/{}", r.orderer, r.seed, rep.spec));
                }
            }
        }
        let finals = |f: fn(&RunRecord) -> Option<f64>| {
            let v: Vec<f64> = runs.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| median(&v))
        };
        orderers.push(OrdererSummary {
            orderer: s.name().into(),
            median_final_dist_to_opt: finals(|r| r.final_dist_to_opt),
            median_final_order_error_inf: finals(|r| r.final_order_error_inf),
            runs,
            epochs,
        });
    }
    let pairs: Vec<(f64, f64)> = orderers
        .iter()
        .filter_map(|o| Some((o.median_final_order_error_inf?, o.median_final_dist_to_opt?)))
        .collect();
    let (phis, dists): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();

    let summary = Summary {
        mode: cfg.mode,
        gamma,
        gamma_rule: cfg.engine.gamma.to_string(),
        epochs: cfg.engine.epochs,
        n: cfg.ensemble.n,
        d: cfg.ensemble.d,
        x0,
        seeds: cfg.seeds.clone(),
        ensemble_seed: cfg.ensemble.seed,
        resample_ensemble: cfg.resample_ensemble,
        orderers,
        spearman_order_error_vs_dist: spearman(&phis, &dists),
        deterministic_violations: violations,
    };
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let reports: Vec<_> = summary
        .orderers
        .iter()
        .flat_map(|o| &o.runs)
        .map(|r| serde_json::json!({"orderer": r.orderer, "seed": r.seed, "reports": r.reports}))
        .collect();
    write_file(&dir.join("recursion.json"), serde_json::to_string_pretty(&reports)?)?;

    if cfg.plot {
        let mut metrics = vec!["dist_to_opt", "order_error_inf"];
        if fl {
            metrics.push("fl_order_error_inf");
        }
        for m in metrics {
            let svg = plot::render(&summary, m)?;
            write_file(&dir.join(format!("{m}.svg")), svg)?;
        }
    }
    for v in &summary.deterministic_violations {
        log::error!("deterministic recursion spec violated: {v}");
    }
    Ok(ExperimentOutcome { dir, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode, orderers: &[&str], dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig { mode, ..Default::default() };
        c.orderers = orderers.iter().map(|s| s.to_string()).collect();
        c.seeds = vec![0, 1, 2];
        c.ensemble.n = 20;
        c.engine.epochs = 8;
        c.engine.gamma = StepSize::Fixed(0.005);
        c.engine.local_steps = 2;
        c.out = dir.to_path_buf();
        c
    }

    #[test]
    fn default_specs() {
        assert_eq!(Strategy::Sgd(OrdererKind::Ap).default_specs(), vec!["ap"]);
        assert_eq!(Strategy::Sgd(OrdererKind::So).default_specs(), vec!["ap", "op"]);
        assert_eq!(Strategy::Fl(FlOrdererKind::FlGrab).default_specs(), vec!["fl-ap", "fl-grab"]);
    }

    #[test]
    fn sgd_experiment_writes_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(Mode::Sgd, &["rr", "so", "grab", "pairgrab"], tmp.path());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.exit_code(), 0);
        assert_eq!(std::fs::read_dir(tmp.path().join("runs")).unwrap().count(), 12);
        for f in ["summary.json", "config.toml", "ensemble.json", "recursion.json", "dist_to_opt.svg"] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        let s = &out.summary;
        for o in &s.orderers {
            let b = &o.epochs["dist_to_opt"];
            assert_eq!(b.median.len(), 9);
            assert!(b.min.iter().zip(&b.max).all(|(a, z)| a <= z));
        }
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(again.summary, out.summary);
    }

    #[test]
    fn fl_experiment_and_rejection() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(Mode::Fl, &["fl-rr", "fl-op", "fl-grab"], tmp.path());
        cfg.engine.gamma = StepSize::Cap;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.gamma > 0.0);
        assert!(out.summary.orderers[2].epochs.contains_key("fl_order_error_inf"));
        cfg.engine.clients_per_round = 3;
        let tmp2 = tempfile::tempdir().unwrap();
        cfg.out = tmp2.path().to_path_buf();
        assert!(matches!(run_experiment(&cfg), Err(CliError::Config(_))));
        assert!(!tmp2.path().join("summary.json").exists());
    }

    #[test]
    fn divergence_is_recorded() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(Mode::Sgd, &["rr"], tmp.path());
        cfg.engine.gamma = StepSize::Fixed(1e6);
        cfg.plot = false;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.diverged_runs(), 3);
        assert_eq!(out.exit_code(), 4);
    }

    #[test]
    fn deterministic_violation_exits_3() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(Mode::Sgd, &["so"], tmp.path());
        cfg.plot = false;
        let mut out = run_experiment(&cfg).unwrap();
        assert!(out.summary.deterministic_violations.is_empty());
        out.summary.deterministic_violations.push("so seed 0: op".into());
        assert_eq!(out.exit_code(), 3);
    }

    #[test]
    fn tuned_step_is_below_cap() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(Mode::Sgd, &["rr", "grab"], tmp.path());
        let ens = generate_ensemble(&cfg.ensemble.params(), &mut seeded_rng(0)).unwrap();
        let x0 = vec![10.0];
        cfg.engine.gamma = StepSize::Cap;
        let cap = resolve_gamma(&cfg, &ens, &x0).unwrap();
        cfg.engine.gamma = StepSize::Tuned;
        let tuned = resolve_gamma(&cfg, &ens, &x0).unwrap();
        assert!(tuned > 0.0 && tuned <= cap);
    }

    #[test]
    fn csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(Mode::Sgd, &["pairgrab"], tmp.path());
        let out = run_experiment(&cfg).unwrap();
        let rec = &out.summary.orderers[0].runs[0];
        let path = tmp.path().join(rec.trace_file.as_ref().unwrap());
        let dist = read_trace_column(&path, "dist_to_opt").unwrap();
        assert_eq!(dist.last().copied(), rec.final_dist_to_opt);
        assert!(read_trace_column(&path, "nope").is_err());
    }
}
