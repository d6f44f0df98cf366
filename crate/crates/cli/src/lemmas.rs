//! Randomised battery of the deterministic balancing-reordering inequalities
//! and engine equivalences. Any failure is a bug.

use gradorder_core::balancing::{self, BalanceConfig};
use gradorder_core::fl::{run_fl_auto, FlConfig, FlOrdererKind};
use gradorder_core::ordering::{self, basic_lemma, chunked_pair_lemma, pair_lemma, BrInput, LemmaCheck};
use gradorder_core::sgd::{run_sgd_auto, SgdConfig};
use gradorder_core::strategies::{grab_walk_constant, permute_grab, GrabStreaming};
use gradorder_core::objectives::{generate_ensemble, EnsembleParams};
use gradorder_core::{seeded_rng, Permutation, RunRng, Sign, SignSequence};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};

/// Additive tolerance of the inequality checks.
pub const LEMMA_TOL: f64 = 1e-9;
/// Coordinatewise tolerance of the FL-to-SGD reduction.
pub const REDUCTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub trials: usize,
    pub n_max: usize,
    pub d_max: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub trial: usize,
    /// Seed that regenerates the instance.
    pub seed: u64,
    pub instance: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    /// Largest `lhs − rhs` seen, for the inequality checks.
    pub worst_margin: Option<f64>,
    /// The first few failures with their instances.
    pub failures: Vec<Failure>,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub params: LemmaParams,
    pub checks: Vec<CheckResult>,
    pub elapsed_secs: f64,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::ok)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const MAX_DUMPS: usize = 3;

fn trial_seed(seed: u64, check: usize, trial: usize) -> u64 {
    seed ^ ((check as u64) << 56) ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn vectors(rng: &mut RunRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

fn random_signs(rng: &mut RunRng, n: usize) -> SignSequence {
    (0..n).map(|_| if rng.random::<bool>() { Sign::Plus } else { Sign::Minus }).collect()
}

/// Arbitrary signs half the time, balancer output otherwise.
fn signs_for(rng: &mut RunRng, vs: &[Vec<f64>]) -> CliResult<SignSequence> {
    if vs.is_empty() || rng.random::<bool>() {
        return Ok(random_signs(rng, vs.len()));
    }
    let cfg = if rng.random::<bool>() { BalanceConfig::greedy() } else { BalanceConfig::probabilistic(None) };
    Ok(balancing::balance(vs, &cfg, rng)?)
}

fn signs_json(s: &SignSequence) -> Vec<i8> {
    s.iter().map(|e| e.value() as i8).collect()
}

struct Tally {
    res: CheckResult,
}

impl Tally {
    fn new(name: &str, trials: usize) -> Self {
        Self { res: CheckResult { name: name.into(), trials, passed: 0, worst_margin: None, failures: Vec::new() } }
    }

    fn record(&mut self, ok: bool, trial: usize, seed: u64, instance: impl FnOnce() -> serde_json::Value) {
        if ok {
            self.res.passed += 1;
        } else if self.res.failures.len() < MAX_DUMPS {
            self.res.failures.push(Failure { trial, seed, instance: instance() });
        }
    }

    fn inequality(&mut self, c: LemmaCheck, trial: usize, seed: u64, instance: impl FnOnce() -> serde_json::Value) {
        let margin = c.lhs - c.rhs;
        self.res.worst_margin = Some(self.res.worst_margin.map_or(margin, |m| m.max(margin)));
        self.record(c.holds(LEMMA_TOL), trial, seed, || {
            let mut v = instance();
            v["lhs"] = json!(c.lhs);
            v["rhs"] = json!(c.rhs);
            v
        });
    }
}

fn basic_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("basic", p.trials);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = rng.random_range(1..=p.n_max);
        let d = rng.random_range(1..=p.d_max);
        let z = vectors(&mut rng, n, d);
        let pi = Permutation::uniform_random(n, &mut rng)?;
        let ordered: Vec<Vec<f64>> = pi.order().iter().map(|&i| z[i].clone()).collect();
        let eps = signs_for(&mut rng, &ordered)?;
        let c = basic_lemma(&z, &pi, &eps)?;
        t.inequality(c, trial, seed, || json!({"vectors": z, "pi": pi, "signs": signs_json(&eps)}));
    }
    Ok(t.res)
}

fn pair_instance(rng: &mut RunRng, n: usize, d: usize) -> CliResult<(Vec<Vec<f64>>, Permutation, SignSequence)> {
    let z = vectors(rng, n, d);
    let pi = Permutation::uniform_random(n, rng)?;
    let diffs = ordering::pair_differences(&pi, &z)?;
    let eps = signs_for(rng, &diffs)?;
    Ok((z, pi, eps))
}

fn pair_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("pair", p.trials);
    let half_max = (p.n_max / 2).max(1);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = 2 * rng.random_range(1..=half_max);
        let d = rng.random_range(1..=p.d_max);
        let (z, pi, eps) = pair_instance(&mut rng, n, d)?;
        let c = pair_lemma(&z, &pi, &eps)?;
        t.inequality(c, trial, seed, || json!({"vectors": z, "pi": pi, "pair_signs": signs_json(&eps)}));
    }
    Ok(t.res)
}

fn chunked_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("chunked-pair", p.trials);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let choices: Vec<usize> = [2usize, 4, 8].into_iter().filter(|&s| s <= p.n_max.max(2)).collect();
        let s = choices[rng.random_range(0..choices.len())];
        let n = s * rng.random_range(1..=(p.n_max / s).max(1));
        let d = rng.random_range(1..=p.d_max);
        let (z, pi, eps) = pair_instance(&mut rng, n, d)?;
        let c = chunked_pair_lemma(&z, &pi, &eps, s)?;
        t.inequality(c, trial, seed, || json!({"vectors": z, "pi": pi, "pair_signs": signs_json(&eps), "s": s}));
    }
    Ok(t.res)
}

fn reorder_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("reorder-bijection", p.trials);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = rng.random_range(1..=p.n_max);
        let pi = Permutation::uniform_random(n, &mut rng)?;
        let eps = random_signs(&mut rng, n);
        let next = ordering::reorder(&pi, &eps)?;
        let tagged: Vec<(usize, Sign)> = pi.order().iter().copied().zip(eps.iter()).collect();
        let mut expect: Vec<usize> = tagged.iter().filter(|(_, e)| *e == Sign::Plus).map(|&(i, _)| i).collect();
        expect.extend(tagged.iter().rev().filter(|(_, e)| *e == Sign::Minus).map(|&(i, _)| i));
        let ok = next.order() == expect.as_slice();
        t.record(ok, trial, seed, || json!({"pi": pi, "signs": signs_json(&eps), "got": next}));
    }
    Ok(t.res)
}

fn pair_sign_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("pair-sign-structure", p.trials);
    let half_max = (p.n_max / 2).max(1);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = 2 * rng.random_range(1..=half_max);
        let d = rng.random_range(1..=p.d_max);
        let z = vectors(&mut rng, n, d);
        let pi = Permutation::uniform_random(n, &mut rng)?;
        let mean = gradorder_core::linalg::mean(&z, d);
        let cfg = if rng.random::<bool>() { BalanceConfig::greedy() } else { BalanceConfig::probabilistic(None) };
        let out = ordering::pair_br(BrInput { pi: &pi, vectors: &z, mean: &mean }, &cfg, &mut rng)?;
        let pair = out.pair_signs.clone().unwrap_or_default();
        let s = out.signs.signs();
        let ok = pair.len() == n / 2
            && pair.iter().enumerate().all(|(l, e)| s[2 * l] == e && s[2 * l + 1] == e.flip())
            && out.permutation == ordering::reorder(&pi, &out.signs)?;
        t.record(ok, trial, seed, || json!({"vectors": z, "pi": pi, "signs": signs_json(&out.signs)}));
    }
    Ok(t.res)
}

fn grab_forms_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("grab-forms", p.trials);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = rng.random_range(1..=p.n_max);
        let d = rng.random_range(1..=p.d_max);
        let grads = vectors(&mut rng, n, d);
        let stale = vectors(&mut rng, 1, d).remove(0);
        let pi = Permutation::uniform_random(n, &mut rng)?;
        let cfg = if rng.random::<bool>() { BalanceConfig::greedy() } else { BalanceConfig::probabilistic(None) };
        let walk_seed: u64 = rng.random();
        let (a, _, _) = permute_grab(&pi, &grads, &stale, &cfg, &mut seeded_rng(walk_seed))?;
        let c = grab_walk_constant(&grads, &stale, &cfg);
        let mut st = GrabStreaming::begin(pi.clone(), stale.clone(), c, cfg.mode);
        let mut walk = seeded_rng(walk_seed);
        for g in &grads {
            st.step(g, &mut walk)?;
        }
        let (b, _, _) = st.finish()?;
        t.record(a == b, trial, seed, || json!({"grads": grads, "stale": stale, "pi": pi, "epoch_end": a, "streaming": b}));
    }
    Ok(t.res)
}

/// Largest coordinatewise gap between FL(S=1, K=1, η=1) and SGD over
/// `epochs` epochs on one random instance.
pub fn fl_reduction_gap(seed: u64, n: usize, d: usize, epochs: usize, kind: FlOrdererKind) -> CliResult<f64> {
    let ens = generate_ensemble(&EnsembleParams { n, d, ..Default::default() }, &mut seeded_rng(seed))?;
    let mut rng = seeded_rng(seed ^ 0x5151);
    let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let c = gradorder_core::balancing::theoretical_c(d, n, 0.1);
    let gamma = gradorder_core::sgd::step_size_cap(&ens.smoothness(), n, gradorder_core::strategies::OrdererKind::Rr, c);
    let fl = FlConfig::new(gamma, 1, 1, epochs, x0.clone(), kind, seed);
    let sgd = SgdConfig::new(gamma, epochs, x0, fl.orderer_spec(), seed);
    let a = run_fl_auto(&ens, &fl)?;
    let b = run_sgd_auto(&ens, &sgd)?;
    let mut gap = 0.0_f64;
    for (ra, rb) in a.iter().zip(&b) {
        if ra.permutation != rb.permutation {
            return Ok(f64::INFINITY);
        }
        for (u, v) in ra.x.iter().zip(&rb.x) {
            gap = gap.max((u - v).abs());
        }
    }
    Ok(gap)
}

fn fl_reduction_check(p: &LemmaParams, idx: usize) -> CliResult<CheckResult> {
    let mut t = Tally::new("fl-reduction", p.trials);
    for trial in 0..p.trials {
        let seed = trial_seed(p.seed, idx, trial);
        let mut rng = seeded_rng(seed);
        let n = rng.random_range(1..=p.n_max.min(16));
        let d = rng.random_range(1..=p.d_max.min(3));
        let kind = if rng.random::<bool>() { FlOrdererKind::FlRr } else { FlOrdererKind::FlOp };
        let gap = fl_reduction_gap(seed, n, d, 5, kind)?;
        t.record(gap <= REDUCTION_TOL, trial, seed, || json!({"n": n, "d": d, "orderer": kind.name(), "gap": gap}));
    }
    Ok(t.res)
}

/// Runs every check on `trials` random instances.
pub fn verify_lemmas(p: &LemmaParams) -> CliResult<LemmaReport> {
    if p.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    if p.n_max < 2 || p.d_max == 0 {
        return Err(CliError::Config("lemma instances need n_max ≥ 2 and d_max ≥ 1".into()));
    }
    let start = std::time::Instant::now();
    type Check = fn(&LemmaParams, usize) -> CliResult<CheckResult>;
    let checks: [Check; 7] = [
        basic_check,
        pair_check,
        chunked_check,
        reorder_check,
        pair_sign_check,
        grab_forms_check,
        fl_reduction_check,
    ];
    let results = checks
        .iter()
        .enumerate()
        .map(|(i, c)| c(p, i))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(LemmaReport { params: *p, checks: results, elapsed_secs: start.elapsed().as_secs_f64() })
}
