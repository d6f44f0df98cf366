//! Regularized-participation federated learning: every client takes part
//! exactly once per epoch, `S` clients per round, each running `K` local GD
//! steps from the current server model.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::balancing::BalanceConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::metrics;
use crate::objectives::{QuadraticEnsemble, SmoothnessProfile};
use crate::perm::{Permutation, SignSequence};
use crate::sgd::start_row;
use crate::strategies::{self, EpochFeed, Orderer, OrdererKind, OrdererSpec};
use crate::trace::{EpochTrace, FlEpochData};
use crate::{seeded_rng, RunRng};

/// How FL-OP picks its single permutation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpInit {
    /// Identity, or the caller-supplied initial permutation.
    Arbitrary,
    #[default]
    Random,
    /// Pair balancing of the pseudo-gradients at `x_0`.
    Nice,
}

impl FromStr for OpInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arbitrary" | "ig" => Ok(OpInit::Arbitrary),
            "random" | "so" => Ok(OpInit::Random),
            "nice" | "np" => Ok(OpInit::Nice),
            other => Err(Error::Config(format!("unknown FL-OP start '{other}', expected arbitrary, random or nice"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlOrdererKind {
    FlAp,
    FlRr,
    FlOp,
    FlGrab,
}

impl FlOrdererKind {
    pub const ALL: [FlOrdererKind; 4] = [FlOrdererKind::FlAp, FlOrdererKind::FlRr, FlOrdererKind::FlOp, FlOrdererKind::FlGrab];

    pub fn name(self) -> &'static str {
        match self {
            FlOrdererKind::FlAp => "fl-ap",
            FlOrdererKind::FlRr => "fl-rr",
            FlOrdererKind::FlOp => "fl-op",
            FlOrdererKind::FlGrab => "fl-grab",
        }
    }

    /// The SGD orderer that realises this FL strategy on pseudo-gradients.
    pub fn orderer_kind(self, op_init: OpInit) -> OrdererKind {
        match (self, op_init) {
            (FlOrdererKind::FlAp, _) => OrdererKind::Ap,
            (FlOrdererKind::FlRr, _) => OrdererKind::Rr,
            (FlOrdererKind::FlOp, OpInit::Arbitrary) => OrdererKind::Ig,
            (FlOrdererKind::FlOp, OpInit::Random) => OrdererKind::So,
            (FlOrdererKind::FlOp, OpInit::Nice) => OrdererKind::Np,
            (FlOrdererKind::FlGrab, _) => OrdererKind::Pairgrab,
        }
    }
}

impl fmt::Display for FlOrdererKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlOrdererKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let norm = if norm.starts_with("fl-") { norm } else { format!("fl-{norm}") };
        FlOrdererKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown FL orderer '{s}', expected fl-ap, fl-rr, fl-op or fl-grab")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    /// Local step size.
    pub gamma: f64,
    /// Global step size.
    pub eta: f64,
    /// Local GD steps per client.
    pub k: usize,
    /// Clients per round.
    pub s: usize,
    pub epochs: usize,
    pub x0: Vec<f64>,
    pub orderer: FlOrdererKind,
    pub op_init: OpInit,
    pub balance: BalanceConfig,
    pub ap_schedule: Option<Vec<Permutation>>,
    pub np_rounds: Option<usize>,
    pub initial: Option<Permutation>,
    pub seed: u64,
    /// Keep every local iterate and every post-round server model.
    pub record_inner: bool,
}

impl FlConfig {
    pub fn new(gamma: f64, k: usize, s: usize, epochs: usize, x0: Vec<f64>, orderer: FlOrdererKind, seed: u64) -> Self {
        Self {
            gamma,
            eta: 1.0,
            k,
            s,
            epochs,
            x0,
            orderer,
            op_init: OpInit::default(),
            balance: BalanceConfig::default(),
            ap_schedule: None,
            np_rounds: None,
            initial: None,
            seed,
            record_inner: false,
        }
    }

    pub fn orderer_spec(&self) -> OrdererSpec {
        let mut spec = OrdererSpec::new(self.orderer.orderer_kind(self.op_init));
        spec.balance = self.balance;
        spec.ap_schedule = self.ap_schedule.clone();
        spec.np_rounds = self.np_rounds;
        spec.initial = self.initial.clone();
        spec
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("local step size must be finite and non-negative, got {}", self.gamma)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("global step size must be positive, got {}", self.eta)));
        }
        if self.k == 0 || self.s == 0 || self.epochs == 0 {
            return Err(Error::Config("K, S and the epoch count must all be at least 1".into()));
        }
        if !n.is_multiple_of(self.s) {
            return Err(Error::Config(format!("clients per round S = {} must divide N = {n}", self.s)));
        }
        if self.orderer == FlOrdererKind::FlGrab && (!self.s.is_multiple_of(2) || !n.is_multiple_of(2)) {
            return Err(Error::Config(format!("fl-grab needs even S and N, got S = {}, N = {n}", self.s)));
        }
        if self.x0.len() != d {
            return Err(Error::Shape { expected: d, got: self.x0.len() });
        }
        Ok(())
    }
}

/// Local step-size ceiling with `m = K·N/S` local steps per unit of server
/// progress: `min{1/(ηLm), 1/(32·L_2·m)}`, and for FL-GraB
/// `min{1/(ηLm), 1/(128·L_{2,∞}·K(N+C)/S), 1/(128(1+η)·L_∞·m)}`.
pub fn fl_step_size_cap(profile: &SmoothnessProfile, n: usize, k: usize, s: usize, eta: f64, kind: FlOrdererKind, c: f64) -> f64 {
    let inv = |v: f64| if v > 0.0 { 1.0 / v } else { f64::INFINITY };
    let (n, k, s) = (n as f64, k as f64, s as f64);
    let m = k * n / s;
    let global = inv(eta * profile.global * m);
    match kind {
        FlOrdererKind::FlGrab => global
            .min(inv(128.0 * profile.local_2_inf * k * (n + c) / s))
            .min(inv(128.0 * (1.0 + eta) * profile.local_inf * m)),
        _ => global.min(inv(32.0 * profile.local_2 * m)),
    }
}

/// FL order error: `max_{n ∈ [N]} ‖Σ_{i < v(n)} (∇f_{π(i)}(x) − ∇f(x))‖` with
/// `v(n) = ⌊n/S⌋·S`, i.e. only block boundaries count.
pub fn fl_order_error(ens: &QuadraticEnsemble, x: &[f64], pi: &Permutation, s: usize, norm: Norm) -> Result<f64> {
    let [e] = fl_order_errors(ens, x, pi, s, &[norm])?;
    Ok(e)
}

pub fn fl_order_errors<const K: usize>(
    ens: &QuadraticEnsemble,
    x: &[f64],
    pi: &Permutation,
    s: usize,
    norms: &[Norm; K],
) -> Result<[f64; K]> {
    if s == 0 || !pi.len().is_multiple_of(s) {
        return Err(Error::InvalidArgument(format!("block size {s} must divide N = {}", pi.len())));
    }
    if pi.len() != ens.len() {
        return Err(Error::LengthMismatch { expected: ens.len(), got: pi.len() });
    }
    let mean = ens.full_grad(x)?;
    Ok(metrics::prefix_scan(ens, x, &mean, pi, s, norms))
}

/// `K` local GD steps from `start`; returns the end point. `visit` sees every
/// local iterate after it is produced.
fn local_train(ens: &QuadraticEnsemble, client: usize, start: &[f64], gamma: f64, k: usize, mut visit: impl FnMut(&[f64])) -> Vec<f64> {
    let mut x = start.to_vec();
    let mut g = vec![0.0; x.len()];
    for _ in 0..k {
        ens.grad_into(client, &x, &mut g);
        linalg::axpy(&mut x, -gamma, &g);
        visit(&x);
    }
    x
}

/// Pseudo-gradient `p = x_{0} − x_{K}` of one client starting from `start`.
pub fn pseudo_gradient(ens: &QuadraticEnsemble, client: usize, start: &[f64], gamma: f64, k: usize) -> Vec<f64> {
    let end = local_train(ens, client, start, gamma, k, |_| {});
    linalg::sub(start, &end)
}

/// FL-GraB server-side ordering: the pair-balancing skeleton of PairGraB
/// applied to the pseudo-gradients (processing order).
pub fn permute_fl_grab<R: Rng + ?Sized>(
    pi_q: &Permutation,
    pseudo_grads: &[Vec<f64>],
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<(Permutation, SignSequence)> {
    strategies::permute_pairgrab(pi_q, pseudo_grads, cfg, rng)
}

/// Runs FL with `π_0` chosen by the orderer.
pub fn run_fl_auto(ens: &QuadraticEnsemble, cfg: &FlConfig) -> Result<Vec<EpochTrace>> {
    cfg.validate(ens.len(), ens.dim())?;
    let mut orderer = Orderer::new(&cfg.orderer_spec(), ens.len(), ens.dim())?;
    let mut rng = seeded_rng(cfg.seed);
    let pi0 = orderer.initial(
        || {
            Ok((0..ens.len())
                .map(|n| pseudo_gradient(ens, n, &cfg.x0, cfg.gamma, cfg.k))
                .collect())
        },
        &mut rng,
    )?;
    fl_loop(ens, cfg, orderer, pi0, rng)
}

/// Runs FL from the given `π_0`. Returns `Q + 1` rows.
pub fn run_fl(ens: &QuadraticEnsemble, cfg: &FlConfig, pi0: &Permutation) -> Result<Vec<EpochTrace>> {
    cfg.validate(ens.len(), ens.dim())?;
    if pi0.len() != ens.len() {
        return Err(Error::LengthMismatch { expected: ens.len(), got: pi0.len() });
    }
    let orderer = Orderer::new(&cfg.orderer_spec(), ens.len(), ens.dim())?;
    fl_loop(ens, cfg, orderer, pi0.clone(), seeded_rng(cfg.seed))
}

fn fl_row(ens: &QuadraticEnsemble, cfg: &FlConfig, q: usize, x: &[f64], opt: &[f64], pi: &Permutation) -> EpochTrace {
    let mut row = start_row(ens, q, x, opt, pi);
    let mean = ens.full_grad_unchecked(x);
    let [e2, einf] = metrics::prefix_scan(ens, x, &mean, pi, cfg.s, &[Norm::L2, Norm::Inf]);
    row.fl = Some(FlEpochData {
        round: q * (ens.len() / cfg.s),
        fl_order_error_2: e2,
        fl_order_error_inf: einf,
    });
    row
}

fn fl_loop(
    ens: &QuadraticEnsemble,
    cfg: &FlConfig,
    mut orderer: Orderer,
    mut pi: Permutation,
    mut rng: RunRng,
) -> Result<Vec<EpochTrace>> {
    let (n, d) = (ens.len(), ens.dim());
    let opt = ens.optimum();
    let mut x = cfg.x0.clone();
    let mut rows = Vec::with_capacity(cfg.epochs + 1);
    for q in 0..cfg.epochs {
        let mut row = fl_row(ens, cfg, q, &x, &opt, &pi);
        let mut w = x.clone();
        let mut pseudo = orderer.needs_step_grads().then(|| Vec::with_capacity(n));
        let mut inner = cfg.record_inner.then(Vec::new);
        let (mut dev2, mut dev_inf) = (0.0_f64, 0.0_f64);
        let mut track = |p: &[f64], inner: &mut Option<Vec<Vec<f64>>>| {
            dev2 = dev2.max(linalg::dist2(p, &x));
            dev_inf = dev_inf.max(linalg::dist(p, &x, Norm::Inf));
            if let Some(v) = inner.as_mut() {
                v.push(p.to_vec());
            }
        };

        for block in pi.order().chunks(cfg.s) {
            // Every client in the round starts from the same server model.
            let start = w.clone();
            let mut block_sum = vec![0.0; d];
            for &client in block {
                let end = local_train(ens, client, &start, cfg.gamma, cfg.k, |p| track(p, &mut inner));
                let p = linalg::sub(&start, &end);
                linalg::axpy(&mut block_sum, 1.0, &p);
                if let Some(ps) = pseudo.as_mut() {
                    ps.push(p);
                }
            }
            linalg::axpy(&mut w, -1.0 / cfg.s as f64, &block_sum);
            if !linalg::is_finite(&w) {
                return Err(Error::Divergence { epoch: q });
            }
            track(&w, &mut inner);
        }

        let next_x: Vec<f64> = x.iter().zip(&w).map(|(xq, wv)| xq - cfg.eta * (xq - wv)).collect();
        if !linalg::is_finite(&next_x) {
            return Err(Error::Divergence { epoch: q });
        }
        row.param_dev_2 = Some(dev2);
        row.param_dev_inf = Some(dev_inf);
        row.extra_grads = orderer.extra_grads_per_epoch();
        row.inner = inner;
        rows.push(row);
        x = next_x;

        let feed = EpochFeed { step_grads: pseudo.as_deref(), ..Default::default() };
        pi = orderer.next(&pi, &feed, &mut rng)?;
    }
    rows.push(fl_row(ens, cfg, cfg.epochs, &x, &opt, &pi));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{generate_ensemble, EnsembleParams};
    use crate::sgd::{run_sgd_auto, SgdConfig};
    use proptest::prelude::*;

    fn ensemble(seed: u64, n: usize, d: usize) -> QuadraticEnsemble {
        let p = EnsembleParams { n, d, ..Default::default() };
        generate_ensemble(&p, &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn parse_names() {
        for k in FlOrdererKind::ALL {
            assert_eq!(k.name().parse::<FlOrdererKind>().unwrap(), k);
        }
        assert_eq!("grab".parse::<FlOrdererKind>().unwrap(), FlOrdererKind::FlGrab);
        assert_eq!("nice".parse::<OpInit>().unwrap(), OpInit::Nice);
    }

    #[test]
    fn config_rejections() {
        let ens = ensemble(0, 10, 1);
        let c = FlConfig::new(0.01, 2, 3, 2, vec![0.0], FlOrdererKind::FlRr, 0);
        assert!(matches!(run_fl_auto(&ens, &c), Err(Error::Config(_))));
        let c = FlConfig::new(0.01, 2, 5, 2, vec![0.0], FlOrdererKind::FlGrab, 0);
        assert!(matches!(run_fl_auto(&ens, &c), Err(Error::Config(_))));
    }

    #[test]
    fn reduces_to_sgd() {
        for kind in [FlOrdererKind::FlRr, FlOrdererKind::FlOp] {
            let ens = ensemble(3, 12, 2);
            let fl = FlConfig::new(0.01, 1, 1, 30, vec![1.0, -1.0], kind, 7);
            let sgd = SgdConfig::new(0.01, 30, vec![1.0, -1.0], fl.orderer_spec(), 7);
            let a = run_fl_auto(&ens, &fl).unwrap();
            let b = run_sgd_auto(&ens, &sgd).unwrap();
            for (ra, rb) in a.iter().zip(&b) {
                assert_eq!(ra.permutation, rb.permutation, "{kind}");
                for k in 0..2 {
                    assert!((ra.x[k] - rb.x[k]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_participation_is_gradient_descent() {
        let ens = ensemble(4, 8, 3);
        let c = FlConfig::new(0.02, 1, 8, 10, vec![0.5, 0.2, -1.0], FlOrdererKind::FlRr, 1);
        let t = run_fl_auto(&ens, &c).unwrap();
        let mut x = c.x0.clone();
        for r in &t {
            for k in 0..3 {
                assert!((r.x[k] - x[k]).abs() <= 1e-12);
            }
            let g = ens.full_grad(&x).unwrap();
            linalg::axpy(&mut x, -c.gamma, &g);
        }
    }

    #[test]
    fn cap_examples() {
        let p = SmoothnessProfile { global: 1.0, local_2: 2.0, local_inf: 2.0, local_2_inf: 2.0 };
        // m = 5·100/2 = 250: min{1/250, 1/16000}
        let cap = fl_step_size_cap(&p, 100, 5, 2, 1.0, FlOrdererKind::FlRr, 10.0);
        assert!((cap - 1.0 / 16000.0).abs() < 1e-18);
        // min{1/250, 1/(256·5·110/2), 1/(512·250)}
        let cap = fl_step_size_cap(&p, 100, 5, 2, 1.0, FlOrdererKind::FlGrab, 10.0);
        assert!((cap - 1.0 / 128_000.0).abs() < 1e-18);
        // One client per round and one local step recover the SGD cap.
        let sgd = crate::sgd::step_size_cap(&p, 100, OrdererKind::Rr, 10.0);
        assert_eq!(fl_step_size_cap(&p, 100, 1, 1, 1.0, FlOrdererKind::FlRr, 10.0), sgd);
    }

    #[test]
    fn frozen_with_zero_step() {
        let ens = ensemble(4, 8, 1);
        let mut c = FlConfig::new(0.0, 3, 2, 4, vec![0.5], FlOrdererKind::FlGrab, 1);
        c.record_inner = true;
        let t = run_fl_auto(&ens, &c).unwrap();
        assert!(t.iter().all(|r| r.x == vec![0.5]));
        assert_eq!(pseudo_gradient(&ens, 3, &[0.5], 0.0, 3), vec![0.0]);
        assert!(t[..4].iter().all(|r| r.param_dev_2 == Some(0.0)));
    }

    #[test]
    fn fl_order_error_examples() {
        let ens = ensemble(5, 8, 2);
        let pi = Permutation::uniform_random(8, &mut seeded_rng(0)).unwrap();
        let x = [0.1, 0.2];
        assert!(fl_order_error(&ens, &x, &pi, 8, Norm::L2).unwrap() <= 1e-12);
        let same = QuadraticEnsemble::new(vec![vec![1.0]; 4], vec![vec![1.0]; 4]).unwrap();
        assert_eq!(fl_order_error(&same, &[2.0], &Permutation::identity(4).unwrap(), 2, Norm::Inf).unwrap(), 0.0);
        assert!(fl_order_error(&ens, &x, &pi, 3, Norm::L2).is_err());
    }

    #[test]
    fn fl_grab_with_equal_pseudo_gradients_keeps_pairs() {
        let pi = Permutation::from_order(vec![3, 1, 0, 2]).unwrap();
        let p = vec![vec![0.25]; 4];
        let (next, signs) = permute_fl_grab(&pi, &p, &BalanceConfig::greedy(), &mut seeded_rng(0)).unwrap();
        assert!(signs.iter().all(|e| e == crate::Sign::Minus));
        // Pair 0 keeps its order at the front; pair 1 fills in from the back.
        assert_eq!(next.order(), &[3, 0, 2, 1]);
    }

    #[test]
    fn fl_grab_single_step_matches_pairgrab_on_gradients() {
        let ens = ensemble(8, 10, 2);
        let gamma = 0.03;
        let x = vec![0.4, -0.6];
        let pi = Permutation::uniform_random(10, &mut seeded_rng(1)).unwrap();
        let grads: Vec<Vec<f64>> = pi.order().iter().map(|&i| ens.grad(i, &x).unwrap()).collect();
        let pseudo: Vec<Vec<f64>> = pi.order().iter().map(|&i| pseudo_gradient(&ens, i, &x, gamma, 1)).collect();
        let cfg = BalanceConfig::greedy();
        let a = permute_fl_grab(&pi, &pseudo, &cfg, &mut seeded_rng(2)).unwrap();
        let b = strategies::permute_pairgrab(&pi, &grads, &cfg, &mut seeded_rng(2)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pseudo_gradient_identity(seed in any::<u64>(), k in 1usize..6) {
            let ens = ensemble(seed % 300, 6, 2);
            let gamma = 0.05;
            let start = vec![0.3, -0.8];
            let p = pseudo_gradient(&ens, 2, &start, gamma, k);
            let mut x = start.clone();
            let mut sum = vec![0.0; 2];
            for _ in 0..k {
                let g = ens.grad(2, &x).unwrap();
                linalg::axpy(&mut sum, 1.0, &g);
                linalg::axpy(&mut x, -gamma, &g);
            }
            for j in 0..2 {
                prop_assert!((p[j] - gamma * sum[j]).abs() <= 1e-12);
            }
        }

        #[test]
        fn cumulative_update_identity(seed in any::<u64>(), si in 0usize..3, k in 1usize..4) {
            let s = [1usize, 2, 4][si];
            let n = 8;
            let ens = ensemble(seed % 300, n, 2);
            let mut c = FlConfig::new(0.02, k, s, 2, vec![1.0, 0.5], FlOrdererKind::FlRr, seed);
            c.eta = 0.7;
            let t = run_fl_auto(&ens, &c).unwrap();
            // Replay the epoch to collect every local gradient.
            let row = &t[0];
            let mut w = row.x.clone();
            let mut total = vec![0.0; 2];
            for block in row.permutation.order().chunks(s) {
                let start = w.clone();
                let mut block_sum = vec![0.0; 2];
                for &client in block {
                    let mut xl = start.clone();
                    for _ in 0..k {
                        let g = ens.grad(client, &xl).unwrap();
                        linalg::axpy(&mut total, 1.0, &g);
                        linalg::axpy(&mut xl, -c.gamma, &g);
                    }
                    linalg::axpy(&mut block_sum, 1.0, &linalg::sub(&start, &xl));
                }
                linalg::axpy(&mut w, -1.0 / s as f64, &block_sum);
            }
            for j in 0..2 {
                let lhs = t[1].x[j] - row.x[j];
                let rhs = -c.gamma * c.eta / s as f64 * total[j];
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn clients_within_a_round_commute(seed in any::<u64>()) {
            let n = 8;
            let ens = ensemble(seed % 300, n, 2);
            let mut rng = seeded_rng(seed);
            let pi = Permutation::uniform_random(n, &mut rng).unwrap();
            let mut swapped = pi.order().to_vec();
            for block in swapped.chunks_mut(4) {
                block.reverse();
            }
            let swapped = Permutation::from_order(swapped).unwrap();
            let mut c = FlConfig::new(0.03, 3, 4, 1, vec![0.2, -0.3], FlOrdererKind::FlOp, 0);
            c.op_init = OpInit::Arbitrary;
            let a = run_fl(&ens, &c, &pi).unwrap();
            let b = run_fl(&ens, &c, &swapped).unwrap();
            for j in 0..2 {
                prop_assert!((a[1].x[j] - b[1].x[j]).abs() <= 1e-12);
            }
        }

        #[test]
        fn block_size_one_matches_sgd_order_error(seed in any::<u64>(), n in 1usize..30) {
            let ens = ensemble(seed % 300, n, 2);
            let mut rng = seeded_rng(seed);
            let pi = Permutation::uniform_random(n, &mut rng).unwrap();
            let x = [0.9, -0.1];
            for norm in [Norm::L2, Norm::Inf] {
                let a = fl_order_error(&ens, &x, &pi, 1, norm).unwrap();
                let b = metrics::order_error(&ens, &x, &pi, norm).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn fl_deviation_is_finite(seed in any::<u64>()) {
            let ens = ensemble(seed % 300, 8, 1);
            let c = FlConfig::new(0.01, 5, 2, 3, vec![1.0], FlOrdererKind::FlGrab, seed);
            let t = run_fl_auto(&ens, &c).unwrap();
            for r in &t[..3] {
                prop_assert!(r.param_dev_2.unwrap().is_finite());
                prop_assert!(r.param_dev_inf.unwrap() <= r.param_dev_2.unwrap() + 1e-15);
            }
        }
    }
}
