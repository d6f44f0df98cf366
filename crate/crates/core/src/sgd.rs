//! Permutation-based SGD: one pass over all `N` examples per epoch in the
//! order `π_q`, then the orderer produces `π_{q+1}`.

use serde::{Deserialize, Serialize};

use crate::balancing::theoretical_c;
use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::metrics;
use crate::objectives::{QuadraticEnsemble, SmoothnessProfile};
use crate::perm::Permutation;
use crate::strategies::{EpochFeed, Orderer, OrdererKind, OrdererSpec};
use crate::trace::EpochTrace;
use crate::{seeded_rng, RunRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub gamma: f64,
    pub epochs: usize,
    pub x0: Vec<f64>,
    pub orderer: OrdererSpec,
    pub seed: u64,
    /// Keep every inner iterate `x_q^n` in the trace.
    pub record_inner: bool,
}

impl SgdConfig {
    pub fn new(gamma: f64, epochs: usize, x0: Vec<f64>, orderer: OrdererSpec, seed: u64) -> Self {
        Self { gamma, epochs, x0, orderer, seed, record_inner: false }
    }

    fn validate(&self, ens: &QuadraticEnsemble) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("step size must be a finite non-negative number, got {}", self.gamma)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if self.x0.len() != ens.dim() {
            return Err(Error::Shape { expected: ens.dim(), got: self.x0.len() });
        }
        Ok(())
    }
}

/// Step-size ceiling for a strategy.
///
/// Non-GraB strategies use `min{1/(LN), 1/(32·L_2·N)}`; the prototypes use
/// `min{1/(LN), 1/(32·L_{2,∞}·N), 1/(32·L_∞·N)}`. GraB and PairGraB
/// use `min{1/(LN), 1/(k·L_{2,∞}·(N+C)), 1/(k·L_∞·N)}` with `k = 128` and
/// `k = 64` respectively.
pub fn step_size_cap(profile: &SmoothnessProfile, n: usize, kind: OrdererKind, c: f64) -> f64 {
    let n = n as f64;
    let inv = |v: f64| if v > 0.0 { 1.0 / v } else { f64::INFINITY };
    let global = inv(profile.global * n);
    match kind {
        OrdererKind::Grab | OrdererKind::Pairgrab => {
            let k = if kind == OrdererKind::Grab { 128.0 } else { 64.0 };
            global
                .min(inv(k * profile.local_2_inf * (n + c)))
                .min(inv(k * profile.local_inf * n))
        }
        OrdererKind::GrabProto | OrdererKind::PairgrabProto => global
            .min(inv(32.0 * profile.local_2_inf * n))
            .min(inv(32.0 * profile.local_inf * n)),
        _ => global.min(inv(32.0 * profile.local_2 * n)),
    }
}

/// `γ = min{1/d_cap, (r0/(c·T))^{1/3}}`
pub fn tuned_step_size(r0: f64, t: usize, c: f64, d_cap: f64) -> Result<f64> {
    if !(r0 > 0.0 && c > 0.0 && d_cap > 0.0 && t > 0) {
        return Err(Error::InvalidArgument("step-size tuning needs positive arguments".into()));
    }
    Ok((1.0 / d_cap).min((r0 / (c * t as f64)).cbrt()))
}

/// Runs SGD with `π_0` chosen by the orderer itself (identity for IG, a
/// uniform draw for SO/RR/GraBs, the NP construction at `x_0`, …).
pub fn run_sgd_auto(ens: &QuadraticEnsemble, cfg: &SgdConfig) -> Result<Vec<EpochTrace>> {
    cfg.validate(ens)?;
    let mut orderer = Orderer::new(&cfg.orderer, ens.len(), ens.dim())?;
    let mut rng = seeded_rng(cfg.seed);
    let pi0 = orderer.initial(|| ens.deviations(&cfg.x0), &mut rng)?;
    run_loop(ens, cfg, orderer, pi0, rng)
}

/// Runs SGD from the given `π_0`. Returns `Q + 1` rows; the last one describes
/// `x_Q`.
pub fn run_sgd(ens: &QuadraticEnsemble, cfg: &SgdConfig, pi0: &Permutation) -> Result<Vec<EpochTrace>> {
    cfg.validate(ens)?;
    if pi0.len() != ens.len() {
        return Err(Error::LengthMismatch { expected: ens.len(), got: pi0.len() });
    }
    let orderer = Orderer::new(&cfg.orderer, ens.len(), ens.dim())?;
    run_loop(ens, cfg, orderer, pi0.clone(), seeded_rng(cfg.seed))
}

fn warn_if_above_cap(ens: &QuadraticEnsemble, cfg: &SgdConfig) {
    let c = theoretical_c(ens.dim(), ens.len(), cfg.orderer.balance.delta);
    let cap = step_size_cap(&ens.smoothness(), ens.len(), cfg.orderer.kind, c);
    if cfg.gamma > cap {
        log::debug!(
            "step size {} exceeds the {} cap {:.3e}; convergence guarantees do not apply",
            cfg.gamma,
            cfg.orderer.kind,
            cap
        );
    }
}

/// Epoch-start metrics shared by the SGD and FL engines.
pub(crate) fn start_row(ens: &QuadraticEnsemble, q: usize, x: &[f64], opt: &[f64], pi: &Permutation) -> EpochTrace {
    let mean = ens.full_grad_unchecked(x);
    let [e2, einf] = metrics::prefix_scan(ens, x, &mean, pi, 1, &[Norm::L2, Norm::Inf]);
    EpochTrace {
        q,
        x: x.to_vec(),
        grad_norm_sq: linalg::norm2_sq(&mean),
        dist_to_opt: linalg::dist2(x, opt),
        order_error_2: e2,
        order_error_inf: einf,
        param_dev_2: None,
        param_dev_inf: None,
        permutation: pi.clone(),
        extra_grads: 0,
        inner: None,
        fl: None,
    }
}

fn run_loop(
    ens: &QuadraticEnsemble,
    cfg: &SgdConfig,
    mut orderer: Orderer,
    mut pi: Permutation,
    mut rng: RunRng,
) -> Result<Vec<EpochTrace>> {
    warn_if_above_cap(ens, cfg);
    let (n, d) = (ens.len(), ens.dim());
    let opt = ens.optimum();
    let mut x = cfg.x0.clone();
    let mut rows = Vec::with_capacity(cfg.epochs + 1);
    let mut g = vec![0.0; d];
    for q in 0..cfg.epochs {
        let mut row = start_row(ens, q, &x, &opt, &pi);
        let x_q = x.clone();

        let (point_grads, mean_grad) = if orderer.needs_point_grads() {
            (Some(ens.all_grads(&x_q)?), Some(ens.full_grad(&x_q)?))
        } else {
            (None, None)
        };
        let mut step_grads = orderer.needs_step_grads().then(|| Vec::with_capacity(n));
        let mut inner = cfg.record_inner.then(|| Vec::with_capacity(n));
        let (mut dev2, mut dev_inf) = (0.0_f64, 0.0_f64);

        for &i in pi.order() {
            ens.grad_into(i, &x, &mut g);
            linalg::axpy(&mut x, -cfg.gamma, &g);
            if !linalg::is_finite(&x) {
                return Err(Error::Divergence { epoch: q });
            }
            if let Some(s) = step_grads.as_mut() {
                s.push(g.clone());
            }
            if let Some(v) = inner.as_mut() {
                v.push(x.clone());
            }
            dev2 = dev2.max(linalg::dist2(&x, &x_q));
            dev_inf = dev_inf.max(linalg::dist(&x, &x_q, Norm::Inf));
        }

        row.param_dev_2 = Some(dev2);
        row.param_dev_inf = Some(dev_inf);
        row.extra_grads = orderer.extra_grads_per_epoch();
        row.inner = inner;
        rows.push(row);

        let feed = EpochFeed {
            step_grads: step_grads.as_deref(),
            point_grads: point_grads.as_deref(),
            mean_grad: mean_grad.as_deref(),
        };
        pi = orderer.next(&pi, &feed, &mut rng)?;
    }
    rows.push(start_row(ens, cfg.epochs, &x, &opt, &pi));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{generate_ensemble, EnsembleParams};
    use crate::strategies::OrdererKind;
    use proptest::prelude::*;

    fn ensemble(seed: u64, n: usize, d: usize) -> QuadraticEnsemble {
        let p = EnsembleParams { n, d, ..Default::default() };
        generate_ensemble(&p, &mut seeded_rng(seed)).unwrap()
    }

    fn cfg(kind: OrdererKind, gamma: f64, epochs: usize, x0: Vec<f64>, seed: u64) -> SgdConfig {
        SgdConfig::new(gamma, epochs, x0, OrdererSpec::new(kind), seed)
    }

    fn spec_for(kind: OrdererKind, n: usize) -> OrdererSpec {
        let mut s = OrdererSpec::new(kind);
        if kind == OrdererKind::Ap {
            s.ap_schedule = Some(vec![
                Permutation::identity(n).unwrap(),
                Permutation::identity(n).unwrap().reversed(),
            ]);
        }
        s
    }

    #[test]
    fn single_step() {
        let ens = QuadraticEnsemble::new(vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let c = cfg(OrdererKind::Ig, 0.1, 1, vec![1.0], 0);
        let t = run_sgd(&ens, &c, &Permutation::identity(1).unwrap()).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t[1].x[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn frozen_dynamics() {
        let ens = ensemble(1, 10, 2);
        for kind in [OrdererKind::Ig, OrdererKind::So, OrdererKind::Np] {
            let c = cfg(kind, 0.0, 5, vec![0.3, -0.1], 2);
            let t = run_sgd_auto(&ens, &c).unwrap();
            for r in &t {
                assert_eq!(r.x, vec![0.3, -0.1]);
                assert_eq!(r.order_error_2, t[0].order_error_2);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let ens = ensemble(2, 20, 3);
        for kind in OrdererKind::ALL {
            let mut c = cfg(kind, 0.005, 4, vec![1.0; 3], 9);
            c.orderer = spec_for(kind, 20);
            let a = run_sgd_auto(&ens, &c).unwrap();
            let b = run_sgd_auto(&ens, &c).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let ens = QuadraticEnsemble::new(vec![vec![1.0]; 4], vec![vec![0.0]; 4]).unwrap();
        let c = cfg(OrdererKind::Ig, 1e3, 200, vec![1.0], 0);
        let r = run_sgd(&ens, &c, &Permutation::identity(4).unwrap());
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn cap_examples() {
        let p = SmoothnessProfile { global: 1.0, local_2: 1.0, local_inf: 1.0, local_2_inf: 1.0 };
        assert!((step_size_cap(&p, 10, OrdererKind::Rr, 0.0) - 1.0 / 320.0).abs() < 1e-15);
        let ratio = step_size_cap(&p, 1, OrdererKind::Rr, 0.0) / step_size_cap(&p, 32, OrdererKind::Rr, 0.0);
        assert!((ratio - 32.0).abs() < 1e-9);
        let grab = step_size_cap(&p, 10, OrdererKind::Grab, 5.0);
        assert!((grab - 1.0 / (128.0 * 15.0)).abs() < 1e-15);
        let pair = step_size_cap(&p, 10, OrdererKind::Pairgrab, 5.0);
        assert!((pair - 1.0 / (64.0 * 15.0)).abs() < 1e-15);
    }

    #[test]
    fn tuned_examples() {
        assert!((tuned_step_size(1.0, 1000, 1.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        let g = tuned_step_size(1.0, 1000, 8.0, 1e-9).unwrap();
        assert!((g - 0.05).abs() < 1e-15);
        assert!(tuned_step_size(1.0, 1000, 1e300, 10.0).unwrap() < 1e-100);
        assert!(tuned_step_size(0.0, 10, 1.0, 1.0).is_err());
    }

    #[test]
    fn identical_objectives_have_no_order_error() {
        let ens = QuadraticEnsemble::new(vec![vec![0.7, 1.1]; 8], vec![vec![0.3, -0.4]; 8]).unwrap();
        let mut reference: Option<Vec<Vec<f64>>> = None;
        for kind in OrdererKind::ALL {
            let mut c = cfg(kind, 0.01, 6, vec![2.0, -1.0], 4);
            c.orderer = spec_for(kind, 8);
            let t = run_sgd_auto(&ens, &c).unwrap();
            assert!(t.iter().all(|r| r.order_error_2 <= 1e-14 && r.order_error_inf <= 1e-14));
            let xs: Vec<Vec<f64>> = t.iter().map(|r| r.x.clone()).collect();
            match &reference {
                None => reference = Some(xs),
                Some(r) => assert_eq!(r, &xs, "{kind}"),
            }
        }
    }

    #[test]
    fn converges_below_cap() {
        let ens = ensemble(5, 50, 2);
        let c_const = theoretical_c(2, 50, 0.1);
        for kind in [OrdererKind::Rr, OrdererKind::So, OrdererKind::Grab, OrdererKind::Pairgrab] {
            let gamma = step_size_cap(&ens.smoothness(), 50, kind, c_const);
            let mut wins = 0;
            for seed in 0..10 {
                let t = run_sgd_auto(&ens, &cfg(kind, gamma, 20, vec![3.0, -3.0], seed)).unwrap();
                if t.last().unwrap().dist_to_opt < t[0].dist_to_opt {
                    wins += 1;
                }
            }
            assert!(wins >= 9, "{kind}: {wins}/10");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn telescoping_and_deviation(seed in any::<u64>(), ki in 0usize..9) {
            let kind = OrdererKind::ALL[ki];
            let n = 10;
            let ens = ensemble(seed % 500, n, 2);
            let mut c = cfg(kind, 0.01, 3, vec![0.5, 1.5], seed);
            c.orderer = spec_for(kind, n);
            c.record_inner = true;
            let t = run_sgd_auto(&ens, &c).unwrap();
            for q in 0..3 {
                let row = &t[q];
                let inner = row.inner.as_ref().unwrap();
                let mut prev = row.x.clone();
                let mut sum = vec![0.0; 2];
                for (j, &i) in row.permutation.order().iter().enumerate() {
                    linalg::axpy(&mut sum, 1.0, &ens.grad(i, &prev).unwrap());
                    prev = inner[j].clone();
                }
                for k in 0..2 {
                    let lhs = t[q + 1].x[k] - row.x[k];
                    let rhs = -c.gamma * sum[k];
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
                }
                let dev = metrics::param_deviation(Some(inner), &row.x, Norm::L2).unwrap();
                prop_assert_eq!(dev, row.param_dev_2.unwrap());
            }
        }

        #[test]
        fn drift_respects_its_bound(seed in any::<u64>()) {
            let n = 16;
            let ens = ensemble(seed % 500, n, 3);
            let prof = ens.smoothness();
            for (norm, lp) in [(Norm::L2, prof.local_2), (Norm::Inf, prof.local_inf)] {
                let gamma = 1.0 / (32.0 * lp * n as f64);
                let t = run_sgd_auto(&ens, &cfg(OrdererKind::Rr, gamma, 5, vec![1.0, -2.0, 0.5], seed)).unwrap();
                for r in &t[..5] {
                    let (phi, dev) = match norm {
                        Norm::L2 => (r.order_error_2, r.param_dev_2.unwrap()),
                        Norm::Inf => (r.order_error_inf, r.param_dev_inf.unwrap()),
                    };
                    let g = norm.of(&ens.full_grad(&r.x).unwrap());
                    prop_assert!(dev <= metrics::drift_bound(gamma, phi, n, g) + 1e-12);
                }
            }
        }
    }
}
