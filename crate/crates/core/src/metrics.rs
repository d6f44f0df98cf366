//! Order error, herding error, parameter deviation, recursion checks and
//! convergence-bound evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::objectives::{QuadraticEnsemble, SmoothnessProfile};
use crate::perm::Permutation;
use crate::trace::EpochTrace;

/// `max_{n ∈ [N]} ‖Σ_{i<n} z_{π(i)}‖` for vectors indexed by example.
pub fn herding_error(vectors: &[Vec<f64>], pi: &Permutation, norm: Norm) -> Result<f64> {
    if vectors.len() != pi.len() {
        return Err(Error::LengthMismatch { expected: pi.len(), got: vectors.len() });
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::Shape { expected: d, got: v.len() });
    }
    Ok(linalg::max_prefix_norm(pi.order().iter().map(|&i| vectors[i].as_slice()), d, norm))
}

/// Order error `φ̄` at `x` under `π`: the herding error of the deviations
/// `∇f_n(x) − ∇f(x)`.
pub fn order_error(ens: &QuadraticEnsemble, x: &[f64], pi: &Permutation, norm: Norm) -> Result<f64> {
    let [e] = order_errors(ens, x, pi, &[norm])?;
    Ok(e)
}

/// Order errors in several norms from a single prefix scan.
pub fn order_errors<const K: usize>(
    ens: &QuadraticEnsemble,
    x: &[f64],
    pi: &Permutation,
    norms: &[Norm; K],
) -> Result<[f64; K]> {
    if pi.len() != ens.len() {
        return Err(Error::LengthMismatch { expected: ens.len(), got: pi.len() });
    }
    let mean = ens.full_grad(x)?;
    Ok(prefix_scan(ens, x, &mean, pi, 1, norms))
}

/// Deviations summed along `π`; only prefixes whose length is a multiple of
/// `block` are inspected.
pub(crate) fn prefix_scan<const K: usize>(
    ens: &QuadraticEnsemble,
    x: &[f64],
    mean: &[f64],
    pi: &Permutation,
    block: usize,
    norms: &[Norm; K],
) -> [f64; K] {
    let d = ens.dim();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut best = [0.0_f64; K];
    for (j, &i) in pi.order().iter().enumerate() {
        ens.grad_into(i, x, &mut g);
        for k in 0..d {
            acc[k] += g[k] - mean[k];
        }
        if (j + 1) % block == 0 {
            for (b, norm) in best.iter_mut().zip(norms) {
                *b = b.max(norm.of(&acc));
            }
        }
    }
    best
}

/// `Δ = max_n ‖x^n − x_q‖` over the iterates visited in one epoch.
pub fn param_deviation(inner: Option<&[Vec<f64>]>, x_q: &[f64], norm: Norm) -> Result<f64> {
    let inner = inner.ok_or_else(|| {
        Error::Unavailable("parameter deviation needs the inner iterates (enable record_inner)".into())
    })?;
    Ok(inner.iter().map(|x| linalg::dist(x, x_q, norm)).fold(0.0_f64, f64::max))
}

/// Right-hand side of the SGD drift bound,
/// `(32/31)·γ·φ̄ + (32/31)·γ·N·‖∇f(x_q)‖_p`, valid when `γ·L_p·N ≤ 1/32`.
pub fn drift_bound(gamma: f64, phi: f64, n: usize, grad_norm_p: f64) -> f64 {
    32.0 / 31.0 * gamma * (phi + n as f64 * grad_norm_p)
}

/// `max_q ‖x_q − x_0‖₂` over the epoch-start points of a trace.
pub fn theta_over_trace(trace: &[EpochTrace]) -> f64 {
    let Some(first) = trace.first() else { return 0.0 };
    trace.iter().map(|r| linalg::dist2(&r.x, &first.x)).fold(0.0_f64, f64::max)
}

/// Heterogeneity `ς` measured over the epoch-start points of a trace.
pub fn sigma_over_trace(ens: &QuadraticEnsemble, trace: &[EpochTrace]) -> Result<f64> {
    ens.empirical_sigma(trace.iter().map(|r| r.x.as_slice()))
}

/// The constants `(A_1..A_ν, B_0..B_ν, D)` of one order-error recursion
/// `φ̄_q² ≤ Σ_i A_i φ̄_{q−i}² + Σ_i B_i ‖∇f(x_{q−i})‖² + D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionSpec {
    pub name: String,
    /// `A_1, …, A_ν`
    pub a: Vec<f64>,
    /// `B_0, …, B_ν`
    pub b: Vec<f64>,
    pub d: f64,
    pub nu: usize,
    /// Norm of `φ̄` on both sides.
    pub norm: Norm,
    /// Whether `φ̄` is the block (FL) order error.
    pub fl: bool,
}

/// Measured and configured quantities the built-in specs are instantiated with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecContext {
    pub n: usize,
    pub dim: usize,
    /// Clients per round (FL only).
    pub s: usize,
    pub sigma: f64,
    pub theta: f64,
    pub phi0: f64,
    /// Smoothness constant of the OP drift argument.
    pub l: f64,
    pub delta: f64,
    /// Balancing constant `C`; defaults to `30·log(dN/δ)` when built with
    /// [`SpecContext::new`].
    pub c: f64,
}

impl SpecContext {
    pub fn new(n: usize, dim: usize, delta: f64) -> Self {
        Self {
            n,
            dim,
            s: 1,
            sigma: 0.0,
            theta: 0.0,
            phi0: 0.0,
            l: 0.0,
            delta,
            c: crate::balancing::theoretical_c(dim, n, delta),
        }
    }

    /// Fills `ς`, `θ`, `φ̄_0` and `L` from a run. `φ̄_0` is taken in the 2-norm,
    /// matching the OP specs.
    pub fn measure(mut self, ens: &QuadraticEnsemble, trace: &[EpochTrace]) -> Result<Self> {
        self.sigma = sigma_over_trace(ens, trace)?;
        self.theta = theta_over_trace(trace);
        self.phi0 = trace.first().map_or(0.0, |r| r.effective_order_error(false));
        self.l = ens.smoothness().local_2;
        Ok(self)
    }
}

/// Names accepted by [`RecursionSpec::builtin`].
pub const BUILTIN_SPECS: [&str; 12] = [
    "ap",
    "rr",
    "op",
    "grab-proto",
    "pairgrab-proto",
    "grab",
    "pairgrab",
    "fl-ap",
    "fl-rr",
    "fl-op",
    "fl-grab-proto",
    "fl-grab",
];

impl RecursionSpec {
    fn new(name: &str, a: Vec<f64>, b: Vec<f64>, d: f64, norm: Norm, fl: bool) -> Self {
        let nu = a.len().max(b.len().saturating_sub(1));
        Self { name: name.into(), a, b, d, nu, norm, fl }
    }

    /// Instantiates a named spec with measured constants.
    pub fn builtin(name: &str, ctx: &SpecContext) -> Result<Self> {
        let n = ctx.n as f64;
        let n2 = n * n;
        let s2 = (ctx.s * ctx.s) as f64;
        let sig2 = ctx.sigma * ctx.sigma;
        let c2 = ctx.c * ctx.c;
        let log_term = (8.0 / ctx.delta).ln();
        let op_d = 2.0 * ctx.phi0 * ctx.phi0 + 8.0 * ctx.l * ctx.l * n2 * ctx.theta * ctx.theta;
        let spec = match name {
            "ap" => Self::new(name, vec![], vec![], n2 * sig2, Norm::L2, false),
            "rr" => Self::new(name, vec![], vec![], 4.0 * n * sig2 * log_term * log_term, Norm::L2, false),
            "op" => Self::new(name, vec![], vec![], op_d, Norm::L2, false),
            "grab-proto" => Self::new(name, vec![0.75], vec![0.0, n2 / 50.0], c2 * sig2, Norm::Inf, false),
            "pairgrab-proto" => {
                Self::new(name, vec![0.75], vec![0.0, n2 / 50.0], 4.0 * c2 * sig2, Norm::Inf, false)
            }
            "grab" => Self::new(
                name,
                vec![0.6, 0.02],
                vec![0.0, n2 / 50.0, n2 / 50.0],
                2.0 * c2 * sig2,
                Norm::Inf,
                false,
            ),
            "pairgrab" => Self::new(name, vec![0.8], vec![0.0, 3.0 * n2 / 50.0], 4.0 * c2 * sig2, Norm::Inf, false),
            "fl-ap" => Self::new(name, vec![], vec![], n2 * sig2, Norm::L2, true),
            "fl-rr" => Self::new(name, vec![], vec![], 4.0 * n * sig2 * log_term * log_term, Norm::L2, true),
            "fl-op" => Self::new(name, vec![], vec![], op_d, Norm::L2, true),
            "fl-grab-proto" => Self::new(
                name,
                vec![0.75],
                vec![0.0, n2 / 40.0],
                s2 * sig2 / 40.0 + 6.0 * c2 * sig2,
                Norm::Inf,
                true,
            ),
            "fl-grab" => Self::new(
                name,
                vec![0.6],
                vec![0.0, n2 / 96.0],
                s2 * sig2 / 96.0 + 6.0 * c2 * sig2,
                Norm::Inf,
                true,
            ),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown recursion spec '{other}', expected one of {}",
                    BUILTIN_SPECS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn sum_a(&self) -> f64 {
        self.a.iter().sum()
    }

    pub fn sum_b(&self) -> f64 {
        self.b.iter().sum()
    }

    fn phi(&self, row: &EpochTrace) -> f64 {
        let inf = self.norm == Norm::Inf;
        if self.fl {
            row.effective_order_error(inf)
        } else if inf {
            row.order_error_inf
        } else {
            row.order_error_2
        }
    }

    /// Right-hand side at epoch `q`; needs `q ≥ ν`.
    pub fn rhs(&self, trace: &[EpochTrace], q: usize) -> f64 {
        let mut r = self.d;
        for (i, a) in self.a.iter().enumerate() {
            let p = self.phi(&trace[q - (i + 1)]);
            r += a * p * p;
        }
        for (i, b) in self.b.iter().enumerate() {
            r += b * trace[q - i].grad_norm_sq;
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub spec: String,
    pub satisfied_fraction: f64,
    /// Largest `LHS / RHS` over the checked epochs.
    pub worst_ratio: f64,
    pub checked_epochs: usize,
}

/// Checks the recursion for every `q > ν` in the trace, counting an epoch as
/// satisfied when `φ̄_q² ≤ RHS·(1 + slack)`.
pub fn check_recursion(trace: &[EpochTrace], spec: &RecursionSpec, slack: f64) -> Result<RecursionReport> {
    if trace.len() <= spec.nu + 1 {
        return Err(Error::InsufficientTrace { needed: spec.nu + 1, got: trace.len() });
    }
    let mut ok = 0usize;
    let mut worst = 0.0_f64;
    let qs = spec.nu + 1..trace.len();
    let checked = qs.len();
    for q in qs {
        let lhs = spec.phi(&trace[q]).powi(2);
        let rhs = spec.rhs(trace, q);
        if lhs <= rhs * (1.0 + slack) {
            ok += 1;
        }
        let ratio = if lhs == 0.0 {
            0.0
        } else if rhs > 0.0 {
            lhs / rhs
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
    }
    Ok(RecursionReport {
        spec: spec.name.clone(),
        satisfied_fraction: ok as f64 / checked as f64,
        worst_ratio: worst,
        checked_epochs: checked,
    })
}

/// Extra quantities of the federated bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlBoundTerms {
    pub eta: f64,
    pub k: usize,
    pub s: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `f(x_0) − f*`
    pub f0: f64,
    pub gamma: f64,
    pub n: usize,
    pub q: usize,
    /// `L_{2,p}`
    pub l_2p: f64,
    pub c1: f64,
    pub c2: f64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub d: f64,
    /// `φ̄_0, …, φ̄_{ν−1}`
    pub phi_early: Vec<f64>,
    pub fl: Option<FlBoundTerms>,
}

/// Smallest admissible `(c1, c2)` for the given recursion sums.
pub fn min_constants(sum_a: f64, sum_b: f64, n: usize) -> Result<(f64, f64)> {
    let n2 = (n * n) as f64;
    if !(sum_a < 1.0) {
        return Err(Error::InvalidConstants(format!("Σ A_i = {sum_a} must be below 1")));
    }
    let ratio = sum_b / (n2 * (1.0 - sum_a));
    if !(ratio < 255.0) {
        return Err(Error::InvalidConstants(format!(
            "Σ B_i / (N²(1 − Σ A_i)) = {ratio} must be below 255"
        )));
    }
    let c1 = 1.0 / (255.0 / 512.0 - ratio / 512.0);
    let c2 = 2.0 * c1 / (1.0 - sum_a);
    Ok((c1, c2))
}

impl BoundInputs {
    /// Inputs with the smallest admissible constants for `spec`.
    pub fn for_spec(spec: &RecursionSpec, f0: f64, gamma: f64, n: usize, q: usize, l_2p: f64, phi_early: Vec<f64>) -> Result<Self> {
        let (c1, c2) = min_constants(spec.sum_a(), spec.sum_b(), n)?;
        Ok(Self {
            f0,
            gamma,
            n,
            q,
            l_2p,
            c1,
            c2,
            sum_a: spec.sum_a(),
            sum_b: spec.sum_b(),
            d: spec.d,
            phi_early,
            fl: None,
        })
    }

    fn check(&self) -> Result<()> {
        let (c1, c2) = min_constants(self.sum_a, self.sum_b, self.n)?;
        let tol = 1e-12 * c1.max(c2);
        if self.c1 + tol < c1 || self.c2 + tol < 2.0 * self.c1 / (1.0 - self.sum_a) {
            return Err(Error::InvalidConstants(format!(
                "need c1 ≥ {c1} and c2 ≥ 2·c1/(1 − Σ A_i) (≥ {c2}), got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.q == 0 || self.n == 0 || !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("bound needs Q ≥ 1, N ≥ 1 and γ > 0".into()));
        }
        Ok(())
    }

    fn early_sum(&self) -> f64 {
        self.phi_early.iter().map(|p| p * p).sum()
    }
}

/// `c1·F0/(γNQ) + c2·γ²L_{2,p}²·(1/Q)·Σ_{i<ν} φ̄_i² + c2·γ²L_{2,p}²·D`
pub fn theorem_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.check()?;
    let (n, q) = (inputs.n as f64, inputs.q as f64);
    let g2l2 = inputs.gamma * inputs.gamma * inputs.l_2p * inputs.l_2p;
    Ok(inputs.c1 * inputs.f0 / (inputs.gamma * n * q)
        + inputs.c2 * g2l2 * inputs.early_sum() / q
        + inputs.c2 * g2l2 * inputs.d)
}

/// Federated counterpart: `c1·F0/(γηK(N/S)Q) + c2·γ²L²K²/S²·(1/Q)·Σ φ̄_i²
/// + 2c1·γ²L²K²ς² + c2·γ²L²K²/S²·D`.
pub fn fl_theorem_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.check()?;
    let fl = inputs
        .fl
        .ok_or_else(|| Error::InvalidArgument("federated bound needs eta, K, S and sigma".into()))?;
    if fl.s == 0 || fl.k == 0 || !(fl.eta > 0.0) {
        return Err(Error::InvalidArgument("federated bound needs K, S ≥ 1 and η > 0".into()));
    }
    let (n, q) = (inputs.n as f64, inputs.q as f64);
    let (k, s) = (fl.k as f64, fl.s as f64);
    let g2l2k2 = inputs.gamma.powi(2) * inputs.l_2p.powi(2) * k * k;
    Ok(inputs.c1 * inputs.f0 / (inputs.gamma * fl.eta * k * n / s * q)
        + inputs.c2 * g2l2k2 / (s * s) * inputs.early_sum() / q
        + 2.0 * inputs.c1 * g2l2k2 * fl.sigma * fl.sigma
        + inputs.c2 * g2l2k2 / (s * s) * inputs.d)
}

/// `min_{q < Q} ‖∇f(x_q)‖²`; the final row (`x_Q`) is excluded.
pub fn min_grad_norm_sq(trace: &[EpochTrace]) -> f64 {
    let end = trace.len().saturating_sub(1).max(1).min(trace.len());
    trace[..end].iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min)
}

/// The JSON report combining a recursion check and a bound evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub spec: String,
    pub satisfied_fraction: f64,
    pub worst_ratio: f64,
    pub bound_value: Option<f64>,
    pub min_grad_norm_sq: f64,
}

/// `L_{2,p}` for a spec's norm.
pub fn l_2p(profile: &SmoothnessProfile, norm: Norm) -> f64 {
    profile.local_2p(norm)
}
