//! Diagonal quadratic ensembles `f_n(x) = Σ_k a[n,k]·x_k² + b[n,k]·x_k`.
//!
//! Every quantity the ordering theory needs (gradients, the minimiser of the
//! mean objective, smoothness constants) has a closed form here.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Norm};

const RESAMPLE_BUDGET: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleJson", into = "EnsembleJson")]
pub struct QuadraticEnsemble {
    n: usize,
    d: usize,
    // Row-major N×d.
    a: Vec<f64>,
    b: Vec<f64>,
    a_mean: Vec<f64>,
    b_mean: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleJson {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<EnsembleJson> for QuadraticEnsemble {
    type Error = Error;

    fn try_from(j: EnsembleJson) -> Result<Self> {
        QuadraticEnsemble::new(j.a, j.b)
    }
}

impl From<QuadraticEnsemble> for EnsembleJson {
    fn from(e: QuadraticEnsemble) -> Self {
        EnsembleJson {
            a: e.a.chunks(e.d).map(<[f64]>::to_vec).collect(),
            b: e.b.chunks(e.d).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Smoothness constants of the ensemble.
///
/// `local_2` and `local_inf` are the per-example `L_2`/`L_∞` constants (equal
/// for diagonal Hessians); `local_2_inf` is the mixed `L_{2,∞}` constant,
/// i.e. the operator norm from `ℓ∞` to `ℓ2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    pub global: f64,
    pub local_2: f64,
    pub local_inf: f64,
    pub local_2_inf: f64,
}

impl SmoothnessProfile {
    /// `L_p` for the chosen norm.
    pub fn local(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L2 => self.local_2,
            Norm::Inf => self.local_inf,
        }
    }

    /// `L_{2,p}` for the chosen norm.
    pub fn local_2p(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L2 => self.local_2,
            Norm::Inf => self.local_2_inf,
        }
    }
}

/// Heterogeneity and drift measured along a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub sigma_empirical: f64,
    pub theta_empirical: f64,
}

impl QuadraticEnsemble {
    /// Builds an ensemble from `N` rows of `a` and `b`, each of length `d`.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidSize("ensemble needs at least one objective".into()));
        }
        if b.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: b.len() });
        }
        let d = a[0].len();
        if d == 0 {
            return Err(Error::InvalidSize("dimension must be at least 1".into()));
        }
        for row in a.iter().chain(&b) {
            if row.len() != d {
                return Err(Error::Shape { expected: d, got: row.len() });
            }
        }
        let a: Vec<f64> = a.into_iter().flatten().collect();
        let b: Vec<f64> = b.into_iter().flatten().collect();
        Self::from_flat(n, d, a, b)
    }

    fn from_flat(n: usize, d: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if !linalg::is_finite(&a) || !linalg::is_finite(&b) {
            return Err(Error::DegenerateEnsemble("non-finite coefficient".into()));
        }
        let a_mean = column_mean(&a, n, d);
        let b_mean = column_mean(&b, n, d);
        if let Some(k) = a_mean.iter().position(|&m| m <= 0.0) {
            return Err(Error::DegenerateEnsemble(format!(
                "mean curvature of coordinate {k} is {} (must be positive)",
                a_mean[k]
            )));
        }
        Ok(Self { n, d, a, b, a_mean, b_mean })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn a(&self, n: usize) -> &[f64] {
        &self.a[n * self.d..(n + 1) * self.d]
    }

    pub fn b(&self, n: usize) -> &[f64] {
        &self.b[n * self.d..(n + 1) * self.d]
    }

    pub fn a_mean(&self) -> &[f64] {
        &self.a_mean
    }

    pub fn b_mean(&self) -> &[f64] {
        &self.b_mean
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Shape { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    /// `f_n(x)`
    pub fn value_n(&self, n: usize, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(quad(self.a(n), self.b(n), x))
    }

    /// `f(x) = (1/N) Σ_n f_n(x)`
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(quad(&self.a_mean, &self.b_mean, x))
    }

    /// `∇f_n(x) = 2·a[n]⊙x + b[n]`
    pub fn grad(&self, n: usize, x: &[f64]) -> Result<Vec<f64>> {
        if n >= self.n {
            return Err(Error::InvalidArgument(format!(
                "objective index {n} out of range for N = {}",
                self.n
            )));
        }
        self.check_point(x)?;
        let mut out = vec![0.0; self.d];
        self.grad_into(n, x, &mut out);
        Ok(out)
    }

    /// Unchecked gradient for hot loops; `x` and `out` must have length `d`.
    pub fn grad_into(&self, n: usize, x: &[f64], out: &mut [f64]) {
        let (a, b) = (self.a(n), self.b(n));
        for k in 0..self.d {
            out[k] = 2.0 * a[k] * x[k] + b[k];
        }
    }

    /// `∇f(x) = 2·ā⊙x + b̄`
    pub fn full_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.full_grad_unchecked(x))
    }

    pub(crate) fn full_grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|k| 2.0 * self.a_mean[k] * x[k] + self.b_mean[k])
            .collect()
    }

    /// All `N` gradients at `x`, indexed by objective.
    pub fn all_grads(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(x)?;
        Ok((0..self.n)
            .map(|n| {
                let mut g = vec![0.0; self.d];
                self.grad_into(n, x, &mut g);
                g
            })
            .collect())
    }

    /// Centered gradients `∇f_n(x) − ∇f(x)`, indexed by objective.
    pub fn deviations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mean = self.full_grad(x)?;
        let mut grads = self.all_grads(x)?;
        for g in &mut grads {
            linalg::axpy(g, -1.0, &mean);
        }
        Ok(grads)
    }

    /// Minimiser of the mean objective, `x*_k = −b̄_k / (2·ā_k)`.
    pub fn optimum(&self) -> Vec<f64> {
        (0..self.d)
            .map(|k| -self.b_mean[k] / (2.0 * self.a_mean[k]))
            .collect()
    }

    /// `f* = f(x*)`
    pub fn min_value(&self) -> f64 {
        quad(&self.a_mean, &self.b_mean, &self.optimum())
    }

    /// Closed-form smoothness constants. Curvatures may be negative for
    /// individual objectives, so local constants use `|a|`.
    pub fn smoothness(&self) -> SmoothnessProfile {
        let global = 2.0 * linalg::norm_inf(&self.a_mean);
        let local = 2.0 * linalg::norm_inf(&self.a);
        let local_2_inf = 2.0
            * self
                .a
                .chunks(self.d)
                .map(linalg::norm2)
                .fold(0.0_f64, f64::max);
        SmoothnessProfile {
            global,
            local_2: local,
            local_inf: local,
            local_2_inf,
        }
    }

    /// `max_{x ∈ points} max_n ‖∇f_n(x) − ∇f(x)‖₂`
    pub fn empirical_sigma<'a, I>(&self, points: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut best: Option<f64> = None;
        let mut g = vec![0.0; self.d];
        for x in points {
            self.check_point(x)?;
            let mean = self.full_grad_unchecked(x);
            let mut local = 0.0_f64;
            for n in 0..self.n {
                self.grad_into(n, x, &mut g);
                local = local.max(linalg::dist2(&g, &mean));
            }
            best = Some(best.map_or(local, |b| b.max(local)));
        }
        best.ok_or_else(|| Error::InvalidArgument("empirical sigma needs at least one point".into()))
    }
}

fn quad(a: &[f64], b: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(x)
        .map(|((a, b), x)| a * x * x + b * x)
        .sum()
}

fn column_mean(m: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in m.chunks(d) {
        linalg::axpy(&mut out, 1.0, row);
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Parameters for [`generate_ensemble`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub n: usize,
    pub d: usize,
    pub a_mean: f64,
    pub a_std: f64,
    pub b_std: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self { n: 1000, d: 1, a_mean: 0.5, a_std: 1.0, b_std: 1.0 }
    }
}

/// Draws `a[n,k] ~ N(a_mean, a_std²)` and `b[n,k] ~ N(0, b_std²)`, redrawing
/// the whole ensemble if some mean curvature is not positive.
pub fn generate_ensemble<R: Rng + ?Sized>(p: &EnsembleParams, rng: &mut R) -> Result<QuadraticEnsemble> {
    if p.n == 0 || p.d == 0 {
        return Err(Error::InvalidSize("ensemble needs n ≥ 1 and d ≥ 1".into()));
    }
    if !(p.a_std >= 0.0 && p.b_std >= 0.0 && p.a_mean.is_finite()) {
        return Err(Error::InvalidArgument("standard deviations must be non-negative".into()));
    }
    let a_dist = Normal::new(p.a_mean, p.a_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let b_dist = Normal::new(0.0, p.b_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let len = p.n * p.d;
    for attempt in 0..RESAMPLE_BUDGET {
        let a: Vec<f64> = (0..len).map(|_| a_dist.sample(rng)).collect();
        let b: Vec<f64> = (0..len).map(|_| b_dist.sample(rng)).collect();
        match QuadraticEnsemble::from_flat(p.n, p.d, a, b) {
            Ok(e) => return Ok(e),
            Err(Error::DegenerateEnsemble(msg)) => {
                log::debug!("ensemble draw {attempt} rejected: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateEnsemble(format!(
        "no draw with positive mean curvature in {RESAMPLE_BUDGET} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_ensemble(seed: u64, n: usize, d: usize) -> QuadraticEnsemble {
        let p = EnsembleParams { n, d, a_mean: 0.5, a_std: 1.0, b_std: 1.0 };
        generate_ensemble(&p, &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn generation() {
        let e = random_ensemble(1, 1000, 1);
        assert!(e.a_mean()[0] > 0.0);
        let p = EnsembleParams { n: 2, d: 1, a_mean: 1.0, a_std: 0.0, b_std: 0.0 };
        let e = generate_ensemble(&p, &mut seeded_rng(0)).unwrap();
        assert_eq!(e.a(0), &[1.0]);
        assert_eq!(e.a(1), &[1.0]);
        assert_eq!(e.b(0), &[0.0]);
        let p = EnsembleParams { n: 4, d: 2, ..Default::default() };
        let e1 = generate_ensemble(&p, &mut seeded_rng(3)).unwrap();
        let e2 = generate_ensemble(&p, &mut seeded_rng(3)).unwrap();
        assert_eq!(e1, e2);
        let bad = EnsembleParams { n: 4, d: 1, a_mean: -5.0, a_std: 0.0, b_std: 1.0 };
        assert!(matches!(
            generate_ensemble(&bad, &mut seeded_rng(0)),
            Err(Error::DegenerateEnsemble(_))
        ));
    }

    #[test]
    fn gradient_examples() {
        let e = QuadraticEnsemble::new(vec![vec![0.5], vec![0.0]], vec![vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(e.grad(0, &[1.0]).unwrap(), vec![2.0]);
        assert_eq!(e.grad(1, &[3.7]).unwrap(), vec![0.0]);
        assert!(matches!(e.grad(0, &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn full_grad_and_optimum() {
        let e = QuadraticEnsemble::new(vec![vec![1.0], vec![1.0]], vec![vec![2.0], vec![-2.0]]).unwrap();
        assert_eq!(e.full_grad(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(e.optimum(), vec![0.0]);
        let e = QuadraticEnsemble::new(vec![vec![1.0]], vec![vec![4.0]]).unwrap();
        assert_eq!(e.optimum(), vec![-2.0]);
        for seed in 0..20 {
            let e = random_ensemble(seed, 50, 3);
            let g = e.full_grad(&e.optimum()).unwrap();
            assert!(linalg::norm_inf(&g) <= 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_mean_curvature() {
        let r = QuadraticEnsemble::new(vec![vec![1.0], vec![-1.0]], vec![vec![0.0], vec![0.0]]);
        assert!(matches!(r, Err(Error::DegenerateEnsemble(_))));
    }

    #[test]
    fn smoothness_example() {
        let e = QuadraticEnsemble::new(vec![vec![1.0], vec![3.0]], vec![vec![0.0], vec![0.0]]).unwrap();
        let s = e.smoothness();
        assert_eq!(s.global, 4.0);
        assert_eq!(s.local_inf, 6.0);
        assert_eq!(s.local_2, 6.0);
        assert_eq!(s.local_2_inf, 6.0);
    }

    #[test]
    fn smoothness_is_a_lipschitz_bound() {
        let e = random_ensemble(11, 30, 4);
        let s = e.smoothness();
        let mut rng = seeded_rng(12);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let n = rng.random_range(0..30);
            let gx = e.grad(n, &x).unwrap();
            let gy = e.grad(n, &y).unwrap();
            let dinf = linalg::dist(&x, &y, Norm::Inf);
            let d2 = linalg::dist2(&x, &y);
            assert!(linalg::dist(&gx, &gy, Norm::Inf) <= s.local_inf * dinf + 1e-12);
            assert!(linalg::dist2(&gx, &gy) <= s.local_2 * d2 + 1e-12);
            assert!(linalg::dist2(&gx, &gy) <= s.local_2_inf * dinf + 1e-12);
            let fx = e.full_grad(&x).unwrap();
            let fy = e.full_grad(&y).unwrap();
            assert!(linalg::dist2(&fx, &fy) <= s.global * d2 + 1e-12);
        }
    }

    #[test]
    fn empirical_sigma_examples() {
        let e = random_ensemble(5, 20, 2);
        let at_zero = e.empirical_sigma([[0.0, 0.0].as_slice()]).unwrap();
        let expected = (0..20)
            .map(|n| linalg::dist2(e.b(n), e.b_mean()))
            .fold(0.0_f64, f64::max);
        assert!((at_zero - expected).abs() < 1e-12);

        let same = QuadraticEnsemble::new(vec![vec![2.0]; 5], vec![vec![1.0]; 5]).unwrap();
        assert_eq!(same.empirical_sigma([[3.0].as_slice()]).unwrap(), 0.0);

        let empty: [&[f64]; 0] = [];
        assert!(matches!(e.empirical_sigma(empty), Err(Error::InvalidArgument(_))));

        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3, -(i as f64)]).collect();
        let fast = e.empirical_sigma(pts.iter().map(Vec::as_slice)).unwrap();
        let mut brute = 0.0_f64;
        for x in &pts {
            let all = e.all_grads(x).unwrap();
            let m = linalg::mean(&all, 2);
            for g in &all {
                brute = brute.max(linalg::dist2(g, &m));
            }
        }
        assert!((fast - brute).abs() <= 1e-12 * (1.0 + brute));
    }

    #[test]
    fn json_round_trip() {
        let e = random_ensemble(9, 3, 2);
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.starts_with("{\"a\":[["));
        let back: QuadraticEnsemble = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_difference(seed in any::<u64>(), d in 1usize..5) {
            let e = random_ensemble(seed, 8, d);
            let mut rng = seeded_rng(seed ^ 0x5eed);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let n = rng.random_range(0..8);
            let g = e.grad(n, &x).unwrap();
            let h = 1e-5;
            for k in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (e.value_n(n, &xp).unwrap() - e.value_n(n, &xm).unwrap()) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() <= 1e-6 * (1.0 + g[k].abs()));
            }
        }

        #[test]
        fn mean_gradient_identity(seed in any::<u64>(), d in 1usize..5) {
            let e = random_ensemble(seed, 17, d);
            let x: Vec<f64> = (0..d).map(|k| (k as f64) - 1.5).collect();
            let direct = linalg::mean(&e.all_grads(&x).unwrap(), d);
            let closed = e.full_grad(&x).unwrap();
            for k in 0..d {
                prop_assert!((direct[k] - closed[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn deviation_is_affine_in_x(seed in any::<u64>()) {
            let e = random_ensemble(seed, 12, 3);
            let mut rng = seeded_rng(seed.wrapping_add(1));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let dev = |p: &[f64]| e.empirical_sigma([p]).unwrap();
            prop_assert!(dev(&x2) <= 2.0 * dev(&x) + dev(&[0.0; 3]) + 1e-9);
        }
    }
}
