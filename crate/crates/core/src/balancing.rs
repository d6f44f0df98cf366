//! Online sign assignment: the self-balancing walk and its norm-greedy
//! counterpart, plus the signed herding error they aim to keep small.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::perm::{Sign, SignSequence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Randomised walk: `ε = +1` with probability `clamp(1/2 − ⟨s,z⟩/(2c))`.
    #[serde(alias = "prob")]
    Probabilistic,
    /// `ε = +1` iff `‖s+z‖ < ‖s−z‖`.
    #[default]
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceConfig {
    pub mode: BalanceMode,
    /// Walk hyperparameter. When unset it is resolved from the input scale,
    /// see [`BalanceConfig::resolve_c`].
    pub c: Option<f64>,
    /// Failure probability behind `C = 30·log(dN/δ)`.
    pub delta: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self { mode: BalanceMode::Greedy, c: None, delta: 0.1 }
    }
}

/// `C = 30·log(dN/δ)`
pub fn theoretical_c(d: usize, n: usize, delta: f64) -> f64 {
    30.0 * ((d * n) as f64 / delta).ln()
}

impl BalanceConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn probabilistic(c: Option<f64>) -> Self {
        Self { mode: BalanceMode::Probabilistic, c, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("balance c must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// The walk constant actually used: the configured `c`, or
    /// `30·log(dN/δ)·max‖z‖₂²` over the vectors about to be balanced.
    pub fn resolve_c(&self, d: usize, n: usize, max_norm: f64) -> f64 {
        match self.c {
            Some(c) => c,
            None => {
                let scale = if max_norm > 0.0 { max_norm * max_norm } else { 1.0 };
                theoretical_c(d, n.max(1), self.delta).max(f64::MIN_POSITIVE) * scale
            }
        }
    }

    pub(crate) fn resolve_for<'a, I>(&self, vectors: I, d: usize, n: usize) -> f64
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if let Some(c) = self.c {
            return c;
        }
        let max_norm = vectors.into_iter().map(linalg::norm2).fold(0.0_f64, f64::max);
        self.resolve_c(d, n, max_norm)
    }
}

/// Running signed sum of a balancing pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancerState {
    s: Vec<f64>,
    count: usize,
    clamped: usize,
}

impl BalancerState {
    pub fn new(d: usize) -> Self {
        Self { s: vec![0.0; d], count: 0, clamped: 0 }
    }

    pub fn sum(&self) -> &[f64] {
        &self.s
    }

    /// Number of signs emitted so far.
    pub fn count(&self) -> usize {
        self.count
    }

    /// How many probabilistic draws had `p̃` outside `[0, 1]`.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn reset(&mut self) {
        self.s.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
        self.clamped = 0;
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.s.len() {
            return Err(Error::Shape { expected: self.s.len(), got: z.len() });
        }
        Ok(())
    }

    /// `p̃ = 1/2 − ⟨s,z⟩/(2c)` before clamping.
    pub fn raw_probability(&self, z: &[f64], c: f64) -> f64 {
        0.5 - linalg::dot(&self.s, z) / (2.0 * c)
    }

    // ‖s+z‖² − ‖s−z‖² = 4⟨s,z⟩, so the norm comparison reduces to a sign test.
    fn greedy_sign(&self, z: &[f64]) -> Sign {
        if linalg::dot(&self.s, z) < 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Chooses a sign for `z` without moving the running sum.
    pub fn decide<R: Rng + ?Sized>(&mut self, z: &[f64], mode: BalanceMode, c: f64, rng: &mut R) -> Result<Sign> {
        self.check(z)?;
        Ok(match mode {
            BalanceMode::Greedy => self.greedy_sign(z),
            BalanceMode::Probabilistic => {
                let raw = self.raw_probability(z, c);
                if !(0.0..=1.0).contains(&raw) {
                    self.clamped += 1;
                }
                let p = raw.clamp(0.0, 1.0);
                if rng.random::<f64>() < p {
                    Sign::Plus
                } else {
                    Sign::Minus
                }
            }
        })
    }

    /// `s ← s + ε·v` and counts the emission.
    pub fn push(&mut self, sign: Sign, v: &[f64]) -> Result<()> {
        self.check(v)?;
        linalg::axpy(&mut self.s, sign.value(), v);
        self.count += 1;
        Ok(())
    }

    /// Decide on `z`, then accumulate `z` itself.
    pub fn assign<R: Rng + ?Sized>(&mut self, z: &[f64], mode: BalanceMode, c: f64, rng: &mut R) -> Result<Sign> {
        let e = self.decide(z, mode, c, rng)?;
        self.push(e, z)?;
        Ok(e)
    }
}

/// One step of the probabilistic walk.
pub fn assign_sign_prob<R: Rng + ?Sized>(state: &mut BalancerState, z: &[f64], c: f64, rng: &mut R) -> Result<Sign> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("walk constant must be positive, got {c}")));
    }
    state.assign(z, BalanceMode::Probabilistic, c, rng)
}

/// One step of the greedy rule; ties go to `−1`.
pub fn assign_sign_greedy(state: &mut BalancerState, z: &[f64]) -> Result<Sign> {
    state.check(z)?;
    let e = state.greedy_sign(z);
    state.push(e, z)?;
    Ok(e)
}

fn check_uniform(vectors: &[Vec<f64>]) -> Result<usize> {
    let d = vectors
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidArgument("cannot balance an empty sequence".into()))?;
    for v in vectors {
        if v.len() != d {
            return Err(Error::Shape { expected: d, got: v.len() });
        }
    }
    Ok(d)
}

/// Streams `vectors` (already in processing order) through the configured
/// sign rule, starting from `s = 0`.
pub fn balance<R: Rng + ?Sized>(vectors: &[Vec<f64>], cfg: &BalanceConfig, rng: &mut R) -> Result<SignSequence> {
    let d = check_uniform(vectors)?;
    let c = cfg.resolve_for(vectors.iter().map(Vec::as_slice), d, vectors.len());
    let mut state = BalancerState::new(d);
    vectors
        .iter()
        .map(|z| state.assign(z, cfg.mode, c, rng))
        .collect()
}

/// `max_{n ∈ [N]} ‖Σ_{i<n} ε_i·z_i‖`
pub fn signed_herding_error(vectors: &[Vec<f64>], signs: &SignSequence, norm: Norm) -> Result<f64> {
    if vectors.len() != signs.len() {
        return Err(Error::LengthMismatch { expected: vectors.len(), got: signs.len() });
    }
    let Some(first) = vectors.first() else { return Ok(0.0) };
    let d = first.len();
    let mut acc = vec![0.0; d];
    let mut best = 0.0_f64;
    for (z, e) in vectors.iter().zip(signs.iter()) {
        if z.len() != d {
            return Err(Error::Shape { expected: d, got: z.len() });
        }
        linalg::axpy(&mut acc, e.value(), z);
        best = best.max(norm.of(&acc));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn state_with(s: &[f64]) -> BalancerState {
        let mut st = BalancerState::new(s.len());
        st.s.copy_from_slice(s);
        st
    }

    #[test]
    fn probabilistic_examples() {
        let st = BalancerState::new(2);
        assert_eq!(st.raw_probability(&[3.0, -1.0], 0.7), 0.5);

        let mut rng = seeded_rng(0);
        for _ in 0..100 {
            let mut st = state_with(&[1.0]);
            assert_eq!(assign_sign_prob(&mut st, &[1.0], 1.0, &mut rng).unwrap(), Sign::Minus);
            assert_eq!(st.sum(), &[0.0]);
            assert_eq!(st.count(), 1);
        }

        let mut plus = 0;
        for _ in 0..10_000 {
            let mut st = BalancerState::new(1);
            if assign_sign_prob(&mut st, &[1.0], 1.0, &mut rng).unwrap() == Sign::Plus {
                plus += 1;
            }
        }
        let f = plus as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.02, "frequency {f}");
    }

    #[test]
    fn greedy_examples() {
        let mut st = BalancerState::new(2);
        assert_eq!(assign_sign_greedy(&mut st, &[1.0, 0.0]).unwrap(), Sign::Minus);
        let mut st = state_with(&[2.0, 0.0]);
        assert_eq!(assign_sign_greedy(&mut st, &[1.0, 0.0]).unwrap(), Sign::Minus);
        let mut st = state_with(&[-2.0, 0.0]);
        assert_eq!(assign_sign_greedy(&mut st, &[1.0, 0.0]).unwrap(), Sign::Plus);
        let mut st = BalancerState::new(2);
        assert!(matches!(assign_sign_greedy(&mut st, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn balance_examples() {
        let mut rng = seeded_rng(1);
        let cfg = BalanceConfig::greedy();
        let one = balance(&[vec![3.0]], &cfg, &mut rng).unwrap();
        assert_eq!(one.signs(), &[Sign::Minus]);
        let two = balance(&[vec![1.0], vec![1.0]], &cfg, &mut rng).unwrap();
        assert_eq!(two.signs(), &[Sign::Minus, Sign::Plus]);

        let z = vec![0.3, -1.2];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let vs = vec![z, neg];
        let signs = balance(&vs, &cfg, &mut rng).unwrap();
        let mut s = [0.0; 2];
        for (v, e) in vs.iter().zip(signs.iter()) {
            linalg::axpy(&mut s, e.value(), v);
        }
        assert_eq!(linalg::norm2(&s), 0.0);

        assert!(matches!(balance(&[], &cfg, &mut rng), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn signed_herding_examples() {
        let zeros = vec![vec![0.0; 3]; 4];
        let signs = SignSequence::new(vec![Sign::Plus; 4]);
        assert_eq!(signed_herding_error(&zeros, &signs, Norm::L2).unwrap(), 0.0);
        let vs = vec![vec![1.0], vec![1.0]];
        let signs = SignSequence::new(vec![Sign::Plus, Sign::Minus]);
        assert_eq!(signed_herding_error(&vs, &signs, Norm::Inf).unwrap(), 1.0);
        assert!(signed_herding_error(&vs, &SignSequence::new(vec![Sign::Plus]), Norm::L2).is_err());
    }

    #[test]
    fn unit_vectors_stay_within_c() {
        // Loose sanity band: ∞-norm signed herding error ≤ C for unit inputs.
        let (n, d, delta) = (256, 8, 0.1);
        let c = theoretical_c(d, n, delta);
        let cfg = BalanceConfig { mode: BalanceMode::Probabilistic, c: Some(c), delta };
        let mut ok = 0;
        let trials = 200;
        for t in 0..trials {
            let mut rng = seeded_rng(1000 + t);
            let vs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let norm = linalg::norm2(&v);
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect();
            let signs = balance(&vs, &cfg, &mut rng).unwrap();
            if signed_herding_error(&vs, &signs, Norm::Inf).unwrap() <= c {
                ok += 1;
            }
        }
        assert!(ok as f64 >= (1.0 - delta) * trials as f64, "{ok}/{trials}");
    }

    fn vectors(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn greedy_never_expands(seed in any::<u64>(), n in 1usize..64, d in 1usize..8) {
            let vs = vectors(seed, n, d);
            let mut st = BalancerState::new(d);
            let mut total = 0.0;
            for z in &vs {
                let before = linalg::norm2_sq(st.sum());
                let e = assign_sign_greedy(&mut st, z).unwrap();
                let after = linalg::norm2_sq(st.sum());
                prop_assert!(after <= before + linalg::norm2_sq(z) + 1e-9);
                total += linalg::norm2_sq(z);
                prop_assert!(linalg::norm2(st.sum()) <= total.sqrt() + 1e-9);
                let _ = e;
            }
        }

        #[test]
        fn state_sum_matches_recomputation(seed in any::<u64>(), n in 1usize..64, d in 1usize..8, prob in any::<bool>()) {
            let vs = vectors(seed, n, d);
            let mode = if prob { BalanceMode::Probabilistic } else { BalanceMode::Greedy };
            let mut st = BalancerState::new(d);
            let mut rng = seeded_rng(seed);
            let mut signs = Vec::new();
            for z in &vs {
                signs.push(st.assign(z, mode, 10.0, &mut rng).unwrap());
            }
            let mut s = vec![0.0; d];
            for (z, e) in vs.iter().zip(&signs) {
                linalg::axpy(&mut s, e.value(), z);
            }
            prop_assert_eq!(st.count(), n);
            for k in 0..d {
                prop_assert!((s[k] - st.sum()[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn large_c_never_clamps(seed in any::<u64>(), n in 1usize..64, d in 1usize..8) {
            // ‖s‖ ≤ Σ‖z‖, so c = (Σ‖z‖)·max‖z‖ dominates every |⟨s,z⟩|.
            let vs = vectors(seed, n, d);
            let total: f64 = vs.iter().map(|v| linalg::norm2(v)).sum();
            let maxn = vs.iter().map(|v| linalg::norm2(v)).fold(0.0_f64, f64::max);
            let c = (total * maxn).max(1e-12);
            let mut st = BalancerState::new(d);
            let mut rng = seeded_rng(seed);
            for z in &vs {
                prop_assert!(linalg::norm2(st.sum()) * linalg::norm2(z) <= c + 1e-9);
                assign_sign_prob(&mut st, z, c, &mut rng).unwrap();
            }
            prop_assert_eq!(st.clamped(), 0);
        }

        #[test]
        fn signed_herding_matches_brute_force(seed in any::<u64>(), n in 1usize..40, d in 1usize..6) {
            let vs = vectors(seed, n, d);
            let signs: SignSequence = (0..n)
                .map(|i| if (seed >> (i % 64)) & 1 == 1 { Sign::Plus } else { Sign::Minus })
                .collect();
            for norm in [Norm::L2, Norm::Inf] {
                let fast = signed_herding_error(&vs, &signs, norm).unwrap();
                let mut brute = 0.0_f64;
                for m in 1..=n {
                    let mut s = vec![0.0; d];
                    for i in 0..m {
                        linalg::axpy(&mut s, signs.signs()[i].value(), &vs[i]);
                    }
                    brute = brute.max(norm.of(&s));
                }
                prop_assert!((fast - brute).abs() <= 1e-10);
            }
        }
    }
}
