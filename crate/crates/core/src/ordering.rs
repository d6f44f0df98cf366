//! Turning signs into a new order: `Reorder`, plus the balance-then-reorder
//! composites BasicBR and PairBR and the deterministic contraction
//! inequalities they satisfy.

use rand::Rng;

use crate::balancing::{self, BalanceConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::perm::{Permutation, Sign, SignSequence};

/// Positives first in their original order, then the negatives reversed.
pub fn reorder(pi: &Permutation, signs: &SignSequence) -> Result<Permutation> {
    if pi.len() != signs.len() {
        return Err(Error::LengthMismatch { expected: pi.len(), got: signs.len() });
    }
    let mut front = Vec::with_capacity(pi.len());
    let mut back = Vec::new();
    for (&idx, e) in pi.order().iter().zip(signs.iter()) {
        match e {
            Sign::Plus => front.push(idx),
            Sign::Minus => back.push(idx),
        }
    }
    front.extend(back.into_iter().rev());
    Permutation::from_order(front)
}

/// `ε_{2l} = ε̃_l`, `ε_{2l+1} = −ε̃_l`
pub fn expand_pair_signs(pair_signs: &SignSequence) -> SignSequence {
    pair_signs.iter().flat_map(|e| [e, e.flip()]).collect()
}

/// Input of BasicBR / PairBR. `vectors` is indexed by original example index,
/// so the `i`-th processed vector is `vectors[pi.apply(i)]`.
#[derive(Clone, Copy, Debug)]
pub struct BrInput<'a> {
    pub pi: &'a Permutation,
    pub vectors: &'a [Vec<f64>],
    pub mean: &'a [f64],
}

impl BrInput<'_> {
    fn validate(&self) -> Result<usize> {
        if self.vectors.len() != self.pi.len() {
            return Err(Error::LengthMismatch { expected: self.pi.len(), got: self.vectors.len() });
        }
        let d = self.mean.len();
        for v in self.vectors {
            if v.len() != d {
                return Err(Error::Shape { expected: d, got: v.len() });
            }
        }
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrOutput {
    pub permutation: Permutation,
    /// Per-position signs in the old order.
    pub signs: SignSequence,
    /// Signs of the pair differences (PairBR only).
    pub pair_signs: Option<SignSequence>,
}

/// Center by `mean`, balance in `π` order, reorder.
pub fn basic_br<R: Rng + ?Sized>(input: BrInput<'_>, cfg: &BalanceConfig, rng: &mut R) -> Result<BrOutput> {
    input.validate()?;
    let centered: Vec<Vec<f64>> = input
        .pi
        .order()
        .iter()
        .map(|&i| linalg::sub(&input.vectors[i], input.mean))
        .collect();
    let signs = balancing::balance(&centered, cfg, rng)?;
    let permutation = reorder(input.pi, &signs)?;
    Ok(BrOutput { permutation, signs, pair_signs: None })
}

/// Pair differences `d_l = z_{π(2l)} − z_{π(2l+1)}` of the permuted vectors.
/// Centering cancels in the difference, so `mean` is not used.
pub fn pair_differences(pi: &Permutation, vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if !pi.len().is_multiple_of(2) {
        return Err(Error::OddLength(pi.len()));
    }
    Ok(pi
        .order()
        .chunks_exact(2)
        .map(|p| linalg::sub(&vectors[p[0]], &vectors[p[1]]))
        .collect())
}

/// Balance the pair differences, expand to opposite signs per pair, reorder.
pub fn pair_br<R: Rng + ?Sized>(input: BrInput<'_>, cfg: &BalanceConfig, rng: &mut R) -> Result<BrOutput> {
    input.validate()?;
    let diffs = pair_differences(input.pi, input.vectors)?;
    let pair_signs = balancing::balance(&diffs, cfg, rng)?;
    let signs = expand_pair_signs(&pair_signs);
    let permutation = reorder(input.pi, &signs)?;
    Ok(BrOutput { permutation, signs, pair_signs: Some(pair_signs) })
}

/// Both sides of a balancing-reordering inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

fn permuted<'a>(pi: &'a Permutation, vectors: &'a [Vec<f64>]) -> impl Iterator<Item = &'a [f64]> + 'a {
    pi.order().iter().map(move |&i| vectors[i].as_slice())
}

fn lemma_inputs(pi: &Permutation, vectors: &[Vec<f64>]) -> Result<usize> {
    if vectors.len() != pi.len() {
        return Err(Error::LengthMismatch { expected: pi.len(), got: vectors.len() });
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::Shape { expected: d, got: v.len() });
    }
    Ok(d)
}

fn total_inf(vectors: &[Vec<f64>], d: usize) -> f64 {
    let mut t = vec![0.0; d];
    for v in vectors {
        linalg::axpy(&mut t, 1.0, v);
    }
    linalg::norm_inf(&t)
}

/// With `π' = reorder(π, ε)` and any signs `ε`:
/// `herd∞(π') ≤ ½·herd∞(π) + ½·max_n ‖Σ_{i<n} ε_i z_{π(i)}‖∞ + ‖Σ z‖∞`.
pub fn basic_lemma(vectors: &[Vec<f64>], pi: &Permutation, signs: &SignSequence) -> Result<LemmaCheck> {
    let d = lemma_inputs(pi, vectors)?;
    let new_pi = reorder(pi, signs)?;
    let ordered: Vec<Vec<f64>> = permuted(pi, vectors).map(<[f64]>::to_vec).collect();
    let lhs = linalg::max_prefix_norm(permuted(&new_pi, vectors), d, Norm::Inf);
    let rhs = 0.5 * linalg::max_prefix_norm(permuted(pi, vectors), d, Norm::Inf)
        + 0.5 * balancing::signed_herding_error(&ordered, signs, Norm::Inf)?
        + total_inf(vectors, d);
    Ok(LemmaCheck { lhs, rhs })
}

fn pair_signed_term(vectors: &[Vec<f64>], pi: &Permutation, pair_signs: &SignSequence) -> Result<f64> {
    let diffs = pair_differences(pi, vectors)?;
    balancing::signed_herding_error(&diffs, pair_signs, Norm::Inf)
}

/// Pair form: signs come from `ε̃` on the differences and the signed term is
/// `½·max_l ‖Σ_{j<l} ε̃_j d_j‖∞`.
pub fn pair_lemma(vectors: &[Vec<f64>], pi: &Permutation, pair_signs: &SignSequence) -> Result<LemmaCheck> {
    let d = lemma_inputs(pi, vectors)?;
    let signed = pair_signed_term(vectors, pi, pair_signs)?;
    let new_pi = reorder(pi, &expand_pair_signs(pair_signs))?;
    let lhs = linalg::max_prefix_norm(permuted(&new_pi, vectors), d, Norm::Inf);
    let rhs = 0.5 * linalg::max_prefix_norm(permuted(pi, vectors), d, Norm::Inf)
        + 0.5 * signed
        + total_inf(vectors, d);
    Ok(LemmaCheck { lhs, rhs })
}

/// Chunked pair form: both herding terms only look at prefixes of length
/// `S, 2S, …, N`. Requires `S` even and `N mod S = 0`.
pub fn chunked_pair_lemma(
    vectors: &[Vec<f64>],
    pi: &Permutation,
    pair_signs: &SignSequence,
    s: usize,
) -> Result<LemmaCheck> {
    let d = lemma_inputs(pi, vectors)?;
    if s == 0 || !s.is_multiple_of(2) || !pi.len().is_multiple_of(s) {
        return Err(Error::InvalidArgument(format!(
            "chunk size {s} must be even and divide N = {}",
            pi.len()
        )));
    }
    let signed = pair_signed_term(vectors, pi, pair_signs)?;
    let new_pi = reorder(pi, &expand_pair_signs(pair_signs))?;
    let lhs = linalg::max_block_prefix_norm(permuted(&new_pi, vectors), d, s, Norm::Inf);
    let rhs = 0.5 * linalg::max_block_prefix_norm(permuted(pi, vectors), d, s, Norm::Inf)
        + 0.5 * signed
        + total_inf(vectors, d);
    Ok(LemmaCheck { lhs, rhs })
}
