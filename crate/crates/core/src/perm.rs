//! Permutations of `{0, …, N-1}` and the ±1 sign sequences that balancing
//! assigns to permuted vectors.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A training order `π`. `order[j]` is the index processed at step `j`;
/// `inverse[i]` is the step at which index `i` is processed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("permutation length must be at least 1".into()));
        }
        let order: Vec<usize> = (0..n).collect();
        Ok(Self { inverse: order.clone(), order })
    }

    /// Validates `order` as a bijection on `{0, …, N-1}` and builds the inverse.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidSize("permutation length must be at least 1".into()));
        }
        let mut inverse = vec![usize::MAX; n];
        for (j, &i) in order.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidPermutation(format!(
                    "index {i} out of range for length {n}"
                )));
            }
            if inverse[i] != usize::MAX {
                return Err(Error::InvalidPermutation(format!("duplicate index {i}")));
            }
            inverse[i] = j;
        }
        Ok(Self { order, inverse })
    }

    /// A uniformly random permutation (Fisher–Yates), reproducible under a seeded `rng`.
    pub fn uniform_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::identity(n)?;
        p.order.shuffle(rng);
        for (j, &i) in p.order.iter().enumerate() {
            p.inverse[i] = j;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// `π(j)`
    pub fn apply(&self, j: usize) -> usize {
        self.order[j]
    }

    /// `π⁻¹(i)`
    pub fn position_of(&self, i: usize) -> usize {
        self.inverse[i]
    }

    pub fn reversed(&self) -> Self {
        let order: Vec<usize> = self.order.iter().rev().copied().collect();
        let n = order.len();
        let inverse = self.inverse.iter().map(|&j| n - 1 - j).collect();
        Self { order, inverse }
    }

    pub fn into_order(self) -> Vec<usize> {
        self.order
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(order: Vec<usize>) -> Result<Self> {
        Self::from_order(order)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.order
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value() as i8)
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match i8::deserialize(d)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(serde::de::Error::custom(format!("sign must be +1 or -1, got {other}"))),
        }
    }
}

/// Signs `ε_0, …, ε_{N-1}` assigned to the permuted vectors `z_{π(0)}, …`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignSequence(Vec<Sign>);

impl SignSequence {
    pub fn new(signs: Vec<Sign>) -> Self {
        Self(signs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn signs(&self) -> &[Sign] {
        &self.0
    }

    pub fn push(&mut self, s: Sign) {
        self.0.push(s);
    }

    pub fn iter(&self) -> impl Iterator<Item = Sign> + '_ {
        self.0.iter().copied()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| s.flip()).collect())
    }
}

impl FromIterator<Sign> for SignSequence {
    fn from_iter<T: IntoIterator<Item = Sign>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn identity_cases() {
        let p = Permutation::identity(3).unwrap();
        assert_eq!(p.order(), &[0, 1, 2]);
        assert_eq!(p.inverse(), &[0, 1, 2]);
        assert_eq!(Permutation::identity(1).unwrap().order(), &[0]);
        let p4 = Permutation::identity(4).unwrap();
        assert_eq!(p4.inverse(), p4.order());
        assert!(matches!(Permutation::identity(0), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn from_order_inverse() {
        let p = Permutation::from_order(vec![0, 1, 3, 2]).unwrap();
        assert_eq!(p.inverse(), &[0, 1, 3, 2]);
        let p = Permutation::from_order(vec![2, 0, 1]).unwrap();
        assert_eq!(p.inverse(), &[1, 2, 0]);
        assert!(matches!(
            Permutation::from_order(vec![0, 0, 1]),
            Err(Error::InvalidPermutation(_))
        ));
        assert!(matches!(
            Permutation::from_order(vec![0, 3, 1]),
            Err(Error::InvalidPermutation(_))
        ));
    }

    #[test]
    fn uniform_random_determinism() {
        let mut rng = seeded_rng(42);
        assert_eq!(Permutation::uniform_random(1, &mut rng).unwrap().order(), &[0]);
        let a = Permutation::uniform_random(5, &mut seeded_rng(7)).unwrap();
        let b = Permutation::uniform_random(5, &mut seeded_rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_random_is_uniform_on_s3() {
        // Exhaustive enumeration of S3 gives the target cells; each must be hit
        // with frequency 1/6 ± 0.01.
        let all: Vec<Vec<usize>> = vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ];
        let draws = 60_000;
        let mut counts = [0usize; 6];
        for seed in 0..draws {
            let p = Permutation::uniform_random(3, &mut seeded_rng(seed as u64)).unwrap();
            let k = all.iter().position(|o| o.as_slice() == p.order()).unwrap();
            counts[k] += 1;
        }
        let mut chi2 = 0.0;
        let expected = draws as f64 / 6.0;
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "frequency {f}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 5 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 20.52, "chi2 = {chi2}");
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let p = Permutation::from_order(vec![2, 0, 1]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[2,0,1]");
        let back: Permutation = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
        let signs = SignSequence::new(vec![Sign::Plus, Sign::Minus]);
        assert_eq!(serde_json::to_string(&signs).unwrap(), "[1,-1]");
    }

    proptest! {
        #[test]
        fn inverse_is_consistent(n in 1usize..64, seed in any::<u64>()) {
            let p = Permutation::uniform_random(n, &mut seeded_rng(seed)).unwrap();
            for j in 0..n {
                prop_assert_eq!(p.position_of(p.apply(j)), j);
                prop_assert_eq!(p.apply(p.position_of(j)), j);
            }
            let again = Permutation::from_order(p.order().to_vec()).unwrap();
            prop_assert_eq!(&again, &p);
            let r = p.reversed();
            prop_assert_eq!(Permutation::from_order(r.order().to_vec()).unwrap(), r);
        }
    }
}
