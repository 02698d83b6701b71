//! Permutation algebra shared by every jigsaw modality.
//!
//! A [`Permutation`] maps an original position `i` to its shuffled position
//! `π(i)`. Indices are 0-based internally; the answer protocol seen by models
//! ([`GroundTruth`]) is 1-based.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_K: usize = 2;
pub const MAX_K: usize = 64;

fn check_k(k: usize) -> Result<()> {
    if !(MIN_K..=MAX_K).contains(&k) {
        return Err(Error::invalid(format!(
            "element count {k} outside [{MIN_K}, {MAX_K}]"
        )));
    }
    Ok(())
}

/// Bijection on `0..k`; `mapping[i]` is the shuffled position of original element `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(Permutation {
            mapping: (0..k).collect(),
        })
    }

    /// Builds a permutation from a 0-based mapping, validating bijectivity.
    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        check_k(mapping.len())?;
        let k = mapping.len();
        let mut seen = vec![false; k];
        for &m in &mapping {
            if m >= k || seen[m] {
                return Err(Error::invalid(format!(
                    "mapping {mapping:?} is not a bijection on 0..{k}"
                )));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping })
    }

    pub fn k(&self) -> usize {
        self.mapping.len()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// Shuffled position of original element `i`.
    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn invert(&self) -> Permutation {
        let mut inverse = vec![0; self.k()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inverse[m] = i;
        }
        Permutation { mapping: inverse }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.k() != other.k() {
            return Err(Error::invalid(format!(
                "cannot compose permutations of size {} and {}",
                self.k(),
                other.k()
            )));
        }
        Ok(Permutation {
            mapping: other.mapping.iter().map(|&m| self.mapping[m]).collect(),
        })
    }

    /// Reorders `items` into the shuffled sequence: slot `j` receives the
    /// item originally at `π⁻¹(j)`.
    pub fn apply_shuffle<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.k() {
            return Err(Error::invalid(format!(
                "{} items for a permutation of size {}",
                items.len(),
                self.k()
            )));
        }
        Ok(self
            .invert()
            .mapping
            .iter()
            .map(|&orig| items[orig].clone())
            .collect())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            answer: self.mapping.iter().map(|&m| m + 1).collect(),
        }
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(mapping: Vec<usize>) -> Result<Self> {
        Permutation::from_mapping(mapping)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

/// Samples a permutation of `0..k` uniformly with Fisher-Yates.
///
/// With `allow_identity == false` the identity is rejected and resampled,
/// which keeps the distribution uniform over the remaining `k! - 1` elements.
pub fn sample_permutation<R: Rng + ?Sized>(
    k: usize,
    rng: &mut R,
    allow_identity: bool,
) -> Result<Permutation> {
    check_k(k)?;
    loop {
        let mut mapping: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = rng.random_range(0..=i);
            mapping.swap(i, j);
        }
        let p = Permutation { mapping };
        if allow_identity || !p.is_identity() {
            return Ok(p);
        }
    }
}

/// The externally visible answer `[π(1), …, π(K)]`, 1-based.
///
/// `answer[i]` names the shuffled-sequence index of the piece belonging at
/// original position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GroundTruth {
    answer: Vec<usize>,
}

impl GroundTruth {
    pub fn new(answer: Vec<usize>) -> Result<Self> {
        let as_i64: Vec<i64> = answer.iter().map(|&a| a as i64).collect();
        if !is_valid_permutation(&as_i64, answer.len()) || answer.len() < MIN_K {
            return Err(Error::invalid(format!(
                "ground truth {answer:?} is not a permutation of 1..{}",
                answer.len()
            )));
        }
        Ok(GroundTruth { answer })
    }

    pub fn k(&self) -> usize {
        self.answer.len()
    }

    pub fn answer(&self) -> &[usize] {
        &self.answer
    }

    pub fn to_permutation(&self) -> Permutation {
        Permutation {
            mapping: self.answer.iter().map(|&a| a - 1).collect(),
        }
    }

    /// Restores original order from a shuffled sequence.
    pub fn reassemble<T: Clone>(&self, shuffled: &[T]) -> Result<Vec<T>> {
        if shuffled.len() != self.k() {
            return Err(Error::invalid(format!(
                "{} shuffled items for an answer of size {}",
                shuffled.len(),
                self.k()
            )));
        }
        Ok(self.answer.iter().map(|&a| shuffled[a - 1].clone()).collect())
    }

    /// Comma-separated rendering as used in the answer protocol.
    pub fn to_answer_string(&self) -> String {
        format_answer(self.answer.iter().map(|&a| a as i64))
    }
}

impl TryFrom<Vec<usize>> for GroundTruth {
    type Error = Error;

    fn try_from(answer: Vec<usize>) -> Result<Self> {
        GroundTruth::new(answer)
    }
}

impl From<GroundTruth> for Vec<usize> {
    fn from(g: GroundTruth) -> Self {
        g.answer
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_answer_string())
    }
}

pub fn format_answer(indices: impl IntoIterator<Item = i64>) -> String {
    indices
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Number of positions where `o` agrees with the ground truth.
pub fn count_fixed(o: &[i64], g: &GroundTruth) -> Result<usize> {
    if o.len() != g.k() {
        return Err(Error::invalid(format!(
            "answer has {} entries, expected {}",
            o.len(),
            g.k()
        )));
    }
    Ok(o.iter()
        .zip(g.answer())
        .filter(|(&a, &b)| a == b as i64)
        .count())
}

/// True iff `o` has length `k` and is a rearrangement of `1..=k`.
pub fn is_valid_permutation(o: &[i64], k: usize) -> bool {
    if o.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    for &v in o {
        if v < 1 || v as u64 > k as u64 {
            return false;
        }
        let idx = (v - 1) as usize;
        if seen[idx] {
            return false;
        }
        seen[idx] = true;
    }
    true
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every permutation of `0..k` in lexicographic order (test oracle).
    pub(crate) fn all_mappings(k: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if prefix.len() == used.len() {
                out.push(prefix.clone());
                return;
            }
            for v in 0..used.len() {
                if !used[v] {
                    used[v] = true;
                    prefix.push(v);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[v] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; k], &mut out);
        out
    }

    fn cycle3() -> Permutation {
        // 1→2, 2→3, 3→1 (1-based)
        Permutation::from_mapping(vec![1, 2, 0]).unwrap()
    }

    #[test]
    fn k_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_permutation(1, &mut rng, true),
            Err(Error::InvalidArgument(_))
        ));
        assert!(sample_permutation(65, &mut rng, true).is_err());
        assert!(sample_permutation(64, &mut rng, true).is_ok());
    }

    #[test]
    fn k2_reproducible() {
        let a: Vec<_> = (0..20)
            .map(|s| sample_permutation(2, &mut ChaCha8Rng::seed_from_u64(s), true).unwrap())
            .collect();
        let b: Vec<_> = (0..20)
            .map(|s| sample_permutation(2, &mut ChaCha8Rng::seed_from_u64(s), true).unwrap())
            .collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|p| p.is_identity()));
        assert!(a.iter().any(|p| !p.is_identity()));
    }

    #[test]
    fn no_identity_when_disallowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            assert!(!sample_permutation(2, &mut rng, false).unwrap().is_identity());
        }
    }

    #[test]
    fn uniform_over_s6() {
        let all = all_mappings(6);
        let index: std::collections::HashMap<Vec<usize>, usize> =
            all.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let n = 100_000usize;
        let mut counts = vec![0usize; all.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..n {
            let p = sample_permutation(6, &mut rng, true).unwrap();
            counts[index[p.mapping()]] += 1;
        }
        let expected = n as f64 / 720.0;
        let sigma = (n as f64 * (1.0 / 720.0) * (1.0 - 1.0 / 720.0)).sqrt();
        // Per-cell 3σ band; with 720 cells a 4σ outlier is already rare, so
        // the band is checked jointly via chi-square as well.
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 4.5 * sigma, "count {c} vs {expected}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 719 dof: mean 719, sd ≈ 37.9; 5 sd bound.
        assert!(chi2 < 719.0 + 5.0 * 37.9, "chi2 = {chi2}");
    }

    #[test]
    fn invert_examples() {
        let id = Permutation::identity(5).unwrap();
        assert_eq!(id.invert(), id);
        // π⁻¹ = (1→3, 2→1, 3→2)
        assert_eq!(cycle3().invert().mapping(), &[2, 0, 1]);
    }

    #[test]
    fn inverse_law_all_of_s6() {
        let id = Permutation::identity(6).unwrap();
        for m in all_mappings(6) {
            let p = Permutation::from_mapping(m).unwrap();
            assert_eq!(p.invert().compose(&p).unwrap(), id);
            assert_eq!(p.compose(&p.invert()).unwrap(), id);
        }
    }

    #[test]
    fn shuffle_cycle_example() {
        let out = cycle3().apply_shuffle(&["A", "B", "C"]).unwrap();
        assert_eq!(out, vec!["C", "A", "B"]);
        let g = cycle3().ground_truth();
        assert_eq!(g.answer(), &[2, 3, 1]);
        // shuffled[answer[0]] (1-based) is A, the piece at original position 1
        assert_eq!(out[g.answer()[0] - 1], "A");
        assert_eq!(g.reassemble(&out).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn shuffle_identity_and_length_mismatch() {
        let id = Permutation::identity(3).unwrap();
        assert_eq!(id.apply_shuffle(&[1, 2, 3]).unwrap(), vec![1, 2, 3]);
        assert_eq!(id.ground_truth().answer(), &[1, 2, 3]);
        assert!(matches!(
            id.apply_shuffle(&[1, 2]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn shuffle_round_trip_k9() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items: Vec<u32> = (100..109).collect();
        for _ in 0..10_000 {
            let p = sample_permutation(9, &mut rng, true).unwrap();
            let shuffled = p.apply_shuffle(&items).unwrap();
            assert_eq!(p.ground_truth().reassemble(&shuffled).unwrap(), items);
        }
    }

    #[test]
    fn answer_format_example_is_permutation() {
        let example = [5, 1, 3, 7, 9, 2, 4, 8, 6];
        assert!(is_valid_permutation(&example, 9));
        let g = GroundTruth::new(example.iter().map(|&x| x as usize).collect()).unwrap();
        assert_eq!(g.to_answer_string(), "5, 1, 3, 7, 9, 2, 4, 8, 6");
    }

    #[test]
    fn count_fixed_examples() {
        let g = GroundTruth::new((1..=6).collect()).unwrap();
        assert_eq!(count_fixed(&[1, 2, 3, 4, 5, 6], &g).unwrap(), 6);
        assert_eq!(count_fixed(&[6, 5, 4, 3, 2, 1], &g).unwrap(), 0);
        assert!(count_fixed(&[1, 2, 3], &g).is_err());
    }

    #[test]
    fn mean_fixed_points_over_s6_is_one() {
        let g = GroundTruth::new(vec![3, 1, 6, 2, 5, 4]).unwrap();
        let total: usize = all_mappings(6)
            .into_iter()
            .map(|m| {
                let o: Vec<i64> = m.iter().map(|&x| x as i64 + 1).collect();
                count_fixed(&o, &g).unwrap()
            })
            .sum();
        assert_eq!(total, 720);
    }

    #[test]
    fn validity_examples() {
        assert!(is_valid_permutation(&[2, 3, 1, 4, 6, 5], 6));
        assert!(!is_valid_permutation(&[1, 1, 2, 3, 4, 5], 6));
        assert!(!is_valid_permutation(&[1, 2, 3], 6));
        assert!(!is_valid_permutation(&[0, 1, 2], 3));
        assert!(!is_valid_permutation(&[1, 2, -3], 3));
        assert!(!is_valid_permutation(&[1, 2, i64::MAX], 3));
    }

    #[test]
    fn serde_rejects_non_bijection() {
        assert!(serde_json::from_str::<Permutation>("[0,0,1]").is_err());
        let p: Permutation = serde_json::from_str("[2,0,1]").unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,0,1]");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampled_is_bijection(k in 2usize..=64, seed: u64) {
                let p = sample_permutation(k, &mut ChaCha8Rng::seed_from_u64(seed), true).unwrap();
                let mut sorted = p.mapping().to_vec();
                sorted.sort_unstable();
                prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
            }

            #[test]
            fn round_trip_any_items(items in proptest::collection::vec(any::<u16>(), 2..=64), seed: u64) {
                let p = sample_permutation(items.len(), &mut ChaCha8Rng::seed_from_u64(seed), true).unwrap();
                let shuffled = p.apply_shuffle(&items).unwrap();
                prop_assert_eq!(p.ground_truth().reassemble(&shuffled).unwrap(), items);
            }

            #[test]
            fn seed_determinism(k in 2usize..=64, seed: u64) {
                let mut a = ChaCha8Rng::seed_from_u64(seed);
                let mut b = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..4 {
                    prop_assert_eq!(
                        sample_permutation(k, &mut a, false).unwrap(),
                        sample_permutation(k, &mut b, false).unwrap()
                    );
                }
            }
        }
    }
}
