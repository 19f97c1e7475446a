use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Example;
use crate::error::{Error, Result};

/// Assignment of example ids to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Splits `examples` into (train, held-out) for `fold`, preserving input order.
    pub fn partition<'a>(&self, examples: &'a [Example], fold: usize) -> (Vec<&'a Example>, Vec<&'a Example>) {
        examples.iter().partition(|ex| self.fold_of(ex.id()) != Some(fold))
    }
}

/// Seeded shuffle of the example ids followed by round-robin assignment.
pub fn make_folds(examples: &[Example], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if examples.len() < k {
        return Err(Error::TooFewExamples {
            needed: k,
            got: examples.len(),
        });
    }
    let mut ids: Vec<&str> = examples.iter().map(Example::id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut assignments = BTreeMap::new();
    for (pos, id) in ids.into_iter().enumerate() {
        if assignments.insert(id.to_string(), pos % k).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate example id {id:?}")));
        }
    }
    Ok(FoldSplit { k, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Segment;

    fn corpus(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                segment: Segment::from_text(format!("ex{i}"), "Oil fell").unwrap(),
                gold: vec![],
            })
            .collect()
    }

    #[test]
    fn even_split() {
        let split = make_folds(&corpus(10), 5, 1).unwrap();
        assert_eq!(split.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn uneven_split() {
        let split = make_folds(&corpus(11), 5, 1).unwrap();
        assert_eq!(split.fold_sizes(), vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn seed_determinism() {
        let c = corpus(23);
        assert_eq!(make_folds(&c, 5, 42).unwrap(), make_folds(&c, 5, 42).unwrap());
        assert_ne!(make_folds(&c, 5, 42).unwrap(), make_folds(&c, 5, 43).unwrap());
    }

    #[test]
    fn too_few_examples() {
        assert!(matches!(
            make_folds(&corpus(3), 5, 0),
            Err(Error::TooFewExamples { needed: 5, got: 3 })
        ));
        assert!(make_folds(&corpus(3), 1, 0).is_err());
    }

    #[test]
    fn partition_covers_everything_once() {
        let c = corpus(12);
        let split = make_folds(&c, 4, 9).unwrap();
        for fold in 0..4 {
            let (train, test) = split.partition(&c, fold);
            assert_eq!(train.len() + test.len(), 12);
            assert_eq!(test.len(), 3);
        }
    }
}
