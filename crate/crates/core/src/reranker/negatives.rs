//! In-batch negative sampling.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabelId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub docs: Vec<String>,
    pub positives: Vec<BTreeSet<LabelId>>,
    /// Exactly `docs.len()` labels per document, none of them gold.
    pub negatives: Vec<Vec<LabelId>>,
}

/// Draws N = batch size negatives per document from the other documents'
/// gold labels, excluding its own. Pools smaller than N are sampled with
/// replacement.
pub fn sample_negatives_with(batch: &[(String, BTreeSet<LabelId>)], rng: &mut ChaCha8Rng) -> Result<ContrastiveBatch> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("batch of {n} document(s)")));
    }
    let mut negatives = Vec::with_capacity(n);
    for (d, (id, gold)) in batch.iter().enumerate() {
        let pool: BTreeSet<&LabelId> = batch
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != d)
            .flat_map(|(_, (_, g))| g.iter())
            .filter(|y| !gold.contains(*y))
            .collect();
        if pool.is_empty() {
            return Err(Error::DegenerateBatch(format!(
                "no eligible negatives for document {id}"
            )));
        }
        let picked: Vec<LabelId> = if pool.len() >= n {
            let mut chosen = pool.into_iter().choose_multiple(rng, n);
            chosen.sort();
            chosen.into_iter().cloned().collect()
        } else {
            log::debug!(
                "document {id}: {} eligible negatives for {n} draws, sampling with replacement",
                pool.len()
            );
            let pool: Vec<&LabelId> = pool.into_iter().collect();
            (0..n).map(|_| (*pool.choose(rng).unwrap()).clone()).collect()
        };
        negatives.push(picked);
    }
    Ok(ContrastiveBatch {
        docs: batch.iter().map(|(id, _)| id.clone()).collect(),
        positives: batch.iter().map(|(_, g)| g.clone()).collect(),
        negatives,
    })
}

pub fn sample_negatives(batch: &[(String, BTreeSet<LabelId>)], seed: u64) -> Result<ContrastiveBatch> {
    sample_negatives_with(batch, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, labels: &[&str]) -> (String, BTreeSet<LabelId>) {
        (id.into(), labels.iter().map(|&l| l.into()).collect())
    }

    #[test]
    fn disjoint_pair_draws_from_the_other() {
        let batch = [entry("a", &["1", "2"]), entry("b", &["3"])];
        let b = sample_negatives(&batch, 1).unwrap();
        assert!(b.negatives[0].iter().all(|y| y.0 == "3"));
        assert!(b.negatives[1].iter().all(|y| y.0 == "1" || y.0 == "2"));
        assert_eq!(b.negatives[0].len(), 2);
        assert_eq!(sample_negatives(&batch, 1).unwrap(), b);
    }

    #[test]
    fn degenerate() {
        let batch = [entry("a", &["1", "2"]), entry("b", &["1"])];
        assert!(matches!(sample_negatives(&batch, 0), Err(Error::DegenerateBatch(_))));
        assert!(matches!(
            sample_negatives(&batch[..1], 0),
            Err(Error::DegenerateBatch(_))
        ));
    }

    proptest! {
        #[test]
        fn negatives_avoid_gold(
            golds in proptest::collection::vec(proptest::collection::btree_set(0u8..12, 1..5), 2..8),
            seed in any::<u64>(),
        ) {
            let batch: Vec<_> = golds.iter().enumerate().map(|(i, g)| {
                (format!("d{i}"), g.iter().map(|y| LabelId(y.to_string())).collect::<BTreeSet<_>>())
            }).collect();
            if let Ok(b) = sample_negatives(&batch, seed) {
                for (neg, (_, gold)) in b.negatives.iter().zip(&batch) {
                    prop_assert_eq!(neg.len(), batch.len());
                    prop_assert!(neg.iter().all(|y| !gold.contains(y)));
                }
            }
        }
    }
}
