//! First-stage retrieval: auxiliary code → label conditional probabilities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AuxCode, Document, LabelId};
use crate::error::{Error, Result};

/// Default probability threshold for keeping an auxiliary-code/label pair.
pub const DEFAULT_ETA: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Auxiliary,
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub doc_id: String,
    pub labels: BTreeSet<LabelId>,
    pub stage: Stage,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Record-level co-occurrence counts between auxiliary codes and labels on
/// the training split. A document contributes at most one to each count.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceIndex {
    pub marginal_counts: BTreeMap<AuxCode, u64>,
    pub pair_counts: BTreeMap<AuxCode, BTreeMap<LabelId, u64>>,
}

impl CooccurrenceIndex {
    pub fn build<'a, I>(train_docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut index = CooccurrenceIndex::default();
        let mut n = 0usize;
        for doc in train_docs {
            n += 1;
            for code in doc.aux.codes() {
                *index.marginal_counts.entry(code.clone()).or_default() += 1;
                let row = index.pair_counts.entry(code).or_default();
                for y in &doc.gold_labels {
                    *row.entry(y.clone()).or_default() += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(index)
    }

    /// Adds another index's counts; merging is commutative.
    pub fn merge(&mut self, other: &CooccurrenceIndex) {
        for (k, c) in &other.marginal_counts {
            *self.marginal_counts.entry(k.clone()).or_default() += c;
        }
        for (k, row) in &other.pair_counts {
            let mine = self.pair_counts.entry(k.clone()).or_default();
            for (y, c) in row {
                *mine.entry(y.clone()).or_default() += c;
            }
        }
    }

    /// P(y | k); zero for unseen codes or pairs.
    pub fn cond_prob(&self, code: &AuxCode, label: &LabelId) -> f64 {
        let Some(&marginal) = self.marginal_counts.get(code) else {
            return 0.0;
        };
        let pair = self
            .pair_counts
            .get(code)
            .and_then(|row| row.get(label))
            .copied()
            .unwrap_or(0);
        pair as f64 / marginal as f64
    }

    /// Labels y with P(y | k) > eta (strict).
    pub fn selected_labels_for_code(&self, code: &AuxCode, eta: f64) -> BTreeSet<LabelId> {
        let (Some(&marginal), Some(row)) = (self.marginal_counts.get(code), self.pair_counts.get(code)) else {
            return BTreeSet::new();
        };
        row.iter()
            .filter(|&(_, &c)| c as f64 / marginal as f64 > eta)
            .map(|(y, _)| y.clone())
            .collect()
    }

    /// Union of the selected labels over every DRG, CPT and drug code of `doc`.
    pub fn retrieve(&self, doc: &Document, eta: f64) -> CandidateSet {
        let mut labels = BTreeSet::new();
        for code in doc.aux.codes() {
            labels.extend(self.selected_labels_for_code(&code, eta));
        }
        CandidateSet {
            doc_id: doc.id.clone(),
            labels,
            stage: Stage::Auxiliary,
        }
    }
}

pub fn build_aux_index(train_docs: &[&Document]) -> Result<CooccurrenceIndex> {
    CooccurrenceIndex::build(train_docs.iter().copied())
}

pub fn retrieve_candidates_aux(doc: &Document, index: &CooccurrenceIndex, eta: f64) -> Result<CandidateSet> {
    check_eta(eta)?;
    Ok(index.retrieve(doc, eta))
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("eta={eta} is outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Fraction of all gold labels (pooled over documents) found in the candidates.
    pub recall: f64,
    pub mean_size: f64,
    pub n_docs: usize,
    pub n_gold: usize,
    pub n_covered: usize,
}

/// Gold-label recall and mean size of `candidates`, aligned to `docs` by id.
pub fn coverage_report(candidates: &[CandidateSet], docs: &[&Document]) -> Result<CoverageStats> {
    if candidates.len() != docs.len() {
        return Err(Error::MismatchedIds(format!(
            "{} candidate sets for {} documents",
            candidates.len(),
            docs.len()
        )));
    }
    let by_id: BTreeMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.doc_id.as_str(), c)).collect();
    let (mut n_gold, mut n_covered, mut total_size) = (0usize, 0usize, 0usize);
    for doc in docs {
        let cands = by_id
            .get(doc.id.as_str())
            .ok_or_else(|| Error::MismatchedIds(format!("no candidates for `{}`", doc.id)))?;
        n_gold += doc.gold_labels.len();
        n_covered += doc.gold_labels.iter().filter(|y| cands.labels.contains(y)).count();
        total_size += cands.labels.len();
    }
    Ok(CoverageStats {
        recall: if n_gold == 0 {
            0.0
        } else {
            n_covered as f64 / n_gold as f64
        },
        mean_size: if docs.is_empty() {
            0.0
        } else {
            total_size as f64 / docs.len() as f64
        },
        n_docs: docs.len(),
        n_gold,
        n_covered,
    })
}
