//! Contrastive re-ranking of retrieved candidates.

mod negatives;
mod objective;
mod optim;
mod train;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::auxiliary::CandidateSet;
use crate::corpus::{Document, LabelDescriptor, LabelId};
use crate::encoder::{leaves, TextEncoder, UNK};
use crate::error::{Error, Result};
use crate::graph::LabelGraph;
use crate::graphormer::LabelEncoder;
use crate::metrics::DocSets;
use crate::tape::{Matrix, Tape};

pub use negatives::{sample_negatives, sample_negatives_with, ContrastiveBatch};
pub use objective::{
    contrastive_loss, contrastive_loss_with, cosine, cosine_grad, objectives, ContrastiveObjective, MeanCosine,
    ObjectiveFactory, ObjectiveValue, PerPositive, TemperatureScaled,
};
pub use optim::{learning_rate, optimizers, Adam, Optimizer, OptimizerFactory, Sgd};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

/// Candidates ordered by descending cosine, ties by ascending label id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub doc_id: String,
    pub entries: Vec<(LabelId, f64)>,
}

impl RankedList {
    pub fn new(doc_id: String, mut entries: Vec<(LabelId, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { doc_id, entries }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecisionPolicy {
    TopK { k: usize },
    Threshold { t: f64 },
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        DecisionPolicy::Threshold { t: 0.0 }
    }
}

impl DecisionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecisionPolicy::TopK { k: 0 } => Err(Error::InvalidPolicy("top-k needs k >= 1".into())),
            DecisionPolicy::Threshold { t } if !t.is_finite() => {
                Err(Error::InvalidPolicy(format!("threshold {t} is not finite")))
            }
            _ => Ok(()),
        }
    }
}

pub fn predict_set(ranked: &RankedList, policy: &DecisionPolicy) -> Result<BTreeSet<LabelId>> {
    policy.validate()?;
    Ok(match *policy {
        DecisionPolicy::TopK { k } => ranked.entries.iter().take(k).map(|(y, _)| y.clone()).collect(),
        DecisionPolicy::Threshold { t } => ranked
            .entries
            .iter()
            .filter(|(_, s)| *s >= t)
            .map(|(y, _)| y.clone())
            .collect(),
    })
}

/// The 101 evenly spaced thresholds over [−1, 1].
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| i as f64 / 50.0 - 1.0)
}

/// Threshold on the grid with the highest pooled Micro-F1 (first one on
/// ties), returned with that F1. Gold documents without a ranked list count
/// all their labels as misses.
pub fn calibrate_threshold(ranked: &BTreeMap<String, RankedList>, gold: &DocSets) -> (f64, f64) {
    let mut best = (-1.0, f64::NEG_INFINITY);
    let total_gold: usize = gold.values().map(BTreeSet::len).sum();
    for t in threshold_grid() {
        let (mut tp, mut predicted) = (0usize, 0usize);
        for (id, g) in gold {
            if let Some(r) = ranked.get(id) {
                for (y, s) in &r.entries {
                    if *s >= t {
                        predicted += 1;
                        tp += g.contains(y) as usize;
                    }
                }
            }
        }
        let denom = predicted + total_gold;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best
}

static UNK_BAG: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| vec![UNK.to_string()]);

/// Empty token lists fall back to the unknown token.
fn bag(tokens: &[String]) -> &[String] {
    if tokens.is_empty() {
        UNK_BAG.as_slice()
    } else {
        tokens
    }
}

/// Loss over one batch with gradients for every trainable parameter.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub text: Vec<Matrix>,
    pub label: Vec<Matrix>,
}

/// Text encoder + label encoder over a fixed label graph.
#[derive(Debug, Clone)]
pub struct Model {
    pub text: Box<dyn TextEncoder>,
    pub label_encoder: Box<dyn LabelEncoder>,
    pub policy: DecisionPolicy,
    graph: LabelGraph,
    descriptors: Vec<Vec<String>>,
    index: HashMap<LabelId, usize>,
}

impl Model {
    /// `labels` must list the graph's nodes in node order.
    pub fn new(
        text: Box<dyn TextEncoder>,
        label_encoder: Box<dyn LabelEncoder>,
        graph: LabelGraph,
        labels: &[LabelDescriptor],
        policy: DecisionPolicy,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLabelSet);
        }
        if labels.len() != graph.n() || labels.iter().zip(graph.labels()).any(|(l, y)| &l.id != y) {
            return Err(Error::ShapeMismatch(
                "label descriptors do not match graph nodes".into(),
            ));
        }
        policy.validate()?;
        let index = labels.iter().enumerate().map(|(i, l)| (l.id.clone(), i)).collect();
        Ok(Self {
            text,
            label_encoder,
            policy,
            graph,
            descriptors: labels.iter().map(|l| l.descriptor_tokens.clone()).collect(),
            index,
        })
    }

    pub fn graph(&self) -> &LabelGraph {
        &self.graph
    }

    pub fn labels(&self) -> &[LabelId] {
        self.graph.labels()
    }

    fn label_row(&self, y: &LabelId) -> Result<usize> {
        self.index.get(y).copied().ok_or_else(|| Error::UnknownLabel {
            label: y.0.clone(),
            path: None,
            line: None,
        })
    }

    fn descriptor_bags(&self) -> Vec<&[String]> {
        self.descriptors.iter().map(|d| bag(d)).collect()
    }

    /// Label embeddings H_L, one row per label.
    pub fn label_embeddings(&self) -> Result<Matrix> {
        let features = self.text.encode_batch(&self.descriptor_bags())?;
        self.label_encoder.forward(&features, &self.graph)
    }

    pub fn encode_documents(&self, docs: &[&Document]) -> Result<Matrix> {
        let bags: Vec<&[String]> = docs.iter().map(|d| bag(&d.tokens)).collect();
        self.text.encode_batch(&bags)
    }

    /// Snapshot of the label embeddings for repeated ranking.
    pub fn ranker(&self) -> Result<Ranker<'_>> {
        Ok(Ranker {
            model: self,
            embeddings: self.label_embeddings()?,
        })
    }

    /// Batch-mean contrastive loss and its gradients for every parameter of
    /// both encoders. `docs` must follow `batch.docs`.
    pub fn loss_and_gradients(
        &self,
        docs: &[&Document],
        batch: &ContrastiveBatch,
        objective: &dyn ContrastiveObjective,
        tau: f64,
    ) -> Result<BatchGradients> {
        objective::check_tau(tau)?;
        if docs.len() != batch.docs.len() || docs.iter().zip(&batch.docs).any(|(d, id)| &d.id != id) {
            return Err(Error::MismatchedIds("batch documents".into()));
        }
        let mut tape = Tape::new();
        let tp = leaves(&mut tape, self.text.parameters());
        let lp = leaves(&mut tape, self.label_encoder.parameters());
        let doc_bags: Vec<&[String]> = docs.iter().map(|d| bag(&d.tokens)).collect();
        let d_var = self.text.record(&mut tape, &tp, &doc_bags)?;
        let f_var = self.text.record(&mut tape, &tp, &self.descriptor_bags())?;
        let h_var = self.label_encoder.record(&mut tape, &lp, f_var, &self.graph)?;
        let (dm, hm) = (tape.value(d_var), tape.value(h_var));

        let mut d_grad = Matrix::zeros(dm.dim());
        let mut h_grad = Matrix::zeros(hm.dim());
        let scale = 1.0 / docs.len() as f64;
        let mut loss = 0.0;
        for (b, doc) in docs.iter().enumerate() {
            let u = dm.row(b).to_vec();
            if batch.positives[b].is_empty() {
                return Err(Error::EmptyPositives);
            }
            if batch.negatives[b].is_empty() {
                return Err(Error::EmptyNegatives);
            }
            let pos_rows = batch.positives[b]
                .iter()
                .map(|y| self.label_row(y))
                .collect::<Result<Vec<_>>>()?;
            let neg_rows = batch.negatives[b]
                .iter()
                .map(|y| self.label_row(y))
                .collect::<Result<Vec<_>>>()?;
            let cos = |rows: &[usize]| {
                rows.iter()
                    .map(|&r| cosine_grad(&u, hm.row(r).as_slice().expect("standard layout")))
                    .collect::<Result<Vec<_>>>()
            };
            let (pos, neg) = (cos(&pos_rows)?, cos(&neg_rows)?);
            let pc: Vec<f64> = pos.iter().map(|c| c.0).collect();
            let nc: Vec<f64> = neg.iter().map(|c| c.0).collect();
            let value = objective.evaluate(&pc, &nc, tau);
            loss += value.loss * scale;
            let terms = pos.iter().zip(&pos_rows).zip(&value.d_pos);
            let terms = terms.chain(neg.iter().zip(&neg_rows).zip(&value.d_neg));
            for (((_, du, dv), &row), &g) in terms {
                for c in 0..u.len() {
                    d_grad[[b, c]] += g * scale * du[c];
                    h_grad[[row, c]] += g * scale * dv[c];
                }
            }
            log::trace!("document {}: loss {}", doc.id, value.loss);
        }
        if !loss.is_finite() {
            return Ok(BatchGradients {
                loss,
                text: Vec::new(),
                label: Vec::new(),
            });
        }
        let grads = tape.backward(&[(d_var, d_grad), (h_var, h_grad)])?;
        let collect = |vars: &[crate::tape::Var], params: Vec<&Matrix>| {
            vars.iter().zip(params).map(|(&v, p)| grads.or_zeros(v, p)).collect()
        };
        Ok(BatchGradients {
            loss,
            text: collect(&tp, self.text.parameters()),
            label: collect(&lp, self.label_encoder.parameters()),
        })
    }
}

/// Model plus precomputed label embeddings.
pub struct Ranker<'a> {
    model: &'a Model,
    embeddings: Matrix,
}

impl Ranker<'_> {
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    /// Ranks `candidates` for a document vector; an empty candidate set
    /// ranks the full label vocabulary.
    pub fn rank_vector(&self, doc_id: &str, doc_vec: &[f64], candidates: &BTreeSet<LabelId>) -> Result<RankedList> {
        let all;
        let cands: Vec<&LabelId> = if candidates.is_empty() {
            all = self.model.labels().iter().collect::<Vec<_>>();
            all
        } else {
            candidates.iter().collect()
        };
        let entries = cands
            .into_iter()
            .map(|y| {
                let row = self.model.label_row(y)?;
                let s = cosine(doc_vec, self.embeddings.row(row).as_slice().expect("standard layout"))?;
                Ok((y.clone(), s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RankedList::new(doc_id.to_string(), entries))
    }

    /// Ranks each document against its candidate set (missing entries rank
    /// the full vocabulary).
    pub fn rank_documents(
        &self,
        docs: &[&Document],
        candidates: &BTreeMap<String, BTreeSet<LabelId>>,
    ) -> Result<BTreeMap<String, RankedList>> {
        let mut out = BTreeMap::new();
        for chunk in docs.chunks(256) {
            let vecs = self.model.encode_documents(chunk)?;
            for (doc, v) in chunk.iter().zip(vecs.outer_iter()) {
                let empty = BTreeSet::new();
                let cands = candidates.get(&doc.id).unwrap_or(&empty);
                let list = self.rank_vector(&doc.id, v.as_slice().expect("standard layout"), cands)?;
                out.insert(doc.id.clone(), list);
            }
        }
        Ok(out)
    }
}

pub fn rank_candidates(doc: &Document, cands: &CandidateSet, model: &Model) -> Result<RankedList> {
    let ranker = model.ranker()?;
    let v = model.encode_documents(&[doc])?;
    ranker.rank_vector(&doc.id, v.row(0).as_slice().expect("standard layout"), &cands.labels)
}
