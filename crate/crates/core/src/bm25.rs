//! Second-stage lexical filter: BM25 between a document and each candidate
//! label's descriptor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::auxiliary::{CandidateSet, Stage};
use crate::corpus::{Document, LabelDescriptor, LabelId};
use crate::error::{Error, Result};
use crate::registry::Registry;

pub const DEFAULT_THETA: f64 = 200.0;
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub doc_freq: BTreeMap<String, usize>,
    pub descriptor_len: BTreeMap<LabelId, usize>,
    pub avgdl: f64,
    pub n_labels: usize,
    pub term_freq: BTreeMap<LabelId, BTreeMap<String, usize>>,
}

impl Bm25Index {
    pub fn build(labels: &[LabelDescriptor]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLabelSet);
        }
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut descriptor_len = BTreeMap::new();
        let mut term_freq = BTreeMap::new();
        let mut total = 0usize;
        for label in labels {
            if label.descriptor_tokens.is_empty() {
                return Err(Error::EmptyDescriptor(label.id.0.clone()));
            }
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for tok in &label.descriptor_tokens {
                *tf.entry(tok.clone()).or_default() += 1;
            }
            for tok in tf.keys() {
                *doc_freq.entry(tok.clone()).or_default() += 1;
            }
            total += label.descriptor_tokens.len();
            if descriptor_len
                .insert(label.id.clone(), label.descriptor_tokens.len())
                .is_some()
            {
                return Err(Error::DuplicateId {
                    id: label.id.0.clone(),
                    path: None,
                    line: None,
                });
            }
            term_freq.insert(label.id.clone(), tf);
        }
        Ok(Self {
            doc_freq,
            descriptor_len,
            avgdl: total as f64 / labels.len() as f64,
            n_labels: labels.len(),
            term_freq,
        })
    }

    /// Robertson–Spärck Jones IDF floored at zero.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        idf(self.n_labels, df)
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelId> {
        self.descriptor_len.keys()
    }
}

pub fn idf(n_labels: usize, df: usize) -> f64 {
    let (n, df) = (n_labels as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

pub fn build_bm25_index(labels: &[LabelDescriptor]) -> Result<Bm25Index> {
    Bm25Index::build(labels)
}

/// Per-term saturation applied to the descriptor term frequency.
pub trait TermWeighting: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn validate(&self, params: &Bm25Params) -> Result<()> {
        let _ = params;
        Ok(())
    }

    /// `length_ratio` is |t_y| / avgdl.
    fn weight(&self, tf: f64, length_ratio: f64, k1: f64, b: f64) -> f64;
}

/// `tf·(k1+1) / (tf·k1·(1−b+b·r))`. The frequency cancels, leaving a
/// per-label length factor; needs `k1 > 0`.
#[derive(Debug, Clone, Copy)]
pub struct FlatTf;

impl TermWeighting for FlatTf {
    fn name(&self) -> &'static str {
        "flat-tf"
    }

    fn validate(&self, params: &Bm25Params) -> Result<()> {
        if params.k1 <= 0.0 {
            return Err(Error::InvalidParameter("flat-tf weighting requires k1 > 0".into()));
        }
        Ok(())
    }

    fn weight(&self, tf: f64, length_ratio: f64, k1: f64, b: f64) -> f64 {
        tf * (k1 + 1.0) / (tf * k1 * (1.0 - b + b * length_ratio))
    }
}

/// Classic Okapi saturation `tf·(k1+1) / (tf + k1·(1−b+b·r))`.
#[derive(Debug, Clone, Copy)]
pub struct Okapi;

impl TermWeighting for Okapi {
    fn name(&self) -> &'static str {
        "okapi"
    }

    fn weight(&self, tf: f64, length_ratio: f64, k1: f64, b: f64) -> f64 {
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length_ratio))
    }
}

pub type WeightingFactory = fn() -> Box<dyn TermWeighting>;

pub fn weightings() -> Registry<WeightingFactory> {
    Registry::<WeightingFactory>::new("bm25 weighting")
        .with("flat-tf", || Box::new(FlatTf))
        .with("okapi", || Box::new(Okapi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub theta: f64,
    pub weighting: String,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            theta: DEFAULT_THETA,
            weighting: "flat-tf".into(),
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "k1={} must be finite and >= 0",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!("b={} is outside [0, 1]", self.b)));
        }
        if self.theta.is_nan() {
            return Err(Error::InvalidParameter("theta is NaN".into()));
        }
        Ok(())
    }
}

pub struct Bm25Scorer<'a> {
    index: &'a Bm25Index,
    params: Bm25Params,
    weighting: Box<dyn TermWeighting>,
}

impl<'a> Bm25Scorer<'a> {
    pub fn new(index: &'a Bm25Index, params: &Bm25Params) -> Result<Self> {
        Self::with_registry(index, params, &weightings())
    }

    pub fn with_registry(
        index: &'a Bm25Index,
        params: &Bm25Params,
        registry: &Registry<WeightingFactory>,
    ) -> Result<Self> {
        params.validate()?;
        let weighting = (registry.get(&params.weighting)?)();
        weighting.validate(params)?;
        Ok(Self {
            index,
            params: params.clone(),
            weighting,
        })
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    /// Score over the distinct tokens shared by the document and `label`'s descriptor.
    pub fn score_tokens(&self, doc_tokens: &BTreeSet<&str>, label: &LabelId) -> Result<f64> {
        let tf = self.index.term_freq.get(label).ok_or_else(|| Error::UnknownLabel {
            label: label.0.clone(),
            path: None,
            line: None,
        })?;
        let ratio = self.index.descriptor_len[label] as f64 / self.index.avgdl;
        let mut score = 0.0;
        for (tok, &count) in tf {
            if doc_tokens.contains(tok.as_str()) {
                let idf = self.index.idf(tok);
                if idf > 0.0 {
                    score += idf
                        * self
                            .weighting
                            .weight(count as f64, ratio, self.params.k1, self.params.b);
                }
            }
        }
        Ok(score)
    }

    pub fn score(&self, doc: &Document, label: &LabelId) -> Result<f64> {
        self.score_tokens(&token_set(doc), label)
    }

    /// Keeps candidates whose score exceeds theta (strict).
    pub fn filter<'l, I>(&self, doc: &Document, candidates: I) -> Result<CandidateSet>
    where
        I: IntoIterator<Item = &'l LabelId>,
    {
        let tokens = token_set(doc);
        let mut labels = BTreeSet::new();
        for y in candidates {
            if self.score_tokens(&tokens, y)? > self.params.theta {
                labels.insert(y.clone());
            }
        }
        Ok(CandidateSet {
            doc_id: doc.id.clone(),
            labels,
            stage: Stage::Bm25,
        })
    }
}

fn token_set(doc: &Document) -> BTreeSet<&str> {
    doc.tokens.iter().map(String::as_str).collect()
}

pub fn bm25_score(doc: &Document, label: &LabelId, index: &Bm25Index, params: &Bm25Params) -> Result<f64> {
    Bm25Scorer::new(index, params)?.score(doc, label)
}

pub fn filter_bm25(
    doc: &Document,
    candidates: &CandidateSet,
    index: &Bm25Index,
    params: &Bm25Params,
) -> Result<CandidateSet> {
    if candidates.stage != Stage::Auxiliary {
        return Err(Error::InvalidParameter(
            "bm25 filtering expects an auxiliary-stage candidate set".into(),
        ));
    }
    Bm25Scorer::new(index, params)?.filter(doc, &candidates.labels)
}

/// Largest theta from `grid` whose filtered candidates keep at least
/// `target_recall` of the pooled gold labels of `docs`. `aux` is aligned
/// with `docs`.
pub fn calibrate_theta(
    docs: &[&Document],
    aux: &[CandidateSet],
    index: &Bm25Index,
    params: &Bm25Params,
    grid: &[f64],
    target_recall: f64,
) -> Result<Option<f64>> {
    if docs.len() != aux.len() {
        return Err(Error::MismatchedIds(format!(
            "{} documents, {} candidate sets",
            docs.len(),
            aux.len()
        )));
    }
    let scorer = Bm25Scorer::new(index, params)?;
    // Per gold label, the score it needs to beat; labels outside the aux set never pass.
    let mut gold_scores = Vec::new();
    for (doc, cands) in docs.iter().zip(aux) {
        let tokens = token_set(doc);
        for y in &doc.gold_labels {
            let s = if cands.labels.contains(y) {
                scorer.score_tokens(&tokens, y)?
            } else {
                f64::NEG_INFINITY
            };
            gold_scores.push(s);
        }
    }
    if gold_scores.is_empty() {
        return Ok(None);
    }
    let mut best = None;
    for &theta in grid {
        let kept = gold_scores.iter().filter(|&&s| s > theta).count();
        if kept as f64 / gold_scores.len() as f64 >= target_recall && best.is_none_or(|b| theta > b) {
            best = Some(theta);
        }
    }
    Ok(best)
}
