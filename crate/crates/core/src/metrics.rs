//! Micro/Macro F1, Micro/Macro ROC-AUC and precision at K.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::LabelId;
use crate::error::{Error, Result};
use crate::reranker::RankedList;

/// Score assigned to labels outside a document's candidate list.
pub const NON_CANDIDATE_SCORE: f64 = -1.0;

/// Per-document label sets keyed by document id.
pub type DocSets = BTreeMap<String, BTreeSet<LabelId>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn check_aligned<A, B>(a: &BTreeMap<String, A>, b: &BTreeMap<String, B>) -> Result<()> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let missing = a
            .keys()
            .find(|k| !b.contains_key(*k))
            .or_else(|| b.keys().find(|k| !a.contains_key(*k)));
        return Err(Error::MismatchedIds(format!(
            "{} vs {} documents (first unmatched: {})",
            a.len(),
            b.len(),
            missing.map(String::as_str).unwrap_or("?")
        )));
    }
    Ok(())
}

fn check_known(set: &BTreeSet<LabelId>, vocab: &BTreeSet<&LabelId>) -> Result<()> {
    match set.iter().find(|y| !vocab.contains(y)) {
        Some(y) => Err(Error::UnknownLabel {
            label: y.0.clone(),
            path: None,
            line: None,
        }),
        None => Ok(()),
    }
}

/// Per-label TP/FP/FN over aligned gold and predicted sets.
pub fn confusion_table(gold: &DocSets, pred: &DocSets, labels: &[LabelId]) -> Result<BTreeMap<LabelId, Confusion>> {
    check_aligned(gold, pred)?;
    let vocab: BTreeSet<&LabelId> = labels.iter().collect();
    let mut table: BTreeMap<LabelId, Confusion> = labels.iter().map(|y| (y.clone(), Confusion::default())).collect();
    for (g, p) in gold.values().zip(pred.values()) {
        check_known(g, &vocab)?;
        check_known(p, &vocab)?;
        for y in g.intersection(p) {
            table.get_mut(y).unwrap().tp += 1;
        }
        for y in p.difference(g) {
            table.get_mut(y).unwrap().fp += 1;
        }
        for y in g.difference(p) {
            table.get_mut(y).unwrap().fn_ += 1;
        }
    }
    Ok(table)
}

/// Macro F1 averages over labels with at least one TP, FP or FN.
fn f1_from_table<'a>(table: impl Iterator<Item = &'a Confusion>) -> (f64, f64) {
    let mut pooled = Confusion::default();
    let (mut sum, mut n) = (0.0, 0usize);
    for c in table {
        pooled.add(c);
        if !c.is_empty() {
            sum += c.f1();
            n += 1;
        }
    }
    let macro_f1 = if n == 0 { 0.0 } else { sum / n as f64 };
    (macro_f1, pooled.f1())
}

/// (macro, micro) F1.
pub fn f1_scores(gold: &DocSets, pred: &DocSets, labels: &[LabelId]) -> Result<(f64, f64)> {
    let table = confusion_table(gold, pred, labels)?;
    Ok(f1_from_table(table.values()))
}

/// ROC-AUC by the Mann–Whitney rank sum with midranks for ties. `None` when
/// either class is empty.
pub fn roc_auc(instances: &[(f64, bool)]) -> Option<f64> {
    let n_pos = instances.iter().filter(|(_, p)| *p).count();
    let n_neg = instances.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = instances.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let pos = sorted[i..=j].iter().filter(|(_, p)| *p).count();
        rank_sum += midrank * pos as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Per-document per-label scores keyed by document id.
pub type DocScores = BTreeMap<String, BTreeMap<LabelId, f64>>;

fn score_of(scores: &BTreeMap<LabelId, f64>, y: &LabelId) -> f64 {
    scores.get(y).copied().unwrap_or(NON_CANDIDATE_SCORE)
}

fn per_label_auc(gold: &DocSets, scores: &DocScores, labels: &[LabelId]) -> BTreeMap<LabelId, Option<f64>> {
    labels
        .iter()
        .map(|y| {
            let inst: Vec<(f64, bool)> = gold
                .iter()
                .zip(scores.values())
                .map(|((_, g), s)| (score_of(s, y), g.contains(y)))
                .collect();
            (y.clone(), roc_auc(&inst))
        })
        .collect()
}

fn macro_auc(per_label: &BTreeMap<LabelId, Option<f64>>) -> Option<f64> {
    let valid: Vec<f64> = per_label.values().flatten().copied().collect();
    if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    }
}

fn micro_auc(gold: &DocSets, scores: &DocScores, labels: &[LabelId]) -> Option<f64> {
    let mut inst = Vec::with_capacity(gold.len() * labels.len());
    for (g, s) in gold.values().zip(scores.values()) {
        for y in labels {
            inst.push((score_of(s, y), g.contains(y)));
        }
    }
    roc_auc(&inst)
}

/// (macro, micro) AUC. Labels missing from a document's score map score
/// [`NON_CANDIDATE_SCORE`].
pub fn auc_scores(gold: &DocSets, scores: &DocScores, labels: &[LabelId]) -> Result<(f64, f64)> {
    check_aligned(gold, scores)?;
    let per_label = per_label_auc(gold, scores, labels);
    let macro_auc = macro_auc(&per_label).ok_or(Error::NoValidLabels)?;
    let micro_auc = micro_auc(gold, scores, labels).ok_or(Error::NoValidLabels)?;
    Ok((macro_auc, micro_auc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    pub value: f64,
    /// Documents whose ranked list was shorter than k.
    pub short_lists: usize,
}

/// Mean over gold documents of |top-k ∩ gold| / min(k, list length). A
/// missing or empty list contributes 0.
pub fn precision_at_k(gold: &DocSets, ranked: &BTreeMap<String, RankedList>, k: usize) -> Result<PrecisionAtK> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut total = 0.0;
    let mut short_lists = 0;
    for (id, g) in gold {
        let entries = ranked.get(id).map(|r| r.entries.as_slice()).unwrap_or(&[]);
        if entries.len() < k {
            short_lists += 1;
        }
        let depth = k.min(entries.len());
        if depth == 0 {
            continue;
        }
        let hits = entries[..depth].iter().filter(|(y, _)| g.contains(y)).count();
        total += hits as f64 / depth as f64;
    }
    if short_lists > 0 {
        log::warn!("P@{k}: {short_lists} document(s) ranked fewer than {k} labels");
    }
    let value = if gold.is_empty() {
        0.0
    } else {
        total / gold.len() as f64
    };
    Ok(PrecisionAtK { k, value, short_lists })
}

/// Training-frequency groups: [0,10), [10,50), [50,500), [500,∞).
pub const FREQUENCY_BOUNDS: [usize; 3] = [10, 50, 500];

pub fn frequency_bucket(freq: usize) -> usize {
    FREQUENCY_BOUNDS.iter().take_while(|&&b| freq >= b).count()
}

pub fn bucket_name(bucket: usize) -> String {
    let lo = if bucket == 0 { 0 } else { FREQUENCY_BOUNDS[bucket - 1] };
    match FREQUENCY_BOUNDS.get(bucket) {
        Some(hi) => format!("[{lo},{hi})"),
        None => format!("[{lo},inf)"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub train_frequency: usize,
    pub bucket: String,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: String,
    pub n_labels: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_docs: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub p_at_k: BTreeMap<usize, f64>,
    pub short_lists: BTreeMap<usize, usize>,
    pub buckets: Vec<BucketReport>,
    pub per_label: BTreeMap<LabelId, LabelReport>,
}

/// Scores from ranked lists, one map per document.
pub fn scores_from_ranked(ranked: &BTreeMap<String, RankedList>) -> DocScores {
    ranked
        .iter()
        .map(|(id, r)| (id.clone(), r.entries.iter().cloned().collect()))
        .collect()
}

/// Full report. `train_frequency` maps each label to its training-split
/// document count; labels absent from it count as frequency 0.
pub fn evaluate(
    gold: &DocSets,
    pred: &DocSets,
    ranked: &BTreeMap<String, RankedList>,
    labels: &[LabelId],
    train_frequency: &BTreeMap<LabelId, usize>,
    ks: &[usize],
) -> Result<EvalReport> {
    let table = confusion_table(gold, pred, labels)?;
    check_aligned(gold, ranked)?;
    let scores = scores_from_ranked(ranked);
    let aucs = per_label_auc(gold, &scores, labels);
    let (macro_f1, micro_f1) = f1_from_table(table.values());

    let mut p_at_k = BTreeMap::new();
    let mut short_lists = BTreeMap::new();
    for &k in ks {
        let p = precision_at_k(gold, ranked, k)?;
        p_at_k.insert(k, p.value);
        short_lists.insert(k, p.short_lists);
    }

    let per_label: BTreeMap<LabelId, LabelReport> = table
        .iter()
        .map(|(y, c)| {
            let freq = train_frequency.get(y).copied().unwrap_or(0);
            let report = LabelReport {
                train_frequency: freq,
                bucket: bucket_name(frequency_bucket(freq)),
                confusion: *c,
                f1: c.f1(),
                auc: aucs[y],
            };
            (y.clone(), report)
        })
        .collect();

    let buckets = (0..=FREQUENCY_BOUNDS.len())
        .map(|b| {
            let name = bucket_name(b);
            let members: Vec<&LabelReport> = per_label.values().filter(|r| r.bucket == name).collect();
            let (macro_f1, micro_f1) = f1_from_table(members.iter().map(|r| &r.confusion));
            let valid: Vec<f64> = members.iter().filter_map(|r| r.auc).collect();
            BucketReport {
                bucket: name,
                n_labels: members.len(),
                macro_f1,
                micro_f1,
                macro_auc: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
            }
        })
        .collect();

    Ok(EvalReport {
        n_docs: gold.len(),
        macro_f1,
        micro_f1,
        macro_auc: macro_auc(&aucs),
        micro_auc: micro_auc(gold, &scores, labels),
        p_at_k,
        short_lists,
        buckets,
        per_label,
    })
}
