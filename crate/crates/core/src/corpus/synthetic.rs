//! Seeded generator for labelled corpora with planted structure.
//!
//! Labels are partitioned into groups, and groups into subgroups. Each
//! document draws its gold labels from one group. Its text carries a cue
//! token per gold label plus the subgroup word of that label, and its
//! auxiliary record carries the group's DRG code and per-label CPT/drug
//! codes. Cue tokens never occur in label descriptors, so an untrained
//! encoder has no lexical shortcut from document to label.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AuxRecord, Corpus, Document, LabelDescriptor, LabelId, Split};
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstv";
const VOWELS: &[u8] = b"aeiou";
const GENERIC_WORDS: [&str; 8] = [
    "acute",
    "chronic",
    "unspecified",
    "primary",
    "secondary",
    "benign",
    "severe",
    "other",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_groups: usize,
    pub subgroups_per_group: usize,
    /// Inclusive range of gold labels drawn per document (before pair planting).
    pub labels_per_doc: (usize, usize),
    /// Probability that a gold label's cue token appears in the text.
    pub cue_prob: f64,
    pub max_cue_copies: usize,
    /// Probability that a gold label's subgroup word appears in the text.
    pub subgroup_mention_prob: f64,
    /// Probability of mentioning each non-gold subgroup of the document's group.
    pub distractor_prob: f64,
    /// Probability that a gold label's own descriptor word appears in the text.
    pub descriptor_mention_prob: f64,
    pub filler_vocab: usize,
    pub filler_tokens: (usize, usize),
    pub drg_prob: f64,
    pub cpt_prob: f64,
    pub drug_prob: f64,
    /// Plant an always-co-occurring pair on the first two labels.
    pub plant_pair: bool,
    /// Exponent of the within-group popularity skew (0 = uniform).
    pub label_skew: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_groups: 4,
            subgroups_per_group: 5,
            labels_per_doc: (5, 8),
            cue_prob: 1.0,
            max_cue_copies: 2,
            subgroup_mention_prob: 1.0,
            distractor_prob: 0.2,
            descriptor_mention_prob: 0.0,
            filler_vocab: 300,
            filler_tokens: (15, 30),
            drg_prob: 1.0,
            cpt_prob: 0.5,
            drug_prob: 0.5,
            plant_pair: true,
            label_skew: 0.5,
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("cue_prob", self.cue_prob),
            ("subgroup_mention_prob", self.subgroup_mention_prob),
            ("distractor_prob", self.distractor_prob),
            ("descriptor_mention_prob", self.descriptor_mention_prob),
            ("drg_prob", self.drg_prob),
            ("cpt_prob", self.cpt_prob),
            ("drug_prob", self.drug_prob),
            ("valid_fraction", self.valid_fraction),
            ("test_fraction", self.test_fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("{name}={p} is outside [0, 1]")));
            }
        }
        if self.valid_fraction + self.test_fraction >= 1.0 {
            return Err(Error::InvalidSpec("valid + test fractions must be < 1".into()));
        }
        if self.n_groups == 0 || self.subgroups_per_group == 0 {
            return Err(Error::InvalidSpec("need at least one group and subgroup".into()));
        }
        let (lo, hi) = self.labels_per_doc;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidSpec(format!("bad labels_per_doc range ({lo}, {hi})")));
        }
        if self.filler_tokens.0 > self.filler_tokens.1 {
            return Err(Error::InvalidSpec("bad filler_tokens range".into()));
        }
        if self.filler_vocab == 0 && self.filler_tokens.1 > 0 {
            return Err(Error::InvalidSpec(
                "filler tokens requested with empty filler vocab".into(),
            ));
        }
        if self.max_cue_copies == 0 {
            return Err(Error::InvalidSpec("max_cue_copies must be >= 1".into()));
        }
        if !(self.label_skew.is_finite() && self.label_skew >= 0.0) {
            return Err(Error::InvalidSpec("label_skew must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Pseudo-word built from consonant-vowel syllables; `prefix` namespaces it.
fn word(prefix: &str, mut n: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::from(prefix);
    for _ in 0..2 {
        let s = n % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        n /= base;
    }
    while n > 0 {
        let s = n % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        n /= base;
    }
    out
}

pub fn cue_token(label_index: usize) -> String {
    word("hyc", label_index)
}

fn descriptor_word(label_index: usize) -> String {
    word("wyd", label_index)
}

fn subgroup_word(subgroup: usize) -> String {
    word("jys", subgroup)
}

fn filler_word(i: usize) -> String {
    word("yvf", i)
}

struct Layout {
    /// Label indices per group.
    groups: Vec<Vec<usize>>,
    /// Global subgroup index per label.
    subgroup_of: Vec<usize>,
    /// Global subgroup indices per group.
    subgroups: Vec<Vec<usize>>,
}

fn layout(n_labels: usize, spec: &SyntheticSpec) -> Layout {
    let n_groups = spec.n_groups.min(n_labels);
    let mut groups = vec![Vec::new(); n_groups];
    let mut subgroup_of = vec![0; n_labels];
    let mut subgroups = vec![BTreeSet::new(); n_groups];
    for y in 0..n_labels {
        let g = y * n_groups / n_labels;
        groups[g].push(y);
    }
    for (g, members) in groups.iter().enumerate() {
        let n_sub = spec.subgroups_per_group.min(members.len());
        for (j, &y) in members.iter().enumerate() {
            let s = g * spec.subgroups_per_group + j * n_sub / members.len();
            subgroup_of[y] = s;
            subgroups[g].insert(s);
        }
    }
    Layout {
        groups,
        subgroup_of,
        subgroups: subgroups.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

fn label_id(group: usize, within: usize) -> LabelId {
    LabelId(format!("{:03}.{:03}", group + 1, within))
}

/// Generates a corpus that is a pure function of its arguments.
pub fn generate_synthetic_corpus(seed: u64, n_docs: usize, n_labels: usize, spec: &SyntheticSpec) -> Result<Corpus> {
    if n_docs == 0 || n_labels == 0 {
        return Err(Error::InvalidSpec("n_docs and n_labels must be >= 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = layout(n_labels, spec);

    let mut ids = vec![LabelId(String::new()); n_labels];
    for (g, members) in lay.groups.iter().enumerate() {
        for (j, &y) in members.iter().enumerate() {
            ids[y] = label_id(g, j);
        }
    }
    let labels: Vec<LabelDescriptor> = (0..n_labels)
        .map(|y| {
            let mut tokens = Vec::with_capacity(3);
            if y % 3 != 0 {
                tokens.push(GENERIC_WORDS[y % GENERIC_WORDS.len()].to_string());
            }
            tokens.push(descriptor_word(y));
            tokens.push(subgroup_word(lay.subgroup_of[y]));
            LabelDescriptor {
                id: ids[y].clone(),
                descriptor_tokens: tokens,
            }
        })
        .collect();

    let filler: Vec<String> = (0..spec.filler_vocab)
        .map(filler_word)
        .chain(GENERIC_WORDS.iter().map(|w| w.to_string()))
        .collect();
    let pair = if spec.plant_pair && lay.groups[0].len() >= 2 {
        Some((lay.groups[0][0], lay.groups[0][1]))
    } else {
        None
    };

    let mut documents = Vec::with_capacity(n_docs);
    for n in 0..n_docs {
        let g = rng.random_range(0..lay.groups.len());
        let members = &lay.groups[g];
        let (lo, hi) = spec.labels_per_doc;
        let k = rng.random_range(lo..=hi).min(members.len());
        let weighted: Vec<(usize, f64)> = members
            .iter()
            .enumerate()
            .map(|(rank, &y)| (y, 1.0 / ((rank + 1) as f64).powf(spec.label_skew)))
            .collect();
        let mut gold: BTreeSet<usize> = weighted
            .choose_multiple_weighted(&mut rng, k, |item| item.1)
            .expect("positive weights")
            .map(|item| item.0)
            .collect();
        if let Some((a, b)) = pair {
            if gold.contains(&a) || gold.contains(&b) {
                gold.insert(a);
                gold.insert(b);
            }
        }

        let mut tokens = Vec::new();
        let mut aux = AuxRecord::default();
        if rng.random_bool(spec.drg_prob) {
            aux.drg.insert(format!("{}", 100 + g));
        }
        let mut mentioned = BTreeSet::new();
        for &y in &gold {
            if rng.random_bool(spec.cue_prob) {
                let copies = rng.random_range(1..=spec.max_cue_copies);
                tokens.extend(std::iter::repeat_n(cue_token(y), copies));
            }
            if rng.random_bool(spec.subgroup_mention_prob) && mentioned.insert(lay.subgroup_of[y]) {
                tokens.push(subgroup_word(lay.subgroup_of[y]));
            }
            if rng.random_bool(spec.descriptor_mention_prob) {
                tokens.push(descriptor_word(y));
            }
            if rng.random_bool(spec.cpt_prob) {
                aux.cpt.insert(format!("{}", 10000 + y));
            }
            if rng.random_bool(spec.drug_prob) {
                aux.drug.insert(format!("rx{:04}", y / 2));
            }
        }
        for &s in &lay.subgroups[g] {
            if !mentioned.contains(&s) && rng.random_bool(spec.distractor_prob) {
                tokens.push(subgroup_word(s));
            }
        }
        let n_filler = rng.random_range(spec.filler_tokens.0..=spec.filler_tokens.1);
        for _ in 0..n_filler {
            tokens.push(filler.choose(&mut rng).expect("nonempty filler").clone());
        }
        tokens.shuffle(&mut rng);
        tokens.truncate(super::MAX_TOKENS);
        documents.push(Document {
            id: format!("d{n:05}"),
            tokens,
            gold_labels: gold.into_iter().map(|y| ids[y].clone()).collect(),
            aux,
        });
    }

    let mut order: Vec<usize> = (0..n_docs).collect();
    order.shuffle(&mut rng);
    let n_test = (n_docs as f64 * spec.test_fraction).round() as usize;
    let n_valid = (n_docs as f64 * spec.valid_fraction).round() as usize;
    let pick = |range: &[usize]| -> Vec<String> {
        let mut v = range.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| documents[i].id.clone()).collect()
    };
    let split = Split {
        test: pick(&order[..n_test.min(n_docs)]),
        valid: pick(&order[n_test.min(n_docs)..(n_test + n_valid).min(n_docs)]),
        train: pick(&order[(n_test + n_valid).min(n_docs)..]),
    };
    Corpus::new(documents, labels, split)
}
