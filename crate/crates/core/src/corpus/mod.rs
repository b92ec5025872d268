//! Documents, label descriptors, auxiliary-knowledge records and their
//! JSONL ingestion.

mod preprocess;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use preprocess::{preprocess, MAX_TOKENS};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub String);

impl LabelId {
    pub fn new(id: impl Into<String>) -> Self {
        LabelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Drg,
    Cpt,
    Drug,
}

impl AuxKind {
    pub const ALL: [AuxKind; 3] = [AuxKind::Drg, AuxKind::Cpt, AuxKind::Drug];

    pub fn as_str(self) -> &'static str {
        match self {
            AuxKind::Drg => "drg",
            AuxKind::Cpt => "cpt",
            AuxKind::Drug => "drug",
        }
    }
}

/// An auxiliary code qualified by its kind, so `drg:100` and `cpt:100`
/// never collide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuxCode {
    pub kind: AuxKind,
    pub code: String,
}

impl AuxCode {
    pub fn new(kind: AuxKind, code: impl Into<String>) -> Self {
        Self {
            kind,
            code: code.into(),
        }
    }
}

impl fmt::Display for AuxCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.code)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuxRecord {
    pub drg: BTreeSet<String>,
    pub cpt: BTreeSet<String>,
    pub drug: BTreeSet<String>,
}

impl AuxRecord {
    pub fn codes_of(&self, kind: AuxKind) -> &BTreeSet<String> {
        match kind {
            AuxKind::Drg => &self.drg,
            AuxKind::Cpt => &self.cpt,
            AuxKind::Drug => &self.drug,
        }
    }

    /// All attached codes, each at most once.
    pub fn codes(&self) -> impl Iterator<Item = AuxCode> + '_ {
        AuxKind::ALL
            .into_iter()
            .flat_map(move |kind| self.codes_of(kind).iter().map(move |c| AuxCode::new(kind, c.clone())))
    }

    pub fn is_empty(&self) -> bool {
        self.drg.is_empty() && self.cpt.is_empty() && self.drug.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold_labels: BTreeSet<LabelId>,
    pub aux: AuxRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelDescriptor {
    pub id: LabelId,
    pub descriptor_tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub labels: Vec<LabelDescriptor>,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    labels: Vec<String>,
    #[serde(default)]
    drg: Vec<String>,
    #[serde(default)]
    cpt: Vec<String>,
    #[serde(default)]
    drugs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    descriptor: String,
}

impl Corpus {
    /// Builds a corpus and checks every cross-reference invariant.
    pub fn new(documents: Vec<Document>, labels: Vec<LabelDescriptor>, split: Split) -> Result<Self> {
        let corpus = Corpus {
            documents,
            labels,
            split,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut label_ids = BTreeSet::new();
        for label in &self.labels {
            if label.descriptor_tokens.is_empty() {
                return Err(Error::EmptyDescriptor(label.id.0.clone()));
            }
            if !label_ids.insert(&label.id) {
                return Err(Error::DuplicateId {
                    id: label.id.0.clone(),
                    path: None,
                    line: None,
                });
            }
        }
        let mut doc_ids = BTreeSet::new();
        for doc in &self.documents {
            if !doc_ids.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    path: None,
                    line: None,
                });
            }
            if doc.tokens.len() > MAX_TOKENS {
                return Err(Error::InvalidParameter(format!(
                    "document `{}` has {} tokens (max {MAX_TOKENS})",
                    doc.id,
                    doc.tokens.len()
                )));
            }
            if let Some(y) = doc.gold_labels.iter().find(|y| !label_ids.contains(y)) {
                return Err(Error::UnknownLabel {
                    label: y.0.clone(),
                    path: None,
                    line: None,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for name in [SplitName::Train, SplitName::Valid, SplitName::Test] {
            for id in self.split.ids(name) {
                if !doc_ids.contains(id.as_str()) {
                    return Err(Error::MismatchedIds(format!(
                        "split references unknown document `{id}`"
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateId {
                        id: id.clone(),
                        path: None,
                        line: None,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn label_ids(&self) -> Vec<LabelId> {
        self.labels.iter().map(|l| l.id.clone()).collect()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Documents of a split, in split-file order.
    pub fn split_docs(&self, name: SplitName) -> Vec<&Document> {
        let by_id: BTreeMap<&str, &Document> = self.documents.iter().map(|d| (d.id.as_str(), d)).collect();
        self.split
            .ids(name)
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).copied())
            .collect()
    }

    pub fn train_docs(&self) -> Vec<&Document> {
        self.split_docs(SplitName::Train)
    }

    /// Number of training documents carrying each label.
    pub fn train_label_frequency(&self) -> BTreeMap<LabelId, usize> {
        let mut freq: BTreeMap<LabelId, usize> = self.labels.iter().map(|l| (l.id.clone(), 0)).collect();
        for doc in self.train_docs() {
            for y in &doc.gold_labels {
                *freq.entry(y.clone()).or_default() += 1;
            }
        }
        freq
    }

    /// Loads documents and labels; every document is placed in the train split.
    pub fn load(doc_path: &Path, label_path: &Path) -> Result<Self> {
        load_corpus(doc_path, label_path)
    }

    pub fn load_with_splits(doc_path: &Path, label_path: &Path, splits_path: &Path) -> Result<Self> {
        let mut corpus = load_corpus(doc_path, label_path)?;
        let text = fs::read_to_string(splits_path).map_err(|e| Error::io(splits_path, e))?;
        corpus.split = serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: splits_path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        corpus.validate()?;
        Ok(corpus)
    }

    /// Writes `documents.jsonl`, `labels.jsonl` and `splits.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut docs = String::new();
        for doc in &self.documents {
            let rec = DocumentRecord {
                id: doc.id.clone(),
                text: doc.tokens.join(" "),
                labels: doc.gold_labels.iter().map(|y| y.0.clone()).collect(),
                drg: doc.aux.drg.iter().cloned().collect(),
                cpt: doc.aux.cpt.iter().cloned().collect(),
                drugs: doc.aux.drug.iter().cloned().collect(),
            };
            docs.push_str(&serde_json::to_string(&rec).expect("document record serializes"));
            docs.push('\n');
        }
        let mut labels = String::new();
        for label in &self.labels {
            let rec = LabelRecord {
                id: label.id.0.clone(),
                descriptor: label.descriptor_tokens.join(" "),
            };
            labels.push_str(&serde_json::to_string(&rec).expect("label record serializes"));
            labels.push('\n');
        }
        let splits = serde_json::to_string_pretty(&self.split).expect("split serializes");
        write_file(&dir.join("documents.jsonl"), docs.as_bytes())?;
        write_file(&dir.join("labels.jsonl"), labels.as_bytes())?;
        write_file(&dir.join("splits.json"), splits.as_bytes())?;
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Parses and validates the JSONL document and label files. All documents
/// land in the train split; use [`Corpus::load_with_splits`] for a real
/// partition.
pub fn load_corpus(doc_path: &Path, label_path: &Path) -> Result<Corpus> {
    let mut labels = Vec::new();
    let mut label_ids = BTreeSet::new();
    for (line, rec) in read_jsonl::<LabelRecord>(label_path)? {
        let id = LabelId(rec.id);
        if !label_ids.insert(id.clone()) {
            return Err(Error::DuplicateId {
                id: id.0,
                path: Some(label_path.to_path_buf()),
                line: Some(line),
            });
        }
        let descriptor_tokens = preprocess(&rec.descriptor, MAX_TOKENS);
        if descriptor_tokens.is_empty() {
            return Err(Error::MalformedRecord {
                path: label_path.to_path_buf(),
                line,
                reason: format!("label `{id}` has an empty descriptor"),
            });
        }
        labels.push(LabelDescriptor { id, descriptor_tokens });
    }

    let mut documents = Vec::new();
    let mut doc_ids = BTreeSet::new();
    for (line, rec) in read_jsonl::<DocumentRecord>(doc_path)? {
        if !doc_ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                id: rec.id,
                path: Some(doc_path.to_path_buf()),
                line: Some(line),
            });
        }
        let mut gold_labels = BTreeSet::new();
        for label in rec.labels {
            let id = LabelId(label);
            if !label_ids.contains(&id) {
                return Err(Error::UnknownLabel {
                    label: id.0,
                    path: Some(doc_path.to_path_buf()),
                    line: Some(line),
                });
            }
            gold_labels.insert(id);
        }
        documents.push(Document {
            tokens: preprocess(&rec.text, MAX_TOKENS),
            id: rec.id,
            gold_labels,
            aux: AuxRecord {
                drg: rec.drg.into_iter().collect(),
                cpt: rec.cpt.into_iter().collect(),
                drug: rec.drugs.into_iter().collect(),
            },
        });
    }

    let split = Split {
        train: documents.iter().map(|d| d.id.clone()).collect(),
        ..Split::default()
    };
    Corpus::new(documents, labels, split)
}
