//! Versioned on-disk artifacts: indexes, label graph and model checkpoint.
//!
//! Every file is a JSON envelope `{format, version, fingerprint, body}`.
//! The fingerprint ties an artifact to the corpus and parameters it was
//! built from; loading under a different fingerprint fails.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::auxiliary::CooccurrenceIndex;
use crate::bm25::{Bm25Index, Bm25Params};
use crate::corpus::{AuxCode, AuxKind, Corpus, LabelId};
use crate::encoder::encoders;
use crate::error::{Error, Result};
use crate::graph::{LabelGraph, LabelGraphFile};
use crate::graphormer::label_encoders;
use crate::reranker::{DecisionPolicy, EpochLog, Model};

pub const FORMAT_VERSION: u32 = 1;

pub const AUX_INDEX_FILE: &str = "aux_index.json";
pub const BM25_INDEX_FILE: &str = "bm25_index.json";
pub const LABEL_GRAPH_FILE: &str = "label_graph.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    fingerprint: String,
    body: T,
}

/// Hex SHA-256 over the corpus contents (documents, labels and split).
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    let mut field = |s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    for d in &corpus.documents {
        field("doc");
        field(&d.id);
        field(&d.tokens.join(" "));
        for y in &d.gold_labels {
            field(y.as_str());
        }
        for code in d.aux.codes() {
            field(&code.to_string());
        }
    }
    for l in &corpus.labels {
        field("label");
        field(l.id.as_str());
        field(&l.descriptor_tokens.join(" "));
    }
    for ids in [&corpus.split.train, &corpus.split.valid, &corpus.split.test] {
        field("split");
        for id in ids {
            field(id);
        }
    }
    hex::encode(h.finalize())
}

/// Fingerprint of an artifact derived from `base` and its build parameters.
pub fn derive_fingerprint(base: &str, params: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(base.as_bytes());
    h.update(serde_json::to_vec(params).expect("parameters serialize"));
    hex::encode(h.finalize())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_artifact<T: Serialize>(path: &Path, format: &str, fingerprint: &str, body: &T) -> Result<()> {
    let env = Envelope {
        format: format.to_string(),
        version: FORMAT_VERSION,
        fingerprint: fingerprint.to_string(),
        body,
    };
    let mut bytes = serde_json::to_vec(&env).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads an artifact, checking its format tag, version and (when given) its
/// fingerprint. Returns the body and the stored fingerprint.
pub fn read_artifact<T: DeserializeOwned>(path: &Path, format: &str, expected: Option<&str>) -> Result<(T, String)> {
    if !path.exists() {
        return Err(Error::MissingIndex(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let env: Envelope<Value> = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if env.format != format {
        return Err(bad(format!("expected `{format}`, found `{}`", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(bad(format!("version {} (supported: {FORMAT_VERSION})", env.version)));
    }
    if let Some(expected) = expected {
        if env.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found: env.fingerprint,
            });
        }
    }
    let body = serde_json::from_value(env.body).map_err(|e| bad(e.to_string()))?;
    Ok((body, env.fingerprint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxIndexFile {
    /// (code, documents carrying it)
    pub marginal_counts: Vec<(String, u64)>,
    /// (code, label, documents carrying both)
    pub pair_counts: Vec<(String, LabelId, u64)>,
}

fn parse_code(s: &str) -> Result<AuxCode> {
    let (kind, code) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad auxiliary code `{s}`")))?;
    let kind = AuxKind::ALL
        .into_iter()
        .find(|k| k.as_str() == kind)
        .ok_or_else(|| Error::Config(format!("bad auxiliary code kind `{kind}`")))?;
    Ok(AuxCode::new(kind, code))
}

impl From<&CooccurrenceIndex> for AuxIndexFile {
    fn from(index: &CooccurrenceIndex) -> Self {
        Self {
            marginal_counts: index.marginal_counts.iter().map(|(k, &c)| (k.to_string(), c)).collect(),
            pair_counts: index
                .pair_counts
                .iter()
                .flat_map(|(k, row)| row.iter().map(move |(y, &c)| (k.to_string(), y.clone(), c)))
                .collect(),
        }
    }
}

impl AuxIndexFile {
    pub fn into_index(self) -> Result<CooccurrenceIndex> {
        let mut index = CooccurrenceIndex::default();
        for (k, c) in self.marginal_counts {
            index.marginal_counts.insert(parse_code(&k)?, c);
        }
        for (k, y, c) in self.pair_counts {
            index.pair_counts.entry(parse_code(&k)?).or_default().insert(y, c);
        }
        Ok(index)
    }
}

/// BM25 index together with the parameters (including the resolved theta)
/// used for filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25File {
    pub params: Bm25Params,
    pub index: Bm25Index,
}

pub fn save_aux_index(dir: &Path, fingerprint: &str, index: &CooccurrenceIndex) -> Result<()> {
    write_artifact(
        &dir.join(AUX_INDEX_FILE),
        "coderank/aux-index",
        fingerprint,
        &AuxIndexFile::from(index),
    )
}

pub fn load_aux_index(dir: &Path, fingerprint: &str) -> Result<CooccurrenceIndex> {
    let (file, _): (AuxIndexFile, _) =
        read_artifact(&dir.join(AUX_INDEX_FILE), "coderank/aux-index", Some(fingerprint))?;
    file.into_index()
}

pub fn save_bm25(dir: &Path, fingerprint: &str, file: &Bm25File) -> Result<()> {
    write_artifact(&dir.join(BM25_INDEX_FILE), "coderank/bm25-index", fingerprint, file)
}

pub fn load_bm25(dir: &Path, fingerprint: &str) -> Result<Bm25File> {
    Ok(read_artifact(&dir.join(BM25_INDEX_FILE), "coderank/bm25-index", Some(fingerprint))?.0)
}

pub fn save_graph(dir: &Path, fingerprint: &str, graph: &LabelGraph) -> Result<()> {
    write_artifact(
        &dir.join(LABEL_GRAPH_FILE),
        "coderank/label-graph",
        fingerprint,
        &graph.to_file(),
    )
}

pub fn load_graph(dir: &Path, fingerprint: &str) -> Result<LabelGraph> {
    let (file, _): (LabelGraphFile, _) =
        read_artifact(&dir.join(LABEL_GRAPH_FILE), "coderank/label-graph", Some(fingerprint))?;
    LabelGraph::from_file(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub seed: u64,
    pub text_encoder: String,
    pub label_encoder: String,
    pub dim: usize,
    pub n_labels: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub text_encoder: Value,
    pub label_encoder: Value,
    pub policy: DecisionPolicy,
    pub best_epoch: Option<usize>,
    pub training_log: Vec<EpochLog>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, best_epoch: Option<usize>, training_log: Vec<EpochLog>) -> Self {
        Self {
            header: CheckpointHeader {
                seed,
                text_encoder: model.text.kind().to_string(),
                label_encoder: model.label_encoder.kind().to_string(),
                dim: model.text.dim(),
                n_labels: model.labels().len(),
                lambda: model.graph().lambda(),
            },
            text_encoder: model.text.to_json(),
            label_encoder: model.label_encoder.to_json(),
            policy: model.policy,
            best_epoch,
            training_log,
            metadata: BTreeMap::new(),
        }
    }

    /// Rebuilds the model over `graph`, whose nodes follow `corpus.labels`.
    pub fn into_model(&self, corpus: &Corpus, graph: LabelGraph) -> Result<Model> {
        if self.header.n_labels != corpus.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} labels, corpus has {}",
                self.header.n_labels,
                corpus.labels.len()
            )));
        }
        let text = (encoders().get(&self.header.text_encoder)?.load)(&self.text_encoder)?;
        let labels = (label_encoders().get(&self.header.label_encoder)?.load)(&self.label_encoder)?;
        Model::new(text, labels, graph, &corpus.labels, self.policy)
    }
}

pub fn save_checkpoint(path: &Path, fingerprint: &str, checkpoint: &Checkpoint) -> Result<()> {
    write_artifact(path, "coderank/checkpoint", fingerprint, checkpoint)
}

pub fn load_checkpoint(path: &Path, fingerprint: &str) -> Result<Checkpoint> {
    Ok(read_artifact(path, "coderank/checkpoint", Some(fingerprint))?.0)
}
