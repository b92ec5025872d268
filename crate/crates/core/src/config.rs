//! Pipeline configuration (TOML) and per-stage seed derivation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auxiliary::DEFAULT_ETA;
use crate::bm25::Bm25Params;
use crate::encoder::{encoders, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_LAMBDA;
use crate::graphormer::{label_encoders, DEFAULT_HEADS, DEFAULT_LAYERS};
use crate::reranker::{DecisionPolicy, TrainConfig};

/// Environment variable that overrides the artifact directory.
pub const ARTIFACTS_ENV: &str = "CODERANK_ARTIFACTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding `documents.jsonl`, `labels.jsonl` and `splits.json`.
    pub corpus: PathBuf,
    pub documents: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub artifacts: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data"),
            documents: None,
            labels: None,
            splits: None,
            artifacts: PathBuf::from("artifacts"),
        }
    }
}

impl PathsConfig {
    pub fn documents(&self) -> PathBuf {
        self.documents
            .clone()
            .unwrap_or_else(|| self.corpus.join("documents.jsonl"))
    }

    pub fn labels(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.corpus.join("labels.jsonl"))
    }

    /// `None` when no split file is configured and none exists beside the
    /// documents, in which case every document is a training document.
    pub fn splits(&self) -> Option<PathBuf> {
        match &self.splits {
            Some(p) => Some(p.clone()),
            None => Some(self.corpus.join("splits.json")).filter(|p| p.exists()),
        }
    }
}

/// Chooses theta as the largest grid value keeping `target_recall` of the
/// validation gold labels after both retrieval stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaCalibration {
    pub target_recall: f64,
    pub grid: Vec<f64>,
}

impl Default for ThetaCalibration {
    fn default() -> Self {
        Self {
            target_recall: 0.99,
            grid: (0..=100).map(|i| i as f64 * 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub eta: f64,
    /// When false the auxiliary stage passes the full vocabulary through.
    pub use_aux: bool,
    /// Documents with no auxiliary candidates get the full vocabulary.
    pub fallback_to_full: bool,
    pub bm25: Bm25Params,
    pub calibrate_theta: Option<ThetaCalibration>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            use_aux: true,
            fallback_to_full: true,
            bm25: Bm25Params::default(),
            calibrate_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub lambda: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: String,
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: "mean-pool".into(),
            dim: DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelEncoderConfig {
    /// `graphormer`, or `descriptor` to use the descriptor encodings directly.
    pub kind: String,
    pub layers: usize,
    pub heads: usize,
}

impl Default for LabelEncoderConfig {
    fn default() -> Self {
        Self {
            kind: "graphormer".into(),
            layers: DEFAULT_LAYERS,
            heads: DEFAULT_HEADS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![5, 8, 15] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub retrieval: RetrievalConfig,
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub label_encoder: LabelEncoderConfig,
    pub train: TrainConfig,
    pub policy: DecisionPolicy,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the artifact-directory environment override, if set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(ARTIFACTS_ENV).filter(|v| !v.is_empty()) {
            self.paths.artifacts = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::auxiliary::check_eta(self.retrieval.eta)?;
        self.retrieval.bm25.validate()?;
        crate::bm25::weightings().get(&self.retrieval.bm25.weighting)?;
        if let Some(cal) = &self.retrieval.calibrate_theta {
            if !(0.0..=1.0).contains(&cal.target_recall) || cal.grid.is_empty() {
                return Err(Error::InvalidParameter(
                    "theta calibration needs a grid and a recall in [0, 1]".into(),
                ));
            }
        }
        if !(self.graph.lambda > 0.0 && self.graph.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda={} is outside (0, 1]",
                self.graph.lambda
            )));
        }
        encoders().get(&self.encoder.kind)?;
        label_encoders().get(&self.label_encoder.kind)?;
        if self.encoder.dim == 0 {
            return Err(Error::InvalidParameter("encoder dim must be >= 1".into()));
        }
        if self.label_encoder.kind == "graphormer"
            && (self.label_encoder.heads == 0 || !self.encoder.dim.is_multiple_of(self.label_encoder.heads))
        {
            return Err(Error::InvalidParameter(format!(
                "encoder dim {} is not divisible by {} heads",
                self.encoder.dim, self.label_encoder.heads
            )));
        }
        self.train.validate()?;
        self.policy.validate()?;
        if self.eval.ks.contains(&0) {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed for one pipeline stage, derived from the root seed and stage name.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}
