//! End-to-end composition of retrieval, training, re-ranking and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Bm25File, Checkpoint};
use crate::auxiliary::{CandidateSet, CooccurrenceIndex, Stage};
use crate::bm25::{calibrate_theta, Bm25Index, Bm25Scorer};
use crate::config::{stage_seed, PipelineConfig, RetrievalConfig};
use crate::corpus::{Corpus, Document, LabelId, SplitName};
use crate::encoder::{encoders, EncoderInit};
use crate::error::{Error, Result};
use crate::graph::LabelGraph;
use crate::graphormer::{label_encoders, LabelEncoderInit};
use crate::metrics::{self, DocSets, EvalReport};
use crate::reranker::{self, predict_set, Model, RankedList, TrainOutcome};

pub fn load_corpus(config: &PipelineConfig) -> Result<Corpus> {
    let paths = &config.paths;
    match paths.splits() {
        Some(splits) => Corpus::load_with_splits(&paths.documents(), &paths.labels(), &splits),
        None => Corpus::load(&paths.documents(), &paths.labels()),
    }
}

/// Artifact fingerprints for one corpus under one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprints {
    pub corpus: String,
    pub aux: String,
    pub bm25: String,
    pub graph: String,
    pub checkpoint: String,
}

impl Fingerprints {
    pub fn new(corpus: &Corpus, config: &PipelineConfig) -> Self {
        let base = artifacts::corpus_fingerprint(corpus);
        let graph = artifacts::derive_fingerprint(&base, &("label-graph", config.graph.lambda));
        Self {
            aux: artifacts::derive_fingerprint(&base, &"aux-index"),
            bm25: artifacts::derive_fingerprint(&base, &"bm25-index"),
            checkpoint: artifacts::derive_fingerprint(&graph, &"checkpoint"),
            graph,
            corpus: base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Indexes {
    pub aux: CooccurrenceIndex,
    pub bm25: Bm25File,
    pub graph: LabelGraph,
}

/// Output of both retrieval stages for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub id: String,
    pub aux: BTreeSet<LabelId>,
    pub bm25: BTreeSet<LabelId>,
    /// The auxiliary stage found nothing and the full vocabulary was used.
    pub fallback: bool,
}

pub struct Retriever<'a> {
    aux: &'a CooccurrenceIndex,
    scorer: Bm25Scorer<'a>,
    vocabulary: BTreeSet<LabelId>,
    config: RetrievalConfig,
}

impl<'a> Retriever<'a> {
    /// Filters with the parameters stored alongside the BM25 index; only the
    /// auxiliary-stage settings come from `config`.
    pub fn new(indexes: &'a Indexes, config: &RetrievalConfig) -> Result<Self> {
        crate::auxiliary::check_eta(config.eta)?;
        Ok(Self {
            aux: &indexes.aux,
            scorer: Bm25Scorer::new(&indexes.bm25.index, &indexes.bm25.params)?,
            vocabulary: indexes.graph.labels().iter().cloned().collect(),
            config: config.clone(),
        })
    }

    pub fn aux_stage(&self, doc: &Document) -> (CandidateSet, bool) {
        let mut set = if self.config.use_aux {
            self.aux.retrieve(doc, self.config.eta)
        } else {
            CandidateSet {
                doc_id: doc.id.clone(),
                labels: self.vocabulary.clone(),
                stage: Stage::Auxiliary,
            }
        };
        let fallback = set.labels.is_empty() && self.config.fallback_to_full;
        if fallback {
            log::debug!(
                "document {}: no auxiliary candidates, using the full vocabulary",
                doc.id
            );
            set.labels = self.vocabulary.clone();
        }
        (set, fallback)
    }

    pub fn retrieve(&self, doc: &Document) -> Result<Retrieval> {
        let (aux, fallback) = self.aux_stage(doc);
        let bm25 = self.scorer.filter(doc, &aux.labels)?;
        Ok(Retrieval {
            id: doc.id.clone(),
            aux: aux.labels,
            bm25: bm25.labels,
            fallback,
        })
    }

    pub fn retrieve_all(&self, docs: &[&Document]) -> Result<Vec<Retrieval>> {
        docs.iter().map(|d| self.retrieve(d)).collect()
    }
}

/// Builds the auxiliary index, BM25 index (calibrating theta when
/// configured) and label graph from the training split.
pub fn build_indexes(corpus: &Corpus, config: &PipelineConfig) -> Result<Indexes> {
    config.validate()?;
    let train = corpus.train_docs();
    let aux = CooccurrenceIndex::build(train.iter().copied())?;
    let index = Bm25Index::build(&corpus.labels)?;
    let graph = LabelGraph::build(&corpus.label_ids(), &train, config.graph.lambda)?;
    let mut params = config.retrieval.bm25.clone();
    if let Some(cal) = &config.retrieval.calibrate_theta {
        let mut docs = corpus.split_docs(SplitName::Valid);
        if docs.is_empty() {
            docs = train.clone();
        }
        let provisional = Indexes {
            aux: aux.clone(),
            bm25: Bm25File {
                params: params.clone(),
                index: index.clone(),
            },
            graph: graph.clone(),
        };
        let retriever = Retriever::new(&provisional, &config.retrieval)?;
        let aux_sets: Vec<CandidateSet> = docs.iter().map(|d| retriever.aux_stage(d).0).collect();
        match calibrate_theta(&docs, &aux_sets, &index, &params, &cal.grid, cal.target_recall)? {
            Some(theta) => params.theta = theta,
            None => {
                let lowest = cal.grid.iter().copied().fold(f64::INFINITY, f64::min);
                log::warn!("no theta reaches recall {}; using {lowest}", cal.target_recall);
                params.theta = lowest;
            }
        }
        log::info!("calibrated theta = {}", params.theta);
    }
    Ok(Indexes {
        aux,
        bm25: Bm25File { params, index },
        graph,
    })
}

/// Writes all three index artifacts, or none if any input is invalid.
pub fn write_indexes(dir: &Path, fps: &Fingerprints, indexes: &Indexes) -> Result<()> {
    artifacts::save_aux_index(dir, &fps.aux, &indexes.aux)?;
    artifacts::save_bm25(dir, &fps.bm25, &indexes.bm25)?;
    artifacts::save_graph(dir, &fps.graph, &indexes.graph)
}

pub fn load_indexes(dir: &Path, fps: &Fingerprints) -> Result<Indexes> {
    Ok(Indexes {
        aux: artifacts::load_aux_index(dir, &fps.aux)?,
        bm25: artifacts::load_bm25(dir, &fps.bm25)?,
        graph: artifacts::load_graph(dir, &fps.graph)?,
    })
}

/// Untrained model with stage seeds derived from the root seed.
pub fn init_model(corpus: &Corpus, graph: &LabelGraph, config: &PipelineConfig) -> Result<Model> {
    let mut vocab: BTreeSet<String> = corpus
        .train_docs()
        .iter()
        .flat_map(|d| d.tokens.iter().cloned())
        .collect();
    vocab.extend(corpus.labels.iter().flat_map(|l| l.descriptor_tokens.iter().cloned()));
    let text = (encoders().get(&config.encoder.kind)?.init)(&EncoderInit {
        seed: stage_seed(config.seed, "text-encoder"),
        dim: config.encoder.dim,
        vocab,
    })?;
    let labels = (label_encoders().get(&config.label_encoder.kind)?.init)(&LabelEncoderInit {
        seed: stage_seed(config.seed, "label-encoder"),
        dim: config.encoder.dim,
        layers: config.label_encoder.layers,
        heads: config.label_encoder.heads,
    })?;
    Model::new(text, labels, graph.clone(), &corpus.labels, config.policy)
}

/// BM25-stage candidates per document id.
pub fn candidate_map(retriever: &Retriever<'_>, docs: &[&Document]) -> Result<BTreeMap<String, BTreeSet<LabelId>>> {
    Ok(retriever
        .retrieve_all(docs)?
        .into_iter()
        .map(|r| (r.id, r.bm25))
        .collect())
}

/// Trains from `model` with the training seed derived from the root seed
/// (`config.train.seed` is ignored here).
pub fn train_model(model: Model, corpus: &Corpus, indexes: &Indexes, config: &PipelineConfig) -> Result<TrainOutcome> {
    let retriever = Retriever::new(indexes, &config.retrieval)?;
    let valid = candidate_map(&retriever, &corpus.split_docs(SplitName::Valid))?;
    let mut train_config = config.train.clone();
    train_config.seed = stage_seed(config.seed, "train");
    reranker::train(model, corpus, &valid, &train_config)
}

pub fn save_model(path: &Path, fps: &Fingerprints, outcome: &TrainOutcome, config: &PipelineConfig) -> Result<()> {
    let ckpt = Checkpoint::from_model(&outcome.model, config.seed, outcome.best_epoch, outcome.log.clone());
    artifacts::save_checkpoint(path, &fps.checkpoint, &ckpt)
}

pub fn load_model(path: &Path, fps: &Fingerprints, corpus: &Corpus, graph: &LabelGraph) -> Result<Model> {
    artifacts::load_checkpoint(path, &fps.checkpoint)?.into_model(corpus, graph.clone())
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub ranked: Vec<(LabelId, f64)>,
    pub predicted: Vec<LabelId>,
}

/// Ranks each document of `docs` over its retrieved candidates and applies
/// the model's decision policy.
pub fn rerank(
    model: &Model,
    docs: &[&Document],
    indexes: &Indexes,
    config: &PipelineConfig,
) -> Result<(BTreeMap<String, RankedList>, DocSets)> {
    let retriever = Retriever::new(indexes, &config.retrieval)?;
    let cands = candidate_map(&retriever, docs)?;
    let ranked = model.ranker()?.rank_documents(docs, &cands)?;
    let pred = ranked
        .iter()
        .map(|(id, r)| Ok((id.clone(), predict_set(r, &model.policy)?)))
        .collect::<Result<DocSets>>()?;
    Ok((ranked, pred))
}

pub fn predictions(ranked: &BTreeMap<String, RankedList>, pred: &DocSets) -> Vec<Prediction> {
    ranked
        .iter()
        .map(|(id, r)| Prediction {
            id: id.clone(),
            ranked: r.entries.clone(),
            predicted: pred.get(id).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
        })
        .collect()
}

pub fn gold_sets(docs: &[&Document]) -> DocSets {
    docs.iter().map(|d| (d.id.clone(), d.gold_labels.clone())).collect()
}

/// Re-ranks and scores one split.
pub fn evaluate_split(
    model: &Model,
    corpus: &Corpus,
    indexes: &Indexes,
    config: &PipelineConfig,
    split: SplitName,
) -> Result<(EvalReport, Vec<Prediction>)> {
    let docs = corpus.split_docs(split);
    if docs.is_empty() {
        return Err(Error::MismatchedIds(format!("split {split:?} has no documents")));
    }
    let (ranked, pred) = rerank(model, &docs, indexes, config)?;
    let report = metrics::evaluate(
        &gold_sets(&docs),
        &pred,
        &ranked,
        &corpus.label_ids(),
        &corpus.train_label_frequency(),
        &config.eval.ks,
    )?;
    Ok((report, predictions(&ranked, &pred)))
}
