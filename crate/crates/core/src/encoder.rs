//! Pooled text encoders: token sequence → one vector.
//!
//! The same encoder instance embeds documents and label descriptors. The
//! shipped [`MeanPoolEncoder`] averages trainable token embeddings and
//! passes the mean through a projection and `tanh`. Other implementations
//! plug in through [`encoders()`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tape::{Matrix, StoredMatrix, Tape, Var};

pub const DEFAULT_DIM: usize = 64;
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Vec<f64>,
    pub source_len: usize,
}

pub trait TextEncoder: fmt::Debug + Send + Sync {
    fn kind(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn parameters(&self) -> Vec<&Matrix>;

    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    /// Records the pooled encoding of each bag on `tape`, one output row per
    /// bag. `params` are leaves holding [`TextEncoder::parameters`] in order.
    fn record(&self, tape: &mut Tape, params: &[Var], bags: &[&[String]]) -> Result<Var>;

    fn to_json(&self) -> Value;

    fn box_clone(&self) -> Box<dyn TextEncoder>;

    fn encode_batch(&self, bags: &[&[String]]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.parameters());
        let out = self.record(&mut tape, &params, bags)?;
        let value = tape.value(out).clone();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("text encoder"));
        }
        Ok(value)
    }

    fn encode(&self, tokens: &[String]) -> Result<PooledVector> {
        let m = self.encode_batch(&[tokens])?;
        Ok(PooledVector {
            values: m.row(0).to_vec(),
            source_len: tokens.len(),
        })
    }
}

impl Clone for Box<dyn TextEncoder> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn leaves(tape: &mut Tape, params: Vec<&Matrix>) -> Vec<Var> {
    params.into_iter().map(|p| tape.leaf(p.clone())).collect()
}

#[derive(Debug, Clone)]
pub struct EncoderInit {
    pub seed: u64,
    pub dim: usize,
    pub vocab: BTreeSet<String>,
}

#[derive(Clone, Copy)]
pub struct EncoderFactory {
    pub init: fn(&EncoderInit) -> Result<Box<dyn TextEncoder>>,
    pub load: fn(&Value) -> Result<Box<dyn TextEncoder>>,
}

pub fn encoders() -> Registry<EncoderFactory> {
    Registry::new("text encoder").with(
        "mean-pool",
        EncoderFactory {
            init: |init| Ok(Box::new(MeanPoolEncoder::init(init.seed, &init.vocab, init.dim)?)),
            load: |v| Ok(Box::new(MeanPoolEncoder::from_json(v)?)),
        },
    )
}

/// Mean of token embeddings → projection → tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPoolEncoder {
    seed: u64,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    pub embeddings: Matrix,
    pub projection: Matrix,
    pub bias: Matrix,
}

#[derive(Serialize, Deserialize)]
struct MeanPoolSection {
    kind: String,
    seed: u64,
    dim: usize,
    vocab: Vec<String>,
    embeddings: StoredMatrix,
    projection: StoredMatrix,
    bias: StoredMatrix,
}

impl MeanPoolEncoder {
    /// Row 0 is reserved for unknown tokens; the rest follow sorted vocab order.
    pub fn init(seed: u64, vocab: &BTreeSet<String>, dim: usize) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::EmptyVocab);
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("encoder dim must be >= 1".into()));
        }
        let words: Vec<String> = std::iter::once(UNK.to_string())
            .chain(vocab.iter().filter(|w| w.as_str() != UNK).cloned())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let embeddings = Matrix::from_shape_simple_fn((words.len(), dim), || normal.sample(&mut rng));
        let projection = Matrix::from_shape_simple_fn((dim, dim), || normal.sample(&mut rng));
        Ok(Self::from_parts(
            seed,
            words,
            embeddings,
            projection,
            Matrix::zeros((1, dim)),
        ))
    }

    fn from_parts(seed: u64, vocab: Vec<String>, embeddings: Matrix, projection: Matrix, bias: Matrix) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            seed,
            vocab,
            index,
            embeddings,
            projection,
            bias,
        }
    }

    /// Encoder with explicit parameters; `vocab[0]` is the unknown-token row.
    pub fn with_parameters(vocab: Vec<String>, embeddings: Matrix, projection: Matrix, bias: Matrix) -> Result<Self> {
        let dim = embeddings.ncols();
        if vocab.len() != embeddings.nrows() || projection.dim() != (dim, dim) || bias.dim() != (1, dim) {
            return Err(Error::ShapeMismatch("mean-pool encoder parameters".into()));
        }
        Ok(Self::from_parts(0, vocab, embeddings, projection, bias))
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let s: MeanPoolSection =
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("mean-pool encoder section: {e}")))?;
        let enc = Self::from_parts(
            s.seed,
            s.vocab,
            s.embeddings.to_matrix()?,
            s.projection.to_matrix()?,
            s.bias.to_matrix()?,
        );
        if enc.embeddings.dim() != (enc.vocab.len(), s.dim) || enc.projection.dim() != (s.dim, s.dim) {
            return Err(Error::ShapeMismatch("mean-pool encoder section".into()));
        }
        Ok(enc)
    }
}

impl TextEncoder for MeanPoolEncoder {
    fn kind(&self) -> &'static str {
        "mean-pool"
    }

    fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn parameters(&self) -> Vec<&Matrix> {
        vec![&self.embeddings, &self.projection, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.embeddings, &mut self.projection, &mut self.bias]
    }

    fn record(&self, tape: &mut Tape, params: &[Var], bags: &[&[String]]) -> Result<Var> {
        let [emb, proj, bias] = params else {
            return Err(Error::ShapeMismatch(format!(
                "mean-pool expects 3 parameters, got {}",
                params.len()
            )));
        };
        let ids: Vec<Vec<usize>> = bags
            .iter()
            .map(|bag| bag.iter().map(|t| self.token_id(t)).collect())
            .collect();
        let mean = tape.bag_mean(*emb, ids)?;
        let projected = tape.matmul(mean, *proj)?;
        let shifted = tape.add_row(projected, *bias)?;
        Ok(tape.tanh(shifted))
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(MeanPoolSection {
            kind: self.kind().into(),
            seed: self.seed,
            dim: self.dim(),
            vocab: self.vocab.clone(),
            embeddings: (&self.embeddings).into(),
            projection: (&self.projection).into(),
            bias: (&self.bias).into(),
        })
        .expect("encoder section serializes")
    }

    fn box_clone(&self) -> Box<dyn TextEncoder> {
        Box::new(self.clone())
    }
}

pub fn init_params(seed: u64, vocab: &BTreeSet<String>, dim: usize) -> Result<MeanPoolEncoder> {
    MeanPoolEncoder::init(seed, vocab, dim)
}

pub fn encode(tokens: &[String], encoder: &dyn TextEncoder) -> Result<PooledVector> {
    encoder.encode(tokens)
}

/// One recorded encoder forward pass, kept for a later backward call.
pub struct EncoderPass<'a> {
    encoder: &'a dyn TextEncoder,
    tape: Tape,
    params: Vec<Var>,
    output: Option<Var>,
}

impl<'a> EncoderPass<'a> {
    pub fn new(encoder: &'a dyn TextEncoder) -> Self {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, encoder.parameters());
        Self {
            encoder,
            tape,
            params,
            output: None,
        }
    }

    pub fn forward(&mut self, bags: &[&[String]]) -> Result<Matrix> {
        let out = self.encoder.record(&mut self.tape, &self.params, bags)?;
        self.output = Some(out);
        Ok(self.tape.value(out).clone())
    }

    /// Gradients of every encoder parameter given the upstream gradient of
    /// the last forward output.
    pub fn backward(&self, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let out = self.output.ok_or(Error::NoForwardState)?;
        let grads = self.tape.backward(&[(out, upstream.clone())])?;
        Ok(self
            .params
            .iter()
            .zip(self.encoder.parameters())
            .map(|(&v, p)| grads.or_zeros(v, p))
            .collect())
    }
}
