//! Label encoders: descriptor features + label graph → label embeddings.
//!
//! [`Graphormer`] stacks pre-norm attention layers `h' = MHA(LN(h)) + h`
//! whose logits carry a learnable per-head bias indexed by the spatial
//! bucket of each node pair. [`DescriptorOnly`] passes the descriptor
//! encodings through unchanged.

use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::LabelDescriptor;
use crate::encoder::{leaves, TextEncoder};
use crate::error::{Error, Result};
use crate::graph::{LabelGraph, SpatialBucket};
use crate::registry::Registry;
use crate::tape::{Matrix, StoredMatrix, Tape, Var};

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_HEADS: usize = 4;
pub const LN_EPS: f64 = 1e-5;

/// Final-layer node representations, one row per label.
pub type LabelEmbeddings = Matrix;

pub trait LabelEncoder: fmt::Debug + Send + Sync {
    fn kind(&self) -> &'static str;

    fn parameters(&self) -> Vec<&Matrix>;

    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    /// Records the label embeddings on `tape` from node features `features`
    /// (L × h). `params` are leaves holding [`LabelEncoder::parameters`].
    fn record(&self, tape: &mut Tape, params: &[Var], features: Var, graph: &LabelGraph) -> Result<Var>;

    fn to_json(&self) -> Value;

    fn box_clone(&self) -> Box<dyn LabelEncoder>;

    fn forward(&self, features: &Matrix, graph: &LabelGraph) -> Result<LabelEmbeddings> {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.parameters());
        let x = tape.leaf(features.clone());
        let out = self.record(&mut tape, &params, x, graph)?;
        let value = tape.value(out).clone();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("label encoder"));
        }
        Ok(value)
    }
}

impl Clone for Box<dyn LabelEncoder> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoderInit {
    pub seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Clone, Copy)]
pub struct LabelEncoderFactory {
    pub init: fn(&LabelEncoderInit) -> Result<Box<dyn LabelEncoder>>,
    pub load: fn(&Value) -> Result<Box<dyn LabelEncoder>>,
}

pub fn label_encoders() -> Registry<LabelEncoderFactory> {
    Registry::new("label encoder")
        .with(
            "graphormer",
            LabelEncoderFactory {
                init: |i| Ok(Box::new(Graphormer::init(i.seed, i.dim, i.layers, i.heads)?)),
                load: |v| Ok(Box::new(Graphormer::from_json(v)?)),
            },
        )
        .with(
            "descriptor",
            LabelEncoderFactory {
                init: |_| Ok(Box::new(DescriptorOnly)),
                load: |_| Ok(Box::new(DescriptorOnly)),
            },
        )
}

/// Row i is the pooled encoding of label i's descriptor.
pub fn init_node_features(labels: &[LabelDescriptor], encoder: &dyn TextEncoder) -> Result<Matrix> {
    let bags: Vec<&[String]> = labels.iter().map(|l| l.descriptor_tokens.as_slice()).collect();
    if bags.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    encoder.encode_batch(&bags)
}

/// Identity label encoder: embeddings are the descriptor encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorOnly;

impl LabelEncoder for DescriptorOnly {
    fn kind(&self) -> &'static str {
        "descriptor"
    }

    fn parameters(&self) -> Vec<&Matrix> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        Vec::new()
    }

    fn record(&self, tape: &mut Tape, _params: &[Var], features: Var, graph: &LabelGraph) -> Result<Var> {
        check_rows(tape.value(features), graph)?;
        Ok(features)
    }

    fn to_json(&self) -> Value {
        serde_json::json!({ "kind": "descriptor" })
    }

    fn box_clone(&self) -> Box<dyn LabelEncoder> {
        Box::new(*self)
    }
}

fn check_rows(features: &Matrix, graph: &LabelGraph) -> Result<()> {
    if features.nrows() != graph.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} graph nodes",
            features.nrows(),
            graph.n()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphormerLayer {
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

const LAYER_PARAMS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Graphormer {
    seed: u64,
    heads: usize,
    pub layers: Vec<GraphormerLayer>,
    /// heads × 3, indexed by [`SpatialBucket`]; shared by all layers.
    pub spatial_bias: Matrix,
}

fn check_dims(dim: usize, heads: usize) -> Result<()> {
    if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::InvalidParameter(format!(
            "hidden size {dim} must be a positive multiple of head count {heads}"
        )));
    }
    Ok(())
}

impl Graphormer {
    pub fn init(seed: u64, dim: usize, layers: usize, heads: usize) -> Result<Self> {
        check_dims(dim, heads)?;
        if layers == 0 {
            return Err(Error::InvalidParameter("graphormer needs at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut weight = || Array2::from_shape_fn((dim, dim), |_| normal.sample(&mut rng));
        let layers = (0..layers)
            .map(|_| GraphormerLayer {
                ln_gain: Matrix::ones((1, dim)),
                ln_bias: Matrix::zeros((1, dim)),
                wq: weight(),
                wk: weight(),
                wv: weight(),
                wo: weight(),
            })
            .collect();
        Ok(Self {
            seed,
            heads,
            layers,
            spatial_bias: Matrix::zeros((heads, SpatialBucket::COUNT)),
        })
    }

    pub fn from_layers(layers: Vec<GraphormerLayer>, heads: usize, spatial_bias: Matrix) -> Result<Self> {
        let dim = layers
            .first()
            .map(|l| l.wq.nrows())
            .ok_or_else(|| Error::InvalidParameter("graphormer needs at least one layer".into()))?;
        check_dims(dim, heads)?;
        for l in &layers {
            let square = [&l.wq, &l.wk, &l.wv, &l.wo].iter().all(|w| w.dim() == (dim, dim));
            let rows = [&l.ln_gain, &l.ln_bias].iter().all(|r| r.dim() == (1, dim));
            if !square || !rows {
                return Err(Error::ShapeMismatch("graphormer layer shapes".into()));
            }
        }
        if spatial_bias.dim() != (heads, SpatialBucket::COUNT) {
            return Err(Error::ShapeMismatch(format!("spatial bias {:?}", spatial_bias.dim())));
        }
        Ok(Self {
            seed: 0,
            heads,
            layers,
            spatial_bias,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.layers[0].wq.nrows()
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let section: GraphormerSection =
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("graphormer section: {e}")))?;
        let layers = section
            .layers
            .iter()
            .map(|l| {
                Ok(GraphormerLayer {
                    ln_gain: l.ln_gain.to_matrix()?,
                    ln_bias: l.ln_bias.to_matrix()?,
                    wq: l.wq.to_matrix()?,
                    wk: l.wk.to_matrix()?,
                    wv: l.wv.to_matrix()?,
                    wo: l.wo.to_matrix()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut g = Self::from_layers(layers, section.heads, section.spatial_bias.to_matrix()?)?;
        g.seed = section.seed;
        Ok(g)
    }

    fn record_layers(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        graph: &LabelGraph,
        with_bias: bool,
    ) -> Result<Var> {
        let x = tape.value(features);
        check_rows(x, graph)?;
        if x.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} vs hidden {}",
                x.ncols(),
                self.dim()
            )));
        }
        if params.len() != self.layers.len() * LAYER_PARAMS + 1 {
            return Err(Error::ShapeMismatch("graphormer parameter count".into()));
        }
        let buckets = graph.bucket_matrix();
        let bias_table = params[params.len() - 1];
        let dh = self.dim() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut h = features;
        for p in params[..params.len() - 1].chunks(LAYER_PARAMS) {
            let &[gain, beta, wq, wk, wv, wo] = p else {
                unreachable!()
            };
            let n = tape.layer_norm(h, LN_EPS);
            let n = tape.mul_row(n, gain)?;
            let n = tape.add_row(n, beta)?;
            let q = tape.matmul(n, wq)?;
            let k = tape.matmul(n, wk)?;
            let v = tape.matmul(n, wv)?;
            let mut outs = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let logits = tape.matmul_t(qh, kh)?;
                let mut logits = tape.scale(logits, scale);
                if with_bias {
                    let b = tape.bucket_bias(bias_table, head, buckets.clone())?;
                    logits = tape.add(logits, b)?;
                }
                let attn = tape.softmax_rows(logits);
                outs.push(tape.attend(attn, vh)?);
            }
            let mha = if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)?
            };
            let mha = tape.matmul(mha, wo)?;
            h = tape.add(mha, h)?;
        }
        Ok(h)
    }

    /// Forward pass with the spatial bias term left out entirely.
    #[cfg(test)]
    fn forward_unbiased(&self, features: &Matrix, graph: &LabelGraph) -> Result<Matrix> {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, self.parameters());
        let x = tape.leaf(features.clone());
        let out = self.record_layers(&mut tape, &params, x, graph, false)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerSection {
    ln_gain: StoredMatrix,
    ln_bias: StoredMatrix,
    wq: StoredMatrix,
    wk: StoredMatrix,
    wv: StoredMatrix,
    wo: StoredMatrix,
}

#[derive(Serialize, Deserialize)]
struct GraphormerSection {
    kind: String,
    seed: u64,
    heads: usize,
    layers: Vec<LayerSection>,
    spatial_bias: StoredMatrix,
}

impl LabelEncoder for Graphormer {
    fn kind(&self) -> &'static str {
        "graphormer"
    }

    fn parameters(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::with_capacity(self.layers.len() * LAYER_PARAMS + 1);
        for l in &self.layers {
            out.extend([&l.ln_gain, &l.ln_bias, &l.wq, &l.wk, &l.wv, &l.wo]);
        }
        out.push(&self.spatial_bias);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(self.layers.len() * LAYER_PARAMS + 1);
        for l in &mut self.layers {
            out.extend([
                &mut l.ln_gain,
                &mut l.ln_bias,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
            ]);
        }
        out.push(&mut self.spatial_bias);
        out
    }

    fn record(&self, tape: &mut Tape, params: &[Var], features: Var, graph: &LabelGraph) -> Result<Var> {
        self.record_layers(tape, params, features, graph, true)
    }

    fn to_json(&self) -> Value {
        let section = GraphormerSection {
            kind: self.kind().to_string(),
            seed: self.seed,
            heads: self.heads,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSection {
                    ln_gain: (&l.ln_gain).into(),
                    ln_bias: (&l.ln_bias).into(),
                    wq: (&l.wq).into(),
                    wk: (&l.wk).into(),
                    wv: (&l.wv).into(),
                    wo: (&l.wo).into(),
                })
                .collect(),
            spatial_bias: (&self.spatial_bias).into(),
        };
        serde_json::to_value(section).expect("graphormer section serializes")
    }

    fn box_clone(&self) -> Box<dyn LabelEncoder> {
        Box::new(self.clone())
    }
}

pub fn graphormer_forward(features: &Matrix, graph: &LabelGraph, params: &Graphormer) -> Result<LabelEmbeddings> {
    params.forward(features, graph)
}

/// One recorded label-encoder forward pass, kept for a later backward call.
pub struct LabelEncoderPass<'a> {
    encoder: &'a dyn LabelEncoder,
    tape: Tape,
    params: Vec<Var>,
    state: Option<(Var, Var)>,
}

impl<'a> LabelEncoderPass<'a> {
    pub fn new(encoder: &'a dyn LabelEncoder) -> Self {
        let mut tape = Tape::new();
        let params = leaves(&mut tape, encoder.parameters());
        Self {
            encoder,
            tape,
            params,
            state: None,
        }
    }

    pub fn forward(&mut self, features: &Matrix, graph: &LabelGraph) -> Result<LabelEmbeddings> {
        let x = self.tape.leaf(features.clone());
        let out = self.encoder.record(&mut self.tape, &self.params, x, graph)?;
        self.state = Some((x, out));
        Ok(self.tape.value(out).clone())
    }

    /// Parameter gradients and the gradient of the input features.
    pub fn backward(&self, upstream: &Matrix) -> Result<(Vec<Matrix>, Matrix)> {
        let (x, out) = self.state.ok_or(Error::NoForwardState)?;
        let grads = self.tape.backward(&[(out, upstream.clone())])?;
        let params = self
            .params
            .iter()
            .zip(self.encoder.parameters())
            .map(|(&v, p)| grads.or_zeros(v, p))
            .collect();
        Ok((params, grads.or_zeros(x, self.tape.value(x))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelId;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> LabelGraph {
        let labels = (0..n).map(|i| LabelId(format!("y{i}"))).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        LabelGraph::from_edges(labels, &edges).unwrap()
    }

    /// Straight-line reference, loops only.
    fn reference(g: &Graphormer, x: &Matrix, graph: &LabelGraph) -> Matrix {
        let (n, d) = x.dim();
        let dh = d / g.heads();
        let mut h = x.clone();
        for l in &g.layers {
            let mut ln = Matrix::zeros((n, d));
            for i in 0..n {
                let mean = (0..d).map(|c| h[[i, c]]).sum::<f64>() / d as f64;
                let var = (0..d).map(|c| (h[[i, c]] - mean).powi(2)).sum::<f64>() / d as f64;
                for c in 0..d {
                    ln[[i, c]] = (h[[i, c]] - mean) / (var + LN_EPS).sqrt() * l.ln_gain[[0, c]] + l.ln_bias[[0, c]];
                }
            }
            let proj = |w: &Matrix| {
                let mut o = Matrix::zeros((n, d));
                for i in 0..n {
                    for c in 0..d {
                        o[[i, c]] = (0..d).map(|k| ln[[i, k]] * w[[k, c]]).sum();
                    }
                }
                o
            };
            let (q, k, v) = (proj(&l.wq), proj(&l.wk), proj(&l.wv));
            let mut cat = Matrix::zeros((n, d));
            for head in 0..g.heads() {
                let cols = head * dh..(head + 1) * dh;
                for i in 0..n {
                    let logits: Vec<f64> = (0..n)
                        .map(|j| {
                            let dot: f64 = cols.clone().map(|c| q[[i, c]] * k[[j, c]]).sum();
                            let b = graph.spatial_bucket(i, j).unwrap() as usize;
                            dot / (dh as f64).sqrt() + g.spatial_bias[[head, b]]
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|s| (s - m).exp()).sum();
                    for c in cols.clone() {
                        cat[[i, c]] = (0..n).map(|j| (logits[j] - m).exp() / z * v[[j, c]]).sum();
                    }
                }
            }
            let mut next = h.clone();
            for i in 0..n {
                for c in 0..d {
                    next[[i, c]] += (0..d).map(|k| cat[[i, k]] * l.wo[[k, c]]).sum::<f64>();
                }
            }
            h = next;
        }
        h
    }

    fn randomized(seed: u64, d: usize, layers: usize, heads: usize, rng: &mut ChaCha8Rng) -> Graphormer {
        let mut g = Graphormer::init(seed, d, layers, heads).unwrap();
        for l in &mut g.layers {
            l.ln_gain = random_matrix(rng, 1, d) + 1.0;
            l.ln_bias = random_matrix(rng, 1, d);
        }
        g.spatial_bias = random_matrix(rng, heads, 3);
        g
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (layers, heads) in [(1, 1), (2, 2), (2, 4)] {
            let g = randomized(rng.random(), 8, layers, heads, &mut rng);
            let graph = random_graph(&mut rng, 3);
            let x = random_matrix(&mut rng, 3, 8);
            let out = graphormer_forward(&x, &graph, &g).unwrap();
            let want = reference(&g, &x, &graph);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_bias_is_plain_attention_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graphormer::init(9, 8, 1, 1).unwrap();
        let graph = random_graph(&mut rng, 5);
        let x = random_matrix(&mut rng, 5, 8);
        assert_eq!(g.forward(&x, &graph).unwrap(), g.forward_unbiased(&x, &graph).unwrap());
    }

    #[test]
    fn scale_uses_head_width() {
        // With identity projections and one head over width d, logits are
        // ⟨q_i, q_j⟩ / sqrt(d); with two heads each head divides by sqrt(d/2).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let graph = random_graph(&mut rng, 3);
        let x = random_matrix(&mut rng, 3, d);
        for heads in [1, 2] {
            let mut g = randomized(1, d, 1, heads, &mut rng);
            g.spatial_bias.fill(0.0);
            let want = reference(&g, &x, &graph);
            let out = g.forward(&x, &graph).unwrap();
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = randomized(2, 8, 2, 2, &mut rng);
        let graph = random_graph(&mut rng, 5);
        let x = random_matrix(&mut rng, 5, 8);
        let out = g.forward(&x, &graph).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let px = Array2::from_shape_fn((5, 8), |(i, c)| x[[perm[i], c]]);
            let pout = g.forward(&px, &graph.permuted(&perm).unwrap()).unwrap();
            for i in 0..5 {
                assert_eq!(pout.row(i), out.row(perm[i]));
            }
        }
    }

    #[test]
    fn constant_bias_shift_leaves_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = randomized(3, 8, 1, 2, &mut rng);
        let graph = random_graph(&mut rng, 4);
        let x = random_matrix(&mut rng, 4, 8);
        let before = g.forward(&x, &graph).unwrap();
        for b in 0..3 {
            g.spatial_bias[[1, b]] += 2.5;
        }
        let after = g.forward(&x, &graph).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = randomized(4, 4, 2, 2, &mut rng);
        let graph = random_graph(&mut rng, 3);
        let x = random_matrix(&mut rng, 3, 4);
        let upstream = random_matrix(&mut rng, 3, 4);
        let loss = |g: &Graphormer, x: &Matrix| (g.forward(x, &graph).unwrap() * &upstream).sum();

        let mut pass = LabelEncoderPass::new(&g);
        pass.forward(&x, &graph).unwrap();
        let (grads, gx) = pass.backward(&upstream).unwrap();
        let step = 1e-4;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * step);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / denom < 1e-3, "{analytic} vs {numeric}");
        };
        for (p, grad) in grads.iter().enumerate() {
            for idx in 0..grad.len() {
                let mut hi = g.clone();
                let mut lo = g.clone();
                hi.parameters_mut()[p].as_slice_mut().unwrap()[idx] += step;
                lo.parameters_mut()[p].as_slice_mut().unwrap()[idx] -= step;
                check(grad.as_slice().unwrap()[idx], loss(&hi, &x), loss(&lo, &x));
            }
        }
        for idx in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi.as_slice_mut().unwrap()[idx] += step;
            lo.as_slice_mut().unwrap()[idx] -= step;
            check(gx.as_slice().unwrap()[idx], loss(&g, &hi), loss(&g, &lo));
        }
    }

    #[test]
    fn zero_upstream_and_missing_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = randomized(5, 4, 1, 1, &mut rng);
        let graph = random_graph(&mut rng, 3);
        let pass = LabelEncoderPass::new(&g);
        assert!(matches!(
            pass.backward(&Matrix::zeros((3, 4))),
            Err(Error::NoForwardState)
        ));
        let mut pass = LabelEncoderPass::new(&g);
        pass.forward(&random_matrix(&mut rng, 3, 4), &graph).unwrap();
        let (grads, gx) = pass.backward(&Matrix::zeros((3, 4))).unwrap();
        assert!(grads.iter().chain([&gx]).all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_errors_and_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert!(Graphormer::init(0, 6, 1, 4).is_err());
        let g = randomized(6, 4, 2, 2, &mut rng);
        let graph = random_graph(&mut rng, 3);
        assert!(matches!(
            g.forward(&random_matrix(&mut rng, 2, 4), &graph),
            Err(Error::ShapeMismatch(_))
        ));
        let back = Graphormer::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let reg = label_encoders();
        let id = (reg.get("descriptor").unwrap().init)(&LabelEncoderInit {
            seed: 0,
            dim: 4,
            layers: 1,
            heads: 1,
        })
        .unwrap();
        let x = random_matrix(&mut rng, 3, 4);
        assert_eq!(id.forward(&x, &graph).unwrap(), x);
    }
}
