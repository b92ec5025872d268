//! Directed label co-occurrence graph.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelId};
use crate::error::{Error, Result};

/// Default edge threshold: an edge needs P(y_j | y_i) = 1.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Spatial relation between two nodes, used to index the attention bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum SpatialBucket {
    SelfLoop = 0,
    Edge = 1,
    NoEdge = 2,
}

impl SpatialBucket {
    pub const COUNT: usize = 3;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelGraph {
    labels: Vec<LabelId>,
    lambda: f64,
    label_counts: Vec<u64>,
    /// C_{y_i ∩ y_j} for i < j.
    pair_counts: BTreeMap<(usize, usize), u64>,
    edges: Array2<bool>,
    buckets: Arc<Array2<u8>>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!("lambda={lambda} is outside (0, 1]")));
    }
    Ok(())
}

impl LabelGraph {
    /// Counts label co-occurrences over `train_docs` and keeps edge i→j
    /// whenever P(y_j | y_i) ≥ lambda. Node order follows `labels`.
    pub fn build(labels: &[LabelId], train_docs: &[&Document], lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if train_docs.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let index: HashMap<&LabelId, usize> = labels.iter().enumerate().map(|(i, y)| (y, i)).collect();
        let mut label_counts = vec![0u64; labels.len()];
        let mut pair_counts = BTreeMap::new();
        for doc in train_docs {
            let mut nodes = Vec::with_capacity(doc.gold_labels.len());
            for y in &doc.gold_labels {
                let &i = index.get(y).ok_or_else(|| Error::UnknownLabel {
                    label: y.0.clone(),
                    path: None,
                    line: None,
                })?;
                nodes.push(i);
            }
            nodes.sort_unstable();
            for (a, &i) in nodes.iter().enumerate() {
                label_counts[i] += 1;
                for &j in &nodes[a + 1..] {
                    *pair_counts.entry((i, j)).or_default() += 1;
                }
            }
        }
        Ok(Self::from_counts(labels.to_vec(), lambda, label_counts, pair_counts))
    }

    fn from_counts(
        labels: Vec<LabelId>,
        lambda: f64,
        label_counts: Vec<u64>,
        pair_counts: BTreeMap<(usize, usize), u64>,
    ) -> Self {
        let n = labels.len();
        let mut graph = Self {
            labels,
            lambda,
            label_counts,
            pair_counts,
            edges: Array2::from_elem((n, n), false),
            buckets: Arc::new(Array2::zeros((n, n))),
        };
        let edges = Array2::from_shape_fn((n, n), |(i, j)| graph.cond_prob(i, j) >= lambda);
        graph.set_edges(edges);
        graph
    }

    fn set_edges(&mut self, edges: Array2<bool>) {
        let buckets = Array2::from_shape_fn(edges.dim(), |(i, j)| {
            if i == j {
                SpatialBucket::SelfLoop as u8
            } else if edges[[i, j]] {
                SpatialBucket::Edge as u8
            } else {
                SpatialBucket::NoEdge as u8
            }
        });
        self.edges = edges;
        self.buckets = Arc::new(buckets);
    }

    /// Graph with a hand-specified directed edge list and no counts.
    pub fn from_edges(labels: Vec<LabelId>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        let mut adj = Array2::from_elem((n, n), false);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    len: n,
                });
            }
            adj[[i, j]] = true;
        }
        let mut graph = Self {
            labels,
            lambda: DEFAULT_LAMBDA,
            label_counts: vec![0; n],
            pair_counts: BTreeMap::new(),
            edges: Array2::from_elem((n, n), false),
            buckets: Arc::new(Array2::zeros((n, n))),
        };
        graph.set_edges(adj);
        Ok(graph)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn label_counts(&self) -> &[u64] {
        &self.label_counts
    }

    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return self.label_counts[i];
        }
        let key = (i.min(j), i.max(j));
        self.pair_counts.get(&key).copied().unwrap_or(0)
    }

    /// P(y_j | y_i) = C_{i∩j} / C_i; zero when y_i never occurs.
    pub fn cond_prob(&self, i: usize, j: usize) -> f64 {
        let ci = self.label_counts[i];
        if ci == 0 {
            return 0.0;
        }
        self.pair_count(i, j) as f64 / ci as f64
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[[i, j]]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .indexed_iter()
            .filter(|(_, &e)| e)
            .map(|((i, j), _)| (i, j))
            .collect()
    }

    pub fn spatial_bucket(&self, i: usize, j: usize) -> Result<SpatialBucket> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        Ok(if i == j {
            SpatialBucket::SelfLoop
        } else if self.edges[[i, j]] {
            SpatialBucket::Edge
        } else {
            SpatialBucket::NoEdge
        })
    }

    /// L×L bucket ids (see [`SpatialBucket`]).
    pub fn bucket_matrix(&self) -> Arc<Array2<u8>> {
        Arc::clone(&self.buckets)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "permutation of length {} for {n} nodes",
                perm.len()
            )));
        }
        let labels = perm.iter().map(|&p| self.labels[p].clone()).collect();
        let edges = Array2::from_shape_fn((n, n), |(i, j)| self.edges[[perm[i], perm[j]]]);
        let mut pair_counts = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                let c = self.pair_count(perm[i], perm[j]);
                if c > 0 {
                    pair_counts.insert((i, j), c);
                }
            }
        }
        let mut graph = Self {
            labels,
            lambda: self.lambda,
            label_counts: perm.iter().map(|&p| self.label_counts[p]).collect(),
            pair_counts,
            edges: Array2::from_elem((n, n), false),
            buckets: Arc::new(Array2::zeros((n, n))),
        };
        graph.set_edges(edges);
        Ok(graph)
    }

    pub fn to_file(&self) -> LabelGraphFile {
        let n = self.n();
        let mut cond_prob = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let p = self.cond_prob(i, j);
                if p > 0.0 {
                    cond_prob.push((i, j, p));
                }
            }
        }
        LabelGraphFile {
            labels: self.labels.clone(),
            lambda: self.lambda,
            label_counts: self.label_counts.clone(),
            pair_counts: self.pair_counts.iter().map(|(&(i, j), &c)| (i, j, c)).collect(),
            edges: self.edges(),
            cond_prob,
        }
    }

    pub fn from_file(file: LabelGraphFile) -> Result<Self> {
        check_lambda(file.lambda)?;
        let n = file.labels.len();
        if file.label_counts.len() != n {
            return Err(Error::ShapeMismatch("label_counts length".into()));
        }
        let mut pair_counts = BTreeMap::new();
        for (i, j, c) in file.pair_counts {
            if i >= j || j >= n {
                return Err(Error::IndexOutOfRange { index: j, len: n });
            }
            pair_counts.insert((i, j), c);
        }
        let graph = Self::from_counts(file.labels, file.lambda, file.label_counts, pair_counts);
        if graph.edges() != file.edges {
            return Err(Error::Config("stored edges disagree with stored counts".into()));
        }
        Ok(graph)
    }
}

/// Serialized form: adjacency plus the counts and probabilities behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGraphFile {
    pub labels: Vec<LabelId>,
    pub lambda: f64,
    pub label_counts: Vec<u64>,
    pub pair_counts: Vec<(usize, usize, u64)>,
    pub edges: Vec<(usize, usize)>,
    pub cond_prob: Vec<(usize, usize, f64)>,
}

pub fn build_label_graph(labels: &[LabelId], train_docs: &[&Document], lambda: f64) -> Result<LabelGraph> {
    LabelGraph::build(labels, train_docs, lambda)
}
