//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Operations are appended to a [`Tape`] in evaluation order, so reverse
//! iteration is a valid topological order for the backward sweep. Any
//! number of nodes may be seeded with upstream gradients, which lets a loss
//! computed outside the tape drive the backward pass.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    /// a · b with the shared-axis sum accumulated order-independently.
    Attend(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    LayerNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    BucketBias {
        table: Var,
        row: usize,
        buckets: Arc<Array2<u8>>,
    },
    BagMean {
        table: Var,
        bags: Vec<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Fixed-point accumulator whose result does not depend on summation order.
#[derive(Default, Clone, Copy)]
struct ExactSum {
    acc: i128,
    poisoned: bool,
}

impl ExactSum {
    const SCALE: f64 = (1u128 << 80) as f64;

    fn add(&mut self, x: f64) {
        if x.is_finite() && x.abs() < 1e13 {
            self.acc = self.acc.saturating_add((x * Self::SCALE) as i128);
        } else {
            self.poisoned = true;
        }
    }

    fn value(self) -> f64 {
        if self.poisoned {
            f64::NAN
        } else {
            self.acc as f64 / Self::SCALE
        }
    }
}

fn check_same(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn check_row(a: &Matrix, row: &Matrix, what: &str) -> Result<()> {
    if row.nrows() != 1 || row.ncols() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: row {:?} against {:?}",
            row.dim(),
            a.dim()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(Error::ShapeMismatch(format!("matmul {:?} · {:?}", x.dim(), y.dim())));
        }
        let v = x.dot(y);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.ncols() {
            return Err(Error::ShapeMismatch(format!("matmul_t {:?} · {:?}ᵀ", x.dim(), y.dim())));
        }
        let v = x.dot(&y.t());
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    /// `weights · values` where each output entry sums over rows of
    /// `values` in an order-independent way, so permuting those rows
    /// (together with the matching weight columns) cannot change any bit.
    pub fn attend(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (w, x) = (self.value(weights), self.value(values));
        if w.ncols() != x.nrows() {
            return Err(Error::ShapeMismatch(format!("attend {:?} · {:?}", w.dim(), x.dim())));
        }
        let mut out = Matrix::zeros((w.nrows(), x.ncols()));
        let mut acc = vec![ExactSum::default(); x.ncols()];
        for (i, wrow) in w.outer_iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = ExactSum::default());
            for (j, &wij) in wrow.iter().enumerate() {
                for (c, &xjc) in x.row(j).iter().enumerate() {
                    acc[c].add(wij * xjc);
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out[[i, c]] = a.value();
            }
        }
        Ok(self.push(out, Op::Attend(weights, values)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        check_row(self.value(a), self.value(row), "add_row")?;
        let v = self.value(a) + self.value(row);
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        check_row(self.value(a), self.value(row), "mul_row")?;
        let v = self.value(a) * self.value(row);
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Per-row standardisation (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.outer_iter_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm { input: a, inv_std })
    }

    /// Row-wise softmax; each row's normaliser is summed order-independently.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.outer_iter_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let mut total = ExactSum::default();
            row.iter().for_each(|&v| total.add(v));
            let total = total.value();
            row.mapv_inplace(|v| v / total);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of {} columns",
                start + len,
                x.ncols()
            )));
        }
        let v = x.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(v, Op::SliceCols { input: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::ShapeMismatch(format!("concat: {e}")))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// L×L matrix whose (i, j) entry is `table[row, buckets[i, j]]`.
    pub fn bucket_bias(&mut self, table: Var, row: usize, buckets: Arc<Array2<u8>>) -> Result<Var> {
        let t = self.value(table);
        if row >= t.nrows() {
            return Err(Error::ShapeMismatch(format!("bias row {row} of {}", t.nrows())));
        }
        if let Some(&b) = buckets.iter().max() {
            if b as usize >= t.ncols() {
                return Err(Error::ShapeMismatch(format!("bucket {b} of {}", t.ncols())));
            }
        }
        let v = buckets.mapv(|b| t[[row, b as usize]]);
        Ok(self.push(v, Op::BucketBias { table, row, buckets }))
    }

    /// One output row per bag: the mean of the listed table rows, independent
    /// of their order within the bag.
    pub fn bag_mean(&mut self, table: Var, bags: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(table);
        let mut out = Matrix::zeros((bags.len(), t.ncols()));
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(Error::EmptyInput);
            }
            let mut acc = vec![ExactSum::default(); t.ncols()];
            for &id in bag {
                if id >= t.nrows() {
                    return Err(Error::ShapeMismatch(format!("row {id} of {}", t.nrows())));
                }
                for (a, &v) in acc.iter_mut().zip(t.row(id)) {
                    a.add(v);
                }
            }
            for (o, a) in out.row_mut(b).iter_mut().zip(&acc) {
                *o = a.value() / bag.len() as f64;
            }
        }
        Ok(self.push(out, Op::BagMean { table, bags }))
    }

    /// Propagates the seeded upstream gradients to every node.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::NoForwardState);
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            check_same(&self.nodes[v.0].value, g, "seed gradient")?;
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Attend(w, x) => {
                    let dw = g.dot(&self.value(*x).t());
                    let dx = self.value(*w).t().dot(&g);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, drow);
                }
                Op::MulRow(a, row) => {
                    let da = &g * self.value(*row);
                    let drow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, drow);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, &g * *f),
                Op::Tanh(a) => {
                    let da = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm { input, inv_std } => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut dx = Matrix::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let (gy, yy) = (g.row(i), y.row(i));
                        let mean_g = gy.sum() / n;
                        let mean_gy = gy.dot(&yy) / n;
                        for c in 0..y.ncols() {
                            dx[[i, c]] = inv_std[i] * (gy[c] - mean_g - yy[c] * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let inner = g.row(i).dot(&y.row(i));
                        for c in 0..y.ncols() {
                            dx[[i, c]] = y[[i, c]] * (g[[i, c]] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::SliceCols { input, start } => {
                    let mut dx = Matrix::zeros(self.value(*input).dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *input, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::BucketBias { table, row, buckets } => {
                    let mut dt = Matrix::zeros(self.value(*table).dim());
                    for (&b, &gv) in buckets.iter().zip(g.iter()) {
                        dt[[*row, b as usize]] += gv;
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::BagMean { table, bags } => {
                    let mut dt = Matrix::zeros(self.value(*table).dim());
                    for (b, bag) in bags.iter().enumerate() {
                        let share = &g.row(b) / bag.len() as f64;
                        for &id in bag {
                            let mut r = dt.row_mut(id);
                            r += &share;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.dim()))
    }
}

/// Row-major matrix as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for StoredMatrix {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }
}

impl StoredMatrix {
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("stored parameters"));
        }
        Matrix::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::ShapeMismatch(format!("stored matrix: {e}")))
    }
}
