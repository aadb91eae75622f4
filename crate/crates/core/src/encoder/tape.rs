//! Reverse-mode differentiation over matrix-valued operations.
//!
//! Every value on the tape is a dense matrix (scalars are 1x1). Operations
//! are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::loss;
use crate::Matrix;

/// Rows with a smaller norm cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a + 1 bᵀ`: adds the row vector `b` to every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// `(1 + ε) h + Σ_{neighbors} h`.
    GinAggregate {
        h: Var,
        eps: Var,
        neighbors: Arc<Vec<Vec<usize>>>,
    },
    SumRows(Var),
    StackRows(Vec<Var>),
    NormalizeRows(Var),
    Gram(Var),
    /// `max(S ⊙ mask, 0)` with a constant mask.
    MaskedWeights {
        s: Var,
        mask: Arc<Matrix>,
    },
    Laplacian(Var),
    SqFrobDiff(Var, Var),
    InfoNce {
        z1: Var,
        z2: Var,
        tau: f64,
    },
    LinearCombination(Vec<(Var, f64)>),
    SumSquares(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Grads {
    per_node: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.per_node.get(v.0).and_then(Option::as_ref)
    }
}

fn canonical_sum(values: &mut [f64]) -> f64 {
    // Summing in sorted order makes the result independent of the order in
    // which nodes are numbered.
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn scalar(x: f64) -> Matrix {
    Array2::from_elem((1, 1), x)
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input value (parameter or constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::invalid("add shape mismatch"));
        }
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        if vb.nrows() != 1 || vb.ncols() != va.ncols() {
            return Err(Error::invalid(format!(
                "bias shape {:?} does not fit {:?}",
                vb.dim(),
                va.dim()
            )));
        }
        let out = va + vb;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// GIN neighborhood update `(1 + ε) h_n + Σ_{n' ∈ N(n)} h_{n'}`.
    pub fn gin_aggregate(
        &mut self,
        h: Var,
        eps: Var,
        neighbors: Arc<Vec<Vec<usize>>>,
    ) -> Result<Var> {
        let vh = self.value(h);
        if neighbors.len() != vh.nrows() {
            return Err(Error::invalid("neighbor list length differs from node count"));
        }
        if self.value(eps).dim() != (1, 1) {
            return Err(Error::invalid("eps must be a scalar"));
        }
        let one_plus_eps = 1.0 + self.scalar_value(eps);
        let out = aggregate(vh, &neighbors, one_plus_eps);
        Ok(self.push(out, Op::GinAggregate { h, eps, neighbors }))
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros((1, va.ncols()));
        for (j, col) in va.columns().into_iter().enumerate() {
            let mut vals = col.to_vec();
            out[[0, j]] = canonical_sum(&mut vals);
        }
        self.push(out, Op::SumRows(a))
    }

    /// Stacks `1 x m` rows into an `N x m` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::invalid("nothing to stack"));
        };
        let width = self.value(first).ncols();
        let mut out = Array2::zeros((rows.len(), width));
        for (i, &r) in rows.iter().enumerate() {
            let v = self.value(r);
            if v.dim() != (1, width) {
                return Err(Error::invalid("stack_rows expects equal-width single rows"));
            }
            out.row_mut(i).assign(&v.row(0));
        }
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm >= MIN_ROW_NORM) {
                return Err(Error::DegenerateEmbedding { row: i, norm });
            }
            row /= norm;
        }
        Ok(self.push(out, Op::NormalizeRows(a)))
    }

    /// `Z Zᵀ`.
    pub fn gram(&mut self, z: Var) -> Var {
        let out = loss::similarity_matrix(self.value(z));
        self.push(out, Op::Gram(z))
    }

    pub fn masked_weights(&mut self, s: Var, mask: Matrix) -> Result<Var> {
        if self.value(s).dim() != mask.dim() {
            return Err(Error::invalid("mask shape mismatch"));
        }
        let out = loss::soft_weights(self.value(s), &mask);
        Ok(self.push(
            out,
            Op::MaskedWeights {
                s,
                mask: Arc::new(mask),
            },
        ))
    }

    /// Normalized Laplacian of a nonnegative symmetric weight matrix.
    pub fn laplacian(&mut self, w: Var) -> Result<Var> {
        let out = loss::normalized_laplacian(self.value(w))?;
        Ok(self.push(out, Op::Laplacian(w)))
    }

    pub fn sq_frob_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::invalid("sq_frob_diff shape mismatch"));
        }
        let out = scalar(loss::spec_match_loss(self.value(a), self.value(b)));
        Ok(self.push(out, Op::SqFrobDiff(a, b)))
    }

    pub fn info_nce(&mut self, z1: Var, z2: Var, tau: f64) -> Result<Var> {
        let out = scalar(loss::info_nce(self.value(z1), self.value(z2), tau)?);
        Ok(self.push(out, Op::InfoNce { z1, z2, tau }))
    }

    /// `Σ c_k x_k` over scalars.
    pub fn linear_combination(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, c) in terms {
            if self.value(v).dim() != (1, 1) {
                return Err(Error::invalid("linear_combination expects scalars"));
            }
            total += c * self.scalar_value(v);
        }
        Ok(self.push(scalar(total), Op::LinearCombination(terms.to_vec())))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = scalar(self.value(a).iter().map(|x| x * x).sum());
        self.push(out, Op::SumSquares(a))
    }

    /// Hash of every piecewise-selection decision made during the forward
    /// pass (ReLU signs, adjacency masks, zero-degree nodes). Two passes with
    /// equal signatures evaluated the same smooth branch.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for x in self.value(*a).iter() {
                        (*x > 0.0).hash(&mut h);
                    }
                }
                Op::MaskedWeights { s, mask } => {
                    for (x, m) in self.value(*s).iter().zip(mask.iter()) {
                        (*m > 0.0).hash(&mut h);
                        (x * m > 0.0).hash(&mut h);
                    }
                }
                Op::Laplacian(w) => {
                    for d in self.value(*w).sum_axis(Axis(1)).iter() {
                        (*d > 0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        if self.value(output).dim() != (1, 1) {
            return Err(Error::invalid("backward needs a scalar output"));
        }
        self.backward_from(output, scalar(1.0))
    }

    /// Reverse sweep seeded with an upstream gradient for `output`.
    pub fn backward_from(&self, output: Var, seed: Matrix) -> Result<Grads> {
        if self.value(output).dim() != seed.dim() {
            return Err(Error::invalid("seed gradient shape differs from output"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { per_node: grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(&mut grads[a.0], g.dot(&vb.t()));
                accumulate(&mut grads[b.0], va.t().dot(g));
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
            Op::Relu(a) => {
                let va = self.value(*a);
                let mut ga = g.clone();
                ga.zip_mut_with(va, |gx, &x| {
                    if x <= 0.0 {
                        *gx = 0.0;
                    }
                });
                accumulate(&mut grads[a.0], ga);
            }
            Op::GinAggregate { h, eps, neighbors } => {
                let vh = self.value(*h);
                let one_plus_eps = 1.0 + self.scalar_value(*eps);
                // The neighbor sum is self-adjoint for undirected graphs.
                accumulate(&mut grads[h.0], aggregate(g, neighbors, one_plus_eps));
                let geps: f64 = g.iter().zip(vh.iter()).map(|(a, b)| a * b).sum();
                accumulate(&mut grads[eps.0], scalar(geps));
            }
            Op::SumRows(a) => {
                let rows = self.value(*a).nrows();
                let ga = g.broadcast((rows, g.ncols())).expect("row broadcast").to_owned();
                accumulate(&mut grads[a.0], ga);
            }
            Op::StackRows(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    accumulate(&mut grads[r.0], g.slice(s![i..i + 1, ..]).to_owned());
                }
            }
            Op::NormalizeRows(a) => {
                let vx = self.value(*a);
                let y = &node.value;
                let mut ga = Array2::zeros(vx.dim());
                for i in 0..vx.nrows() {
                    let norm = vx.row(i).dot(&vx.row(i)).sqrt();
                    let proj = y.row(i).dot(&g.row(i));
                    let gi = (&g.row(i) - &(&y.row(i) * proj)) / norm;
                    ga.row_mut(i).assign(&gi);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Gram(z) => {
                let sym = g + &g.t();
                accumulate(&mut grads[z.0], sym.dot(self.value(*z)));
            }
            Op::MaskedWeights { s, mask } => {
                let vs = self.value(*s);
                let gs = Array2::from_shape_fn(vs.dim(), |(i, j)| {
                    let m = mask[[i, j]];
                    if vs[[i, j]] * m > 0.0 {
                        g[[i, j]] * m
                    } else {
                        0.0
                    }
                });
                accumulate(&mut grads[s.0], gs);
            }
            Op::Laplacian(w) => {
                accumulate(&mut grads[w.0], laplacian_backward(self.value(*w), g));
            }
            Op::SqFrobDiff(a, b) => {
                let diff = (self.value(*a) - self.value(*b)) * (2.0 * g[[0, 0]]);
                accumulate(&mut grads[b.0], -&diff);
                accumulate(&mut grads[a.0], diff);
            }
            Op::InfoNce { z1, z2, tau } => {
                let (g1, g2) = info_nce_backward(self.value(*z1), self.value(*z2), *tau);
                accumulate(&mut grads[z1.0], g1 * g[[0, 0]]);
                accumulate(&mut grads[z2.0], g2 * g[[0, 0]]);
            }
            Op::LinearCombination(terms) => {
                for (v, c) in terms {
                    accumulate(&mut grads[v.0], scalar(c * g[[0, 0]]));
                }
            }
            Op::SumSquares(a) => {
                accumulate(&mut grads[a.0], self.value(*a) * (2.0 * g[[0, 0]]));
            }
        }
    }
}

fn aggregate(h: &Matrix, neighbors: &[Vec<usize>], one_plus_eps: f64) -> Matrix {
    let mut out = h * one_plus_eps;
    let mut buf = Vec::new();
    for (n, nbrs) in neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        for j in 0..h.ncols() {
            buf.clear();
            buf.extend(nbrs.iter().map(|&m| h[[m, j]]));
            out[[n, j]] += canonical_sum(&mut buf);
        }
    }
    out
}

/// Gradient of `L = I - D^{-1/2} W D^{-1/2}` (with `D = diag(W 1)`) with
/// respect to every entry of `W`, given the upstream gradient `gl`.
fn laplacian_backward(w: &Matrix, gl: &Matrix) -> Matrix {
    let n = w.nrows();
    let degrees = w.sum_axis(Axis(1));
    let r = degrees.mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    // K = L's off-identity part; dK = -dL.
    let mut gw = Array2::zeros((n, n));
    let mut gr = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let gk = -gl[[i, j]];
            gw[[i, j]] += gk * r[i] * r[j];
            gr[i] += gk * w[[i, j]] * r[j];
            gr[j] += gk * r[i] * w[[i, j]];
        }
    }
    for i in 0..n {
        if degrees[i] > 0.0 {
            let gd = -0.5 * gr[i] * r[i] * r[i] * r[i];
            for j in 0..n {
                gw[[i, j]] += gd;
            }
        }
    }
    gw
}

/// Gradients of `ℒ_C` with respect to both embedding matrices.
fn info_nce_backward(z1: &Matrix, z2: &Matrix, tau: f64) -> (Matrix, Matrix) {
    let n = z1.nrows();
    let u = ndarray::concatenate(Axis(0), &[z1.view(), z2.view()]).expect("same width");
    let sim = loss::similarity_matrix(&u);
    let m = 2 * n;
    let mut dsim = Array2::zeros((m, m));
    for r in 0..m {
        let pos = (r + n) % m;
        let max = (0..m)
            .filter(|&c| c != r)
            .map(|c| sim[[r, c]] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..m)
            .filter(|&c| c != r)
            .map(|c| (sim[[r, c]] / tau - max).exp())
            .sum();
        for c in (0..m).filter(|&c| c != r) {
            let p = (sim[[r, c]] / tau - max).exp() / total;
            let target = if c == pos { 1.0 } else { 0.0 };
            dsim[[r, c]] = (p - target) / tau;
        }
    }
    let sym = &dsim + &dsim.t();
    let gu = sym.dot(&u);
    (
        gu.slice(s![..n, ..]).to_owned(),
        gu.slice(s![n.., ..]).to_owned(),
    )
}
