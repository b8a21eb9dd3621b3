//! A minimal reverse-mode tape over [`Matrix`] values.
//!
//! Only the operations the tissue-graph model needs are recorded. Nodes are
//! appended in evaluation order, so a single reverse sweep over the tape is a
//! valid topological order for backpropagation.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ModelParameters, ParamId};
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Neighbour lists of a graph, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes || a == b {
                return Err(Error::InvalidInput(format!(
                    "edge ({a}, {b}) invalid for {num_nodes} nodes"
                )));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Aggregate(Var, Rc<Adjacency>),
    Concat(Vec<Var>),
    MeanRows(Var),
    Element(Var, usize, usize),
    WeightedCe {
        logits: Var,
        probs: Matrix,
        targets: Vec<Option<usize>>,
        weights: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Tape(format!("variable {} is not on this tape", v.0)))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (used for attribution).
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Records a model parameter; frozen parameters are recorded as
    /// constants. Repeated calls return the same variable.
    pub fn param(&mut self, params: &ModelParameters, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = params.is_trainable(id);
        let v = self.push(params.value(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.node(a)?.value.add_row(&self.node(bias)?.value)?;
        let rg = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.node(a)?.value.add(&self.node(b)?.value)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.node(a)?.value.scale(s);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.map(|v| v.max(0.0));
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Relu(a), rg))
    }

    /// Multiplies elementwise by a fixed mask (entries `0` or `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let src = &self.node(a)?.value;
        if mask.len() != src.data().len() {
            return Err(Error::Shape("dropout mask size".into()));
        }
        let value = Matrix::from_vec(
            src.rows(),
            src.cols(),
            src.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    /// Mean-neighbour aggregation `h(v) + mean_{u∈N(v)} h(u)`; the neighbour
    /// term of an isolated node is zero.
    pub fn aggregate(&mut self, a: Var, adj: &Rc<Adjacency>) -> Result<Var> {
        let h = &self.node(a)?.value;
        if h.rows() != adj.num_nodes() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                h.rows(),
                adj.num_nodes()
            )));
        }
        let mut out = h.clone();
        for v in 0..h.rows() {
            let nb = adj.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let mut acc = vec![0.0; h.cols()];
            for &u in nb {
                for (s, x) in acc.iter_mut().zip(h.row(u)) {
                    *s += x;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            for (o, s) in out.row_mut(v).iter_mut().zip(&acc) {
                *o += s * inv;
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Aggregate(a, Rc::clone(adj)), rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts
            .iter()
            .map(|&p| self.node(p).map(|n| &n.value))
            .collect::<Result<_>>()?;
        let value = Matrix::hcat(&mats)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.node(a)?.value.mean_rows()?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    /// The single entry `(r, c)` as a `1 × 1` value.
    pub fn element(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let m = &self.node(a)?.value;
        if r >= m.rows() || c >= m.cols() {
            return Err(Error::Shape(format!("element ({r}, {c}) of {:?}", m.shape())));
        }
        let value = Matrix::row_vector(vec![m.get(r, c)]);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Element(a, r, c), rg))
    }

    /// Mean over rows with a target of `-w[t] · ln softmax(z)[t]`; rows with
    /// no target are skipped. With no labelled row the loss is zero.
    pub fn weighted_ce(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        weights: &[f64],
    ) -> Result<Var> {
        let z = &self.node(logits)?.value;
        if targets.len() != z.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                z.rows()
            )));
        }
        if weights.len() != z.cols() {
            return Err(Error::Shape(format!(
                "{} class weights for {} classes",
                weights.len(),
                z.cols()
            )));
        }
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..z.rows() {
            let row = z.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            for (c, v) in row.iter().enumerate() {
                probs.set(r, c, ((v - max) - log_sum).exp());
            }
            if let Some(t) = targets[r] {
                if t >= z.cols() {
                    return Err(Error::InvalidInput(format!("target class {t} out of range")));
                }
                total += weights[t] * (log_sum - (row[t] - max));
                count += 1;
            }
        }
        let value = Matrix::row_vector(vec![if count > 0 { total / count as f64 } else { 0.0 }]);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            value,
            Op::WeightedCe {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward called before any forward pass".into()));
        }
        let root = self.node(loss)?;
        if root.value.shape() != (1, 1) {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::row_vector(vec![1.0]));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing
                    .add_assign(&g)
                    .expect("gradient shape matches its value"),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let live = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    if live(a) {
                        acc(&mut grads, *a, g.matmul_t(&self.nodes[b.0].value)?);
                    }
                    if live(b) {
                        acc(&mut grads, *b, self.nodes[a.0].value.t_matmul(&g)?);
                    }
                }
                Op::AddRow(a, b) => {
                    if live(b) {
                        acc(&mut grads, *b, g.sum_rows());
                    }
                    if live(a) {
                        acc(&mut grads, *a, g.clone());
                    }
                }
                Op::Add(a, b) => {
                    if live(b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    if live(a) {
                        acc(&mut grads, *a, g.clone());
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Dropout(a, mask) => {
                    let d = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    acc(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), d)?);
                }
                Op::Aggregate(a, adj) => {
                    let mut out = g.clone();
                    for v in 0..g.rows() {
                        let nb = adj.neighbors(v);
                        if nb.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / nb.len() as f64;
                        for &u in nb {
                            for c in 0..g.cols() {
                                let cur = out.get(u, c);
                                out.set(u, c, cur + g.get(v, c) * inv);
                            }
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.nodes[p.0].value.cols();
                        if live(p) {
                            let mut part = Matrix::zeros(g.rows(), cols);
                            for r in 0..g.rows() {
                                part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                            }
                            acc(&mut grads, *p, part);
                        }
                        offset += cols;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[a.0].value.rows();
                    let mut out = Matrix::zeros(rows, g.cols());
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, gv) in out.row_mut(r).iter_mut().zip(g.data()) {
                            *o = gv * inv;
                        }
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Element(a, r, c) => {
                    let (rows, cols) = self.nodes[a.0].value.shape();
                    let mut out = Matrix::zeros(rows, cols);
                    out.set(*r, *c, g.get(0, 0));
                    acc(&mut grads, *a, out);
                }
                Op::WeightedCe {
                    logits,
                    probs,
                    targets,
                    weights,
                    count,
                } => {
                    let mut out = Matrix::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let seed = g.get(0, 0) / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            let scale = seed * weights[t];
                            for c in 0..probs.cols() {
                                let ind = if c == t { 1.0 } else { 0.0 };
                                out.set(r, c, scale * (probs.get(r, c) - ind));
                            }
                        }
                    }
                    acc(&mut grads, *logits, out);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(&id, &v)| (id, v)).collect(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter recorded on the tape; frozen
    /// parameters are absent.
    pub fn into_param_grads(self, params: &ModelParameters) -> ParamGrads {
        let mut out = ParamGrads::new(params.len());
        for (id, v) in self.params {
            if !params.is_trainable(id) {
                continue;
            }
            let g = self
                .grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| {
                    let (r, c) = params.value(id).shape();
                    Matrix::zeros(r, c)
                });
            out.grads[id.0] = Some(g);
        }
        out
    }
}

/// Per-parameter gradients indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn new(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub fn set(&mut self, id: ParamId, g: Matrix) {
        self.grads[id.0] = Some(g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    /// `self += scale · other`.
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) -> Result<()> {
        if other.grads.len() != self.grads.len() {
            return Err(Error::Shape("gradient sets of different models".into()));
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(t) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += scale * b;
                    }
                }
                None => *mine = Some(t.scale(scale)),
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
