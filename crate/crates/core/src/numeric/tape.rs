//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive in execution order together with its
//! output value. [`Tape::backward`] walks the records once in strict reverse
//! order, so gradients for identical tapes are bitwise identical.

use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::numeric::DenseMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity used between graph-convolution layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// `max(x, 0)`, with derivative 0 at `x = 0`.
    #[default]
    Relu,
    Tanh,
    /// No nonlinearity; turns the network into a multilinear map.
    Identity,
}

impl Activation {
    pub fn apply(self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Identity => x.clone(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    Spmm(&'g CsrMatrix, Var),
    AddBias(Var, Var),
    Activate(Activation, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Scale(Var, f64),
    Add(Var, Var),
    Sub(Var, Var),
    SquareMean(Var),
}

struct Node<'g> {
    op: Op<'g>,
    value: DenseMatrix,
    requires_grad: bool,
}

/// Recording of a forward computation.
///
/// The `'g` lifetime ties sparse propagation records to the graph operator
/// they reference.
#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
    params: Vec<Var>,
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<'g>, value: DenseMatrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether gradients flow back through `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.params.push(v);
        v
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// Sparse propagation `operator · x`. The backward pass multiplies by
    /// the same operator, which is exact because mesh operators are
    /// symmetric.
    pub fn spmm(&mut self, operator: &'g CsrMatrix, x: Var) -> Result<Var> {
        let value = operator.spmm(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(Op::Spmm(operator, x), value, rg))
    }

    /// Adds a `1 × cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_broadcast(self.value(bias))?;
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddBias(x, bias), value, rg))
    }

    pub fn activate(&mut self, act: Activation, x: Var) -> Var {
        let value = act.apply(self.value(x));
        let rg = self.needs(x);
        self.push(Op::Activate(act, x), value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(Activation::Relu, x)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::hconcat(&values)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).slice_cols(start, end)?;
        let rg = self.needs(x);
        Ok(self.push(Op::SliceCols(x, start, end), value, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        let rg = self.needs(x);
        self.push(Op::Scale(x, factor), value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    /// Mean of squared entries, as a `1 × 1` matrix.
    pub fn square_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mean = xv.data().iter().map(|v| v * v).sum::<f64>() / xv.len() as f64;
        let rg = self.needs(x);
        self.push(Op::SquareMean(x), DenseMatrix::from_vec_unchecked(1, 1, vec![mean]), rg)
    }

    /// Sign pattern (`input > 0`) of every recorded relu, concatenated in
    /// tape order. Two evaluations with equal patterns lie on the same
    /// linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Activate(Activation::Relu, x) = node.op {
                pattern.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::dims("backward", "1x1 loss", format!("{}x{}", lv.rows(), lv.cols())));
        }
        let mut adj: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul_nt(self.value(*b))?;
                        accumulate(&mut adj, *a, ga)?;
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        accumulate(&mut adj, *b, gb)?;
                    }
                }
                Op::Spmm(op, x) => {
                    let gx = op.spmm(&g)?;
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::AddBias(x, bias) => {
                    if self.needs(*bias) {
                        accumulate(&mut adj, *bias, g.column_sums())?;
                    }
                    if self.needs(*x) {
                        accumulate(&mut adj, *x, g)?;
                    }
                }
                Op::Activate(act, x) => {
                    let gx = match act {
                        Activation::Relu => {
                            let input = self.value(*x);
                            let data = g
                                .data()
                                .iter()
                                .zip(input.data())
                                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                                .collect();
                            DenseMatrix::from_vec_unchecked(g.rows(), g.cols(), data)
                        }
                        Activation::Tanh => {
                            let out = &node.value;
                            let data = g
                                .data()
                                .iter()
                                .zip(out.data())
                                .map(|(&gv, &y)| gv * (1.0 - y * y))
                                .collect();
                            DenseMatrix::from_vec_unchecked(g.rows(), g.cols(), data)
                        }
                        Activation::Identity => g,
                    };
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.value(p).cols();
                        if self.needs(p) {
                            accumulate(&mut adj, p, g.slice_cols(start, start + width)?)?;
                        }
                        start += width;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let xv = self.value(*x);
                    let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        gx.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut adj, *x, g.scale(*factor))?;
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g.scale(-1.0))?;
                    }
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g)?;
                    }
                }
                Op::SquareMean(x) => {
                    let xv = self.value(*x);
                    let factor = 2.0 * g.get(0, 0) / xv.len() as f64;
                    accumulate(&mut adj, *x, xv.scale(factor))?;
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|p| {
                adj[p.0]
                    .take()
                    .unwrap_or_else(|| DenseMatrix::zeros(self.value(*p).rows(), self.value(*p).cols()))
            })
            .collect();
        Ok(Gradients {
            params: self.params.clone(),
            grads,
        })
    }
}

fn accumulate(adj: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar with respect to every parameter recorded on the
/// tape, in registration order. Parameters the loss does not depend on
/// carry zero matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Var>,
    grads: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, param: Var) -> Option<&DenseMatrix> {
        self.params.iter().position(|&p| p == param).map(|i| &self.grads[i])
    }

    /// Gradients in parameter registration order.
    pub fn into_vec(self) -> Vec<DenseMatrix> {
        self.grads
    }

    pub fn as_slice(&self) -> &[DenseMatrix] {
        &self.grads
    }
}
