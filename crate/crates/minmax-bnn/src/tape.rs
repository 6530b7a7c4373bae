//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation records its inputs and enough saved state to run its
//! adjoint. `backward` walks the tape once in reverse; because the tape is
//! SSA (consumers always come after producers) each node's gradient is
//! complete when visited. A tape can be differentiated once: afterwards it
//! only serves value lookups.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, CholeskyFactor};
use crate::tensor::{self, ConvSpec, Tensor};

/// Handle to a value on a tape.
#[derive(Debug, Copy, Clone)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Softplus(usize),
    AddColVec(usize, usize),
    ConcatCols(usize, usize),
    SelectCols(usize, Vec<usize>),
    L2NormalizeCols {
        src: usize,
        norms: Vec<f64>,
    },
    AddEye(usize),
    LogdetPd {
        src: usize,
        factor: CholeskyFactor,
    },
    SumAll(usize),
    MeanAll(usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        spec: ConvSpec,
    },
    GlobalAvgPool(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients keyed by tape variable, produced by `Tape::backward`.
#[derive(Debug)]
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_node[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input; backward never propagates into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::hadamard(self.value(a), self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = tensor::scale(self.value(a), c);
        let rg = self.needs(a.0);
        self.push(v, Op::Scale(a.0, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::Matmul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = tensor::transpose(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::Transpose(a.0), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = tensor::relu(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::Relu(a.0), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = tensor::softplus(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::Softplus(a.0), rg)
    }

    pub fn add_col_vec(&mut self, mat: Var, vec: Var) -> Result<Var> {
        let v = tensor::add_col_vec(self.value(mat), self.value(vec))?;
        let rg = self.needs(mat.0) || self.needs(vec.0);
        Ok(self.push(v, Op::AddColVec(mat.0, vec.0), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::concat_cols(self.value(a), self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(v, Op::ConcatCols(a.0, b.0), rg))
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = tensor::select_cols(self.value(a), idx);
        let rg = self.needs(a.0);
        self.push(v, Op::SelectCols(a.0, idx.to_vec()), rg)
    }

    pub fn l2_normalize_cols(&mut self, a: Var) -> Result<Var> {
        let (v, norms) = tensor::l2_normalize_cols(self.value(a))?;
        let rg = self.needs(a.0);
        Ok(self.push(v, Op::L2NormalizeCols { src: a.0, norms }, rg))
    }

    pub fn add_eye(&mut self, a: Var) -> Result<Var> {
        let v = tensor::add_eye(self.value(a))?;
        let rg = self.needs(a.0);
        Ok(self.push(v, Op::AddEye(a.0), rg))
    }

    /// Log-determinant of a symmetric positive-definite matrix. The Cholesky
    /// factor is kept for the adjoint, which is `g * A^{-1}`.
    pub fn logdet_pd(&mut self, a: Var) -> Result<Var> {
        let factor = cholesky(self.value(a))?;
        let v = Tensor::scalar(factor.logdet());
        let rg = self.needs(a.0);
        Ok(self.push(v, Op::LogdetPd { src: a.0, factor }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = tensor::sum_all(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::SumAll(a.0), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = tensor::mean_all(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::MeanAll(a.0), rg)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let v = tensor::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            &spec,
        )?;
        let rg = self.needs(input.0) || self.needs(weight.0) || self.needs(bias.0);
        Ok(self.push(
            v,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                spec,
            },
            rg,
        ))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let v = tensor::global_avg_pool(self.value(a));
        let rg = self.needs(a.0);
        self.push(v, Op::GlobalAvgPool(a.0), rg)
    }

    /// Reverse pass from a scalar loss. Consumes the tape's ability to
    /// differentiate; values remain readable.
    pub fn backward(&mut self, loss: Var) -> Result<Grads> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // leaf gradients are the output, keep them
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Grads { by_node: grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) -> Result<()> {
        match &mut grads[idx] {
            Some(existing) => {
                *existing = tensor::add(existing, &delta)?;
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaves are skipped by backward"),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, tensor::scale(g, -1.0))?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, tensor::hadamard(g, &self.nodes[*b].value)?)?;
                }
                if self.needs(*b) {
                    Self::accumulate(grads, *b, tensor::hadamard(g, &self.nodes[*a].value)?)?;
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, tensor::scale(g, *c))?;
                }
            }
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let bt = tensor::transpose(&self.nodes[*b].value);
                    Self::accumulate(grads, *a, tensor::matmul(g, &bt)?)?;
                }
                if self.needs(*b) {
                    let at = tensor::transpose(&self.nodes[*a].value);
                    Self::accumulate(grads, *b, tensor::matmul(&at, g)?)?;
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, tensor::transpose(g))?;
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let src = &self.nodes[*a].value;
                    let mut d = g.clone();
                    for (dv, &x) in d.data_mut().iter_mut().zip(src.data()) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    Self::accumulate(grads, *a, d)?;
                }
            }
            Op::Softplus(a) => {
                if self.needs(*a) {
                    let src = &self.nodes[*a].value;
                    let mut d = g.clone();
                    for (dv, &x) in d.data_mut().iter_mut().zip(src.data()) {
                        *dv *= tensor::logistic(x);
                    }
                    Self::accumulate(grads, *a, d)?;
                }
            }
            Op::AddColVec(mat, vec) => {
                if self.needs(*mat) {
                    Self::accumulate(grads, *mat, g.clone())?;
                }
                if self.needs(*vec) {
                    Self::accumulate(grads, *vec, tensor::row_sums(g))?;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let cb = self.nodes[*b].value.cols();
                if self.needs(*a) {
                    let idx: Vec<usize> = (0..ca).collect();
                    Self::accumulate(grads, *a, tensor::select_cols(g, &idx))?;
                }
                if self.needs(*b) {
                    let idx: Vec<usize> = (ca..ca + cb).collect();
                    Self::accumulate(grads, *b, tensor::select_cols(g, &idx))?;
                }
            }
            Op::SelectCols(a, idx) => {
                if self.needs(*a) {
                    let mut d = Tensor::zeros(self.nodes[*a].value.shape());
                    tensor::scatter_add_cols(&mut d, idx, g);
                    Self::accumulate(grads, *a, d)?;
                }
            }
            Op::L2NormalizeCols { src, norms } => {
                if self.needs(*src) {
                    // y = x / n; dx_j = (g_j - y_j <y_j, g_j>) / n_j
                    let y = &self.nodes[i].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut d = Tensor::zeros(&[r, c]);
                    #[allow(clippy::needless_range_loop)] // paired column walk
                    for j in 0..c {
                        let mut dot = 0.0;
                        for rr in 0..r {
                            dot += y.at2(rr, j) * g.at2(rr, j);
                        }
                        let inv = 1.0 / norms[j];
                        for rr in 0..r {
                            let v = (g.at2(rr, j) - y.at2(rr, j) * dot) * inv;
                            d.set2(rr, j, v);
                        }
                    }
                    Self::accumulate(grads, *src, d)?;
                }
            }
            Op::AddEye(a) => {
                if self.needs(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
            }
            Op::LogdetPd { src, factor } => {
                if self.needs(*src) {
                    let inv = factor.inverse();
                    Self::accumulate(grads, *src, tensor::scale(&inv, g.item()))?;
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let d = Tensor::filled(self.nodes[*a].value.shape(), g.item());
                    Self::accumulate(grads, *a, d)?;
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let n = self.nodes[*a].value.len() as f64;
                    let d = Tensor::filled(self.nodes[*a].value.shape(), g.item() / n);
                    Self::accumulate(grads, *a, d)?;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let need_dinput = self.needs(*input);
                let (dinput, dw, dbias) = tensor::conv2d_backward(
                    &self.nodes[*input].value,
                    &self.nodes[*weight].value,
                    g,
                    spec,
                    need_dinput,
                )?;
                if let Some(dinput) = dinput {
                    Self::accumulate(grads, *input, dinput)?;
                }
                if self.needs(*weight) {
                    Self::accumulate(grads, *weight, dw)?;
                }
                if self.needs(*bias) {
                    Self::accumulate(grads, *bias, dbias)?;
                }
            }
            Op::GlobalAvgPool(a) => {
                if self.needs(*a) {
                    let d = tensor::global_avg_pool_backward(g, &self.nodes[*a].value);
                    Self::accumulate(grads, *a, d)?;
                }
            }
        }
        Ok(())
    }
}
