//! Differentiable primitives and a reverse-mode tape over dense matrices.
//!
//! Each primitive comes as a forward function and a backward function that
//! maps an upstream gradient to gradients of the inputs. [`Tape`] records the
//! encoder's forward pass so the backward pass replays the recorded
//! operations in exact reverse order.

use crate::dense::{dot, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Rows whose Euclidean norm falls below this are treated as collapsed.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// `P · H`, the neighbourhood aggregation step.
pub fn sparse_propagate(p: &CsrMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
    p.mul_dense(h)
}

/// Gradient of [`sparse_propagate`] with respect to `H`: `Pᵀ · G`.
pub fn sparse_propagate_backward(p: &CsrMatrix, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
    p.transpose_mul_dense(grad_out)
}

/// `H · W`, the weight application of a GCN layer.
pub fn dense_affine(h: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    h.matmul(w)
}

/// Gradients of [`dense_affine`]: `(G · Wᵀ, Hᵀ · G)`.
pub fn dense_affine_backward(
    h: &DenseMatrix,
    w: &DenseMatrix,
    grad_out: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    Ok((grad_out.matmul_transposed(w)?, h.transpose_matmul(grad_out)?))
}

pub fn relu(h: &DenseMatrix) -> DenseMatrix {
    let mut out = h.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of [`relu`]; the subgradient at exactly zero is zero.
pub fn relu_backward(input: &DenseMatrix, grad_out: &DenseMatrix) -> Result<DenseMatrix> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape("relu gradient shape differs from input".into()));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Row-normalized copy of `m` together with the original row norms.
pub fn normalize_rows(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if !(n >= MIN_ROW_NORM) {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pairwise cosine similarities between the rows of `U` and the rows of `V`,
/// with the normalized operands kept for the backward pass.
#[derive(Clone, Debug)]
pub struct CosineSim {
    u_hat: DenseMatrix,
    v_hat: DenseMatrix,
    u_norms: Vec<f64>,
    v_norms: Vec<f64>,
    sims: DenseMatrix,
}

impl CosineSim {
    pub fn forward(u: &DenseMatrix, v: &DenseMatrix) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(Error::Shape(format!(
                "cosine similarity between widths {} and {}",
                u.cols(),
                v.cols()
            )));
        }
        let (u_hat, u_norms) = normalize_rows(u)?;
        let (v_hat, v_norms) = normalize_rows(v)?;
        let sims = u_hat.matmul_transposed(&v_hat)?;
        Ok(Self {
            u_hat,
            v_hat,
            u_norms,
            v_norms,
            sims,
        })
    }

    pub fn sims(&self) -> &DenseMatrix {
        &self.sims
    }

    pub fn into_sims(self) -> DenseMatrix {
        self.sims
    }

    /// Row-normalized `U`.
    pub fn u_hat(&self) -> &DenseMatrix {
        &self.u_hat
    }

    pub fn u_norms(&self) -> &[f64] {
        &self.u_norms
    }

    /// Gradients with respect to `U` and `V` given `∂L/∂sims`.
    ///
    /// With `û = u/‖u‖`, `∂cos(u,v)/∂u = (v̂ − cos·û)/‖u‖`.
    pub fn backward(&self, grad: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        if grad.shape() != self.sims.shape() {
            return Err(Error::Shape("cosine gradient shape differs from output".into()));
        }
        let mut du = grad.matmul(&self.v_hat)?;
        for i in 0..du.rows() {
            let s = dot(grad.row(i), self.sims.row(i));
            let inv = 1.0 / self.u_norms[i];
            for (d, &uh) in du.row_mut(i).iter_mut().zip(self.u_hat.row(i)) {
                *d = (*d - s * uh) * inv;
            }
        }
        let mut dv = grad.transpose_matmul(&self.u_hat)?;
        let mut col_s = vec![0.0; self.sims.cols()];
        for i in 0..grad.rows() {
            for ((c, &g), &s) in col_s.iter_mut().zip(grad.row(i)).zip(self.sims.row(i)) {
                *c += g * s;
            }
        }
        for (j, &s) in col_s.iter().enumerate() {
            let inv = 1.0 / self.v_norms[j];
            for (d, &vh) in dv.row_mut(j).iter_mut().zip(self.v_hat.row(j)) {
                *d = (*d - s * vh) * inv;
            }
        }
        Ok((du, dv))
    }
}

/// Entry `(i, j)` is `u_i·v_j / (‖u_i‖‖v_j‖)`.
pub fn cosine_sim_matrix(u: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    CosineSim::forward(u, v).map(CosineSim::into_sims)
}

/// Gradients of [`cosine_sim_matrix`] with respect to `U` and `V`.
pub fn cosine_sim_backward(
    u: &DenseMatrix,
    v: &DenseMatrix,
    grad_out: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    CosineSim::forward(u, v)?.backward(grad_out)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    Propagate { matrix: &'a CsrMatrix, input: usize },
    Affine { input: usize, weight: usize },
    Relu { input: usize },
}

#[derive(Debug)]
struct Node<'a> {
    value: DenseMatrix,
    op: Op<'a>,
    requires_grad: bool,
}

/// Ordered record of primitive applications with the inputs each backward step needs.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseMatrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable input; backward reports its gradient.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn propagate(&mut self, matrix: &'a CsrMatrix, input: Var) -> Result<Var> {
        let value = sparse_propagate(matrix, self.value(input))?;
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(value, Op::Propagate { matrix, input: input.0 }, rg))
    }

    pub fn affine(&mut self, input: Var, weight: Var) -> Result<Var> {
        let value = dense_affine(self.value(input), self.value(weight))?;
        let rg = self.nodes[input.0].requires_grad || self.nodes[weight.0].requires_grad;
        Ok(self.push(
            value,
            Op::Affine {
                input: input.0,
                weight: weight.0,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = relu(self.value(input));
        let rg = self.nodes[input.0].requires_grad;
        self.push(value, Op::Relu { input: input.0 }, rg)
    }

    /// Propagates the seed gradients backwards through every recorded operation.
    pub fn backward(&self, seeds: Vec<(Var, DenseMatrix)>) -> Result<Gradients> {
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.nodes[v.0].value.shape() {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} for a {:?} value",
                    g.shape(),
                    self.nodes[v.0].value.shape()
                )));
            }
            accumulate(&mut grads[v.0], g)?;
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match (&node.op, &grads[idx]) {
                (Op::Leaf, _) | (_, None) => continue,
                (_, Some(_)) => grads[idx].take().expect("checked above"),
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Propagate { matrix, input } => {
                    if self.nodes[input].requires_grad {
                        let gi = sparse_propagate_backward(matrix, &g)?;
                        accumulate(&mut grads[input], gi)?;
                    }
                }
                Op::Affine { input, weight } => {
                    let x = &self.nodes[input].value;
                    let w = &self.nodes[weight].value;
                    if self.nodes[input].requires_grad {
                        accumulate(&mut grads[input], g.matmul_transposed(w)?)?;
                    }
                    if self.nodes[weight].requires_grad {
                        accumulate(&mut grads[weight], x.transpose_matmul(&g)?)?;
                    }
                }
                Op::Relu { input } => {
                    if self.nodes[input].requires_grad {
                        let gi = relu_backward(&self.nodes[input].value, &g)?;
                        accumulate(&mut grads[input], gi)?;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
