//! Shared-weight GCN encoder producing the local (`Â`) and global (`S`) views.
//!
//! Layer `l` computes `H⁽ˡ⁾ = act(P · H⁽ˡ⁻¹⁾ · W_l)` with `P ∈ {Â, S}`. The
//! same weights serve both views; the first layer's `X · W_1` is computed once
//! and propagated by each operator.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::grad::{Tape, Var, MIN_ROW_NORM};
use crate::graph::Graph;
use crate::rng::{substream, Purpose};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Applied after every layer except the last (unless `final_activation`).
    pub activation: Activation,
    pub final_activation: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 1,
            activation: Activation::Relu,
            final_activation: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(
                "encoder hidden width and layer count must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn activates(&self, layer: usize) -> bool {
        self.activation == Activation::Relu && (layer + 1 < self.layers || self.final_activation)
    }
}

/// Layer weights `W_1 (d×k), W_2..W_L (k×k)` and the seed they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub weights: Vec<DenseMatrix>,
    pub seed: u64,
}

/// Glorot-uniform initialization in `±√(6 / (fan_in + fan_out))`.
pub fn init_params(d: usize, k: usize, layers: usize, seed: u64) -> Result<EncoderParams> {
    if d == 0 || k == 0 || layers == 0 {
        return Err(Error::Config("encoder dimensions must be >= 1".into()));
    }
    let weights = (0..layers)
        .map(|l| {
            let fan_in = if l == 0 { d } else { k };
            let bound = (6.0 / (fan_in + k) as f64).sqrt();
            let mut rng = substream(seed, Purpose::Init, l as u64);
            let data = (0..fan_in * k).map(|_| rng.gen_range(-bound..=bound)).collect();
            DenseMatrix::new(fan_in, k, data).expect("sized by construction")
        })
        .collect();
    Ok(EncoderParams { weights, seed })
}

impl EncoderParams {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, DenseMatrix::rows)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, DenseMatrix::cols)
    }

    fn check_chain(&self) -> Result<()> {
        for (l, w) in self.weights.windows(2).enumerate() {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} columns but layer {} expects {}",
                    l,
                    w[0].cols(),
                    l + 1,
                    w[1].rows()
                )));
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("encoder weights contain non-finite values".into()));
        }
        Ok(())
    }

    /// Checkpoint layout, all little-endian: `L: u64`, `L + 1` layer widths as
    /// `u64`, `seed: u64`, then each weight matrix row-major as `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.layers() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.input_dim() as u64).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&(w.cols() as u64).to_le_bytes());
        }
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for w in &self.weights {
            for v in w.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let mut next_u64 = |buf: &[u8]| -> Result<u64> {
            let bytes = buf
                .get(pos..pos + 8)
                .ok_or_else(|| Error::Validation(format!("{}: truncated checkpoint", path.display())))?;
            pos += 8;
            Ok(u64::from_le_bytes(bytes.try_into().expect("eight bytes")))
        };
        let layers = next_u64(&buf)? as usize;
        if layers == 0 || layers > 1024 {
            return Err(Error::Validation(format!(
                "{}: implausible layer count {layers}",
                path.display()
            )));
        }
        let dims = (0..=layers)
            .map(|_| next_u64(&buf).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let seed = next_u64(&buf)?;
        let mut weights = Vec::with_capacity(layers);
        for l in 0..layers {
            let (r, c) = (dims[l], dims[l + 1]);
            let data = (0..r * c)
                .map(|_| next_u64(&buf).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            weights.push(DenseMatrix::new(r, c, data)?);
        }
        if pos != buf.len() {
            return Err(Error::Validation(format!(
                "{}: {} trailing bytes after the last layer",
                path.display(),
                buf.len() - pos
            )));
        }
        let params = Self { weights, seed };
        params.check_chain()?;
        Ok(params)
    }
}

/// Node embeddings under the two propagation operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEmbeddings {
    /// Propagated with `Â`.
    pub local: DenseMatrix,
    /// Propagated with the diffusion matrix `S`.
    pub global: DenseMatrix,
}

impl ViewEmbeddings {
    pub fn n_nodes(&self) -> usize {
        self.local.rows()
    }

    pub fn dim(&self) -> usize {
        self.local.cols()
    }

    /// Sum of both views, used as the frozen representation for probing.
    pub fn readout(&self) -> DenseMatrix {
        let mut out = self.local.clone();
        out.add_assign(&self.global).expect("views share a shape");
        out
    }
}

/// A recorded forward pass, ready for the backward pass.
pub struct EncoderPass<'a> {
    tape: Tape<'a>,
    weights: Vec<Var>,
    local: Var,
    global: Var,
}

impl<'a> EncoderPass<'a> {
    pub fn embeddings(&self) -> ViewEmbeddings {
        ViewEmbeddings {
            local: self.tape.value(self.local).clone(),
            global: self.tape.value(self.global).clone(),
        }
    }

    pub fn local(&self) -> &DenseMatrix {
        self.tape.value(self.local)
    }

    pub fn global(&self) -> &DenseMatrix {
        self.tape.value(self.global)
    }

    /// Weight gradients given the loss gradients of both views.
    pub fn backward(&self, grad_local: DenseMatrix, grad_global: DenseMatrix) -> Result<Vec<DenseMatrix>> {
        let mut grads = self
            .tape
            .backward(vec![(self.local, grad_local), (self.global, grad_global)])?;
        Ok(self
            .weights
            .iter()
            .map(|&w| {
                grads.take(w).unwrap_or_else(|| {
                    let v = self.tape.value(w);
                    DenseMatrix::zeros(v.rows(), v.cols())
                })
            })
            .collect())
    }
}

/// Runs both views through the shared encoder with explicit operators.
pub fn encode_with<'a>(
    features: &DenseMatrix,
    local_op: &'a CsrMatrix,
    global_op: &'a CsrMatrix,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<EncoderPass<'a>> {
    params.check_chain()?;
    let n = features.rows();
    for (name, op) in [("local", local_op), ("global", global_op)] {
        if op.n_rows() != n || op.n_cols() != n {
            return Err(Error::Shape(format!(
                "{name} operator is {}x{} for {n} nodes",
                op.n_rows(),
                op.n_cols()
            )));
        }
    }
    if features.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, encoder expects {}",
            features.cols(),
            params.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let weights: Vec<Var> = params.weights.iter().map(|w| tape.param(w.clone())).collect();

    let z = tape.affine(x, weights[0])?;
    let mut local = tape.propagate(local_op, z)?;
    let mut global = tape.propagate(global_op, z)?;
    if cfg.activates(0) {
        local = tape.relu(local);
        global = tape.relu(global);
    }
    for (l, &w) in weights.iter().enumerate().skip(1) {
        let zl = tape.affine(local, w)?;
        local = tape.propagate(local_op, zl)?;
        let zg = tape.affine(global, w)?;
        global = tape.propagate(global_op, zg)?;
        if cfg.activates(l) {
            local = tape.relu(local);
            global = tape.relu(global);
        }
    }
    for v in [local, global] {
        check_rows(tape.value(v))?;
    }
    Ok(EncoderPass {
        tape,
        weights,
        local,
        global,
    })
}

/// Encodes `graph` with `Â` for the local view and `diffusion` for the global view.
pub fn encode<'a>(
    graph: &'a Graph,
    diffusion: &'a CsrMatrix,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<EncoderPass<'a>> {
    encode_with(graph.features(), graph.adjacency_norm(), diffusion, params, cfg)
}

/// Encodes free-standing feature rows as isolated nodes, whose only
/// neighbour is their own self-loop, so propagation is the identity.
pub fn encode_isolated(rows: &DenseMatrix, params: &EncoderParams, cfg: &EncoderConfig) -> Result<DenseMatrix> {
    params.check_chain()?;
    let mut h = rows.clone();
    for (l, w) in params.weights.iter().enumerate() {
        h = h.matmul(w)?;
        if cfg.activates(l) {
            h = crate::grad::relu(&h);
        }
    }
    Ok(h)
}

fn check_rows(h: &DenseMatrix) -> Result<()> {
    for i in 0..h.rows() {
        if !(norm(h.row(i)) >= MIN_ROW_NORM) {
            return Err(Error::DegenerateEmbedding { row: i });
        }
    }
    Ok(())
}
