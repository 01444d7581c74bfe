//! Linear probe: softmax regression on frozen, standardized embeddings.
//!
//! The recipe is fixed (zero init, full-batch gradient descent, 300 steps,
//! lr 0.1, l2 1e-4) so accuracy differences between runs reflect the
//! embeddings alone. Zero init makes the fit deterministic without a seed.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::SplitSpec;

pub const PROBE_STEPS: usize = 300;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_L2: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    /// `k × C`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    /// Train-split column statistics used to standardize inputs.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn standardize_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, &x), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (x - m) / s;
        }
    }

    /// Class scores for row `i`.
    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; row.len()];
        self.standardize_row(row, &mut z);
        let mut out = self.bias.clone();
        for (j, &x) in z.iter().enumerate() {
            if x != 0.0 {
                for (o, &w) in out.iter_mut().zip(self.weight.row(j)) {
                    *o += x * w;
                }
            }
        }
        out
    }

    /// Argmax class, ties to the smaller index.
    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.logits(row))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = c;
        }
    }
    best
}

fn check_inputs(embeddings: &DenseMatrix, labels: &[usize], idx: &[usize], what: &str) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            embeddings.rows()
        )));
    }
    if idx.is_empty() {
        return Err(Error::Validation(format!("{what} index set is empty")));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::Validation(format!("{what} index {bad} out of range")));
    }
    Ok(())
}

/// Fits the probe on `split.train_idx`. `embeddings` is only read.
pub fn fit_probe(embeddings: &DenseMatrix, labels: &[usize], split: &SplitSpec) -> Result<ProbeModel> {
    let train = &split.train_idx;
    check_inputs(embeddings, labels, train, "train")?;
    if !embeddings.is_finite() {
        return Err(Error::Validation("probe input contains non-finite values".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    for &i in train {
        present[labels[i]] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::Validation(format!("class {c} is missing from the train split")));
    }

    let k = embeddings.cols();
    let m = train.len() as f64;
    let mut mean = vec![0.0; k];
    for &i in train {
        for (a, &x) in mean.iter_mut().zip(embeddings.row(i)) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut std = vec![0.0; k];
    for &i in train {
        for ((s, &x), mu) in std.iter_mut().zip(embeddings.row(i)).zip(&mean) {
            *s += (x - mu) * (x - mu);
        }
    }
    for s in &mut std {
        *s = (*s / m).sqrt();
        // Constant columns carry no signal; leave them centred at zero.
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let mut model = ProbeModel {
        weight: DenseMatrix::zeros(k, n_classes),
        bias: vec![0.0; n_classes],
        mean,
        std,
    };

    let mut x = DenseMatrix::zeros(train.len(), k);
    for (r, &i) in train.iter().enumerate() {
        model.standardize_row(embeddings.row(i), x.row_mut(r));
    }
    let mut probs = DenseMatrix::zeros(train.len(), n_classes);
    for _ in 0..PROBE_STEPS {
        let mut z = x.matmul(&model.weight)?;
        for (r, &i) in train.iter().enumerate() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&model.bias) {
                *v += b;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let p = probs.row_mut(r);
            for (pv, v) in p.iter_mut().zip(row.iter()) {
                *pv = v / sum;
            }
            p[labels[i]] -= 1.0;
        }
        // probs now holds ∂CE/∂logits scaled by m.
        let mut gw = x.transpose_matmul(&probs)?;
        gw.scale(1.0 / m);
        for (g, &w) in gw.data_mut().iter_mut().zip(model.weight.data()) {
            *g += PROBE_L2 * w;
        }
        let mut gb = vec![0.0; n_classes];
        for r in 0..train.len() {
            for (g, &p) in gb.iter_mut().zip(probs.row(r)) {
                *g += p / m;
            }
        }
        for (w, g) in model.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= PROBE_LR * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= PROBE_LR * g;
        }
    }
    if !model.weight.is_finite() || model.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::Validation("probe weights became non-finite".into()));
    }
    Ok(model)
}

/// Fraction of `idx` whose argmax prediction matches the label.
pub fn accuracy(model: &ProbeModel, embeddings: &DenseMatrix, labels: &[usize], idx: &[usize]) -> Result<f64> {
    check_inputs(embeddings, labels, idx, "evaluation")?;
    if embeddings.cols() != model.weight.rows() {
        return Err(Error::Shape(format!(
            "probe expects {} columns, got {}",
            model.weight.rows(),
            embeddings.cols()
        )));
    }
    let correct = idx
        .iter()
        .filter(|&&i| model.predict(embeddings.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / idx.len() as f64)
}
