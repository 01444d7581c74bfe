//! Cross-view InfoNCE with synthesized negatives.
//!
//! For anchor `i` in view A the positive is row `i` of view B. The
//! denominator runs over every row of view B (the positive included), the
//! anchor's synthesized negatives, and optionally the other rows of view A:
//!
//! ```text
//! ℓ_i = −s(a_i, b_i)/τ + log Σ_k exp(s(a_i, ·)/τ)
//! ```
//!
//! with `s` the cosine similarity. The reported loss is the mean over
//! anchors, averaged over both directions when symmetric. Bank vectors are
//! constants: no gradient is produced for them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{dot, DenseMatrix};
use crate::encoder::ViewEmbeddings;
use crate::error::{Error, Result};
use crate::grad::{normalize_rows, CosineSim};
use crate::synth::NegativeBank;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub include_intra_view_negatives: bool,
    /// Average the local→global and global→local directions.
    pub symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            include_intra_view_negatives: false,
            symmetric: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// Unweighted per-anchor terms of the local→global direction.
    pub anchor_terms: Vec<f64>,
    pub grad_local: DenseMatrix,
    pub grad_global: DenseMatrix,
}

/// One direction's per-anchor terms and gradients with respect to the
/// anchor view and the other view.
struct Direction {
    terms: Vec<f64>,
    grad_anchor: DenseMatrix,
    grad_other: DenseMatrix,
}

/// Softmax cross-entropy of each anchor row against the cross-view row
/// (positive on the diagonal), optional intra-view rows and its bank.
///
/// `cross` compares anchors (rows) with the other view (columns); `intra`
/// compares anchors with themselves.
fn direction(
    cross: &CosineSim,
    intra: Option<&CosineSim>,
    bank_hat: &DenseMatrix,
    bank: &NegativeBank,
    tau: f64,
    weight: f64,
) -> Result<Direction> {
    let sims = cross.sims();
    let n = sims.rows();
    let k = cross.u_hat().cols();
    let anchor_hat = cross.u_hat();
    let anchor_norms = cross.u_norms();
    let intra_sims = intra.map(CosineSim::sims);
    let mut grad_cross = DenseMatrix::zeros(n, n);
    let mut grad_bank = DenseMatrix::zeros(n, k);

    // Pass 1: cross and bank terms, written straight into their gradient rows.
    let stats: Vec<(f64, f64, f64)> = grad_cross
        .data_mut()
        .par_chunks_mut(n)
        .zip(grad_bank.data_mut().par_chunks_mut(k))
        .enumerate()
        .map(|(i, (g_cross, g_bank))| {
            let cr = sims.row(i);
            let a_hat = anchor_hat.row(i);
            let bank_s: Vec<f64> = bank.range(i).map(|r| dot(a_hat, bank_hat.row(r))).collect();
            let mut max = f64::NEG_INFINITY;
            for &s in cr.iter().chain(&bank_s) {
                max = max.max(s / tau);
            }
            if let Some(ir) = intra_sims.map(|m| m.row(i)) {
                for (j, &s) in ir.iter().enumerate() {
                    if j != i {
                        max = max.max(s / tau);
                    }
                }
            }
            let mut z = 0.0;
            for (g, &s) in g_cross.iter_mut().zip(cr) {
                *g = (s / tau - max).exp();
                z += *g;
            }
            if let Some(ir) = intra_sims.map(|m| m.row(i)) {
                for (j, &s) in ir.iter().enumerate() {
                    if j != i {
                        z += (s / tau - max).exp();
                    }
                }
            }
            let e_bank: Vec<f64> = bank_s.iter().map(|s| (s / tau - max).exp()).collect();
            z += e_bank.iter().sum::<f64>();
            let term = -cr[i] / tau + max + z.ln();

            // ∂ℓ/∂s = (softmax − 1[positive]) / τ, times the averaging weight.
            let scale = weight / (tau * z);
            g_cross.iter_mut().for_each(|g| *g *= scale);
            g_cross[i] -= weight / tau;
            // Bank vectors are constants: ∂cos(a, b)/∂a = (b̂ − cos·â)/‖a‖.
            let inv = 1.0 / anchor_norms[i];
            for ((e, &c), r) in e_bank.iter().zip(&bank_s).zip(bank.range(i)) {
                let g = e * scale * inv;
                for ((o, &bh), &ah) in g_bank.iter_mut().zip(bank_hat.row(r)).zip(a_hat) {
                    *o += g * (bh - c * ah);
                }
            }
            (term, max, scale)
        })
        .collect();

    let (mut grad_anchor, grad_other) = cross.backward(&grad_cross)?;
    drop(grad_cross);
    grad_anchor.add_assign(&grad_bank)?;

    // Pass 2: intra-view negatives (the anchor's own entry is excluded).
    if let (Some(sim), Some(is)) = (intra, intra_sims) {
        let mut grad_intra = DenseMatrix::zeros(n, n);
        grad_intra.data_mut().par_chunks_mut(n).enumerate().for_each(|(i, g)| {
            let (_, max, scale) = stats[i];
            for (j, (o, &s)) in g.iter_mut().zip(is.row(i)).enumerate() {
                *o = if j == i { 0.0 } else { (s / tau - max).exp() * scale };
            }
        });
        let (du, dv) = sim.backward(&grad_intra)?;
        grad_anchor.add_assign(&du)?;
        grad_anchor.add_assign(&dv)?;
    }
    Ok(Direction {
        terms: stats.into_iter().map(|(t, _, _)| t).collect(),
        grad_anchor,
        grad_other,
    })
}

pub fn info_nce(embeds: &ViewEmbeddings, bank: &NegativeBank, cfg: &LossConfig) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, k) = embeds.local.shape();
    if embeds.global.shape() != (n, k) {
        return Err(Error::Shape("view embeddings differ in shape".into()));
    }
    if n == 0 {
        return Err(Error::Validation("contrastive loss over zero anchors".into()));
    }
    if bank.n_anchors() != n || (bank.dim() != k && !bank.is_empty()) {
        return Err(Error::Shape(format!(
            "bank for {} anchors of dim {}, embeddings are {n}x{k}",
            bank.n_anchors(),
            bank.dim()
        )));
    }
    let bank_hat = if bank.is_empty() {
        DenseMatrix::zeros(0, k)
    } else {
        normalize_rows(bank.vectors())
            .map_err(|e| match e {
                Error::DegenerateEmbedding { row } => {
                    Error::Validation(format!("synthesized negative {row} has zero norm"))
                }
                other => other,
            })?
            .0
    };
    let directions = if cfg.symmetric { 2.0 } else { 1.0 };
    let weight = 1.0 / (n as f64 * directions);
    let intra = |h: &DenseMatrix| {
        cfg.include_intra_view_negatives
            .then(|| CosineSim::forward(h, h))
            .transpose()
    };

    let fwd = {
        let cross = CosineSim::forward(&embeds.local, &embeds.global)?;
        direction(&cross, intra(&embeds.local)?.as_ref(), &bank_hat, bank, cfg.tau, weight)?
    };
    let mut loss = fwd.terms.iter().sum::<f64>() / n as f64;
    let mut grad_local = fwd.grad_anchor;
    let mut grad_global = fwd.grad_other;
    if cfg.symmetric {
        let cross = CosineSim::forward(&embeds.global, &embeds.local)?;
        let rev = direction(
            &cross,
            intra(&embeds.global)?.as_ref(),
            &bank_hat,
            bank,
            cfg.tau,
            weight,
        )?;
        loss = 0.5 * (loss + rev.terms.iter().sum::<f64>() / n as f64);
        grad_global.add_assign(&rev.grad_anchor)?;
        grad_local.add_assign(&rev.grad_other)?;
    }
    Ok(LossOutput {
        loss,
        anchor_terms: fwd.terms,
        grad_local,
        grad_global,
    })
}
