//! Synthesis of harder negatives from pairs of selected hard negatives.
//!
//! A mask marks each dimension as kept (`true`, copied from `h1`) or mixed
//! (`false`). Exactly `round(γ·k)` dimensions are mixed. DropMix writes
//! `λ·h1 + (1−λ)·h2` into mixed dimensions, CutMix writes `h2`, and Mixup
//! mixes every dimension.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::miner::HardnessTable;
use crate::rng::{round_anchor_index, substream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    None,
    Mixup,
    Cutmix,
    #[default]
    Dropmix,
}

impl MixMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MixMode::None => "none",
            MixMode::Mixup => "mixup",
            MixMode::Cutmix => "cutmix",
            MixMode::Dropmix => "dropmix",
        }
    }

    fn uses_mask(self) -> bool {
        matches!(self, MixMode::Cutmix | MixMode::Dropmix)
    }
}

impl std::str::FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MixMode::None),
            "mixup" => Ok(MixMode::Mixup),
            "cutmix" => Ok(MixMode::Cutmix),
            "dropmix" => Ok(MixMode::Dropmix),
            _ => Err(Error::Config(format!(
                "unknown mix mode {s:?} (none, mixup, cutmix, dropmix)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub mode: MixMode,
    pub lambda: f64,
    /// Fraction of dimensions that get mixed.
    pub gamma: f64,
    pub synth_per_anchor: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            mode: MixMode::Dropmix,
            lambda: 0.2,
            gamma: 0.3,
            synth_per_anchor: 64,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Number of mixed dimensions, `round(γ·k)`.
pub fn mixed_count(k: usize, gamma: f64) -> usize {
    ((gamma * k as f64).round() as usize).min(k)
}

/// `λ·h1 + (1−λ)·h2`.
pub fn mix_pair(h1: &[f64], h2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_pair(h1, h2)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Validation(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(h1
        .iter()
        .zip(h2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// A mask with exactly `round(γ·k)` mixed (`false`) positions chosen uniformly
/// without replacement.
pub fn sample_mask<R: Rng + ?Sized>(k: usize, gamma: f64, rng: &mut R) -> Vec<bool> {
    let mut mask = vec![true; k];
    let m = mixed_count(k, gamma.clamp(0.0, 1.0));
    if m == k {
        mask.fill(false);
    } else if m > 0 {
        for j in index::sample(rng, k, m) {
            mask[j] = false;
        }
    }
    mask
}

/// `M ⊙ h1 + (1 − M) ⊙ (λ·h1 + (1−λ)·h2)`.
pub fn drop_mix(h1: &[f64], h2: &[f64], lambda: f64, mask: &[bool]) -> Result<Vec<f64>> {
    let mixed = mix_pair(h1, h2, lambda)?;
    if mask.len() != h1.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for vectors of length {}",
            mask.len(),
            h1.len()
        )));
    }
    Ok(mask
        .iter()
        .zip(h1)
        .zip(mixed)
        .map(|((&keep, &a), m)| if keep { a } else { m })
        .collect())
}

/// `M ⊙ h1 + (1 − M) ⊙ h2`.
pub fn cut_mix(h1: &[f64], h2: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check_pair(h1, h2)?;
    if mask.len() != h1.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for vectors of length {}",
            mask.len(),
            h1.len()
        )));
    }
    Ok(mask
        .iter()
        .zip(h1.iter().zip(h2))
        .map(|(&keep, (&a, &b))| if keep { a } else { b })
        .collect())
}

fn check_pair(h1: &[f64], h2: &[f64]) -> Result<()> {
    if h1.len() != h2.len() {
        return Err(Error::Shape(format!(
            "mixing vectors of length {} and {}",
            h1.len(),
            h2.len()
        )));
    }
    Ok(())
}

/// Where a synthesized vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub n1: usize,
    pub n2: usize,
    /// Index of the mask among all masks of this bank.
    pub mask_id: usize,
}

/// Synthesized negatives grouped by anchor. Treated as constants by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeBank {
    offsets: Vec<usize>,
    vectors: DenseMatrix,
    provenance: Vec<Provenance>,
}

impl NegativeBank {
    pub fn empty(n_anchors: usize, dim: usize) -> Self {
        Self {
            offsets: vec![0; n_anchors + 1],
            vectors: DenseMatrix::zeros(0, dim),
            provenance: Vec::new(),
        }
    }

    /// Builds a bank from explicit per-anchor vectors (no provenance).
    pub fn from_vectors(dim: usize, per_anchor: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for vs in per_anchor {
            for v in vs {
                if v.len() != dim {
                    return Err(Error::Shape(format!("bank vector of length {} for dim {dim}", v.len())));
                }
                data.extend(v);
            }
            offsets.push(data.len() / dim.max(1));
        }
        let rows = *offsets.last().expect("non-empty offsets");
        Ok(Self {
            offsets,
            vectors: DenseMatrix::new(rows, dim, data)?,
            provenance: Vec::new(),
        })
    }

    pub fn n_anchors(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Total number of synthesized vectors.
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Row range of anchor `i`'s vectors within [`NegativeBank::vectors`].
    pub fn range(&self, anchor: usize) -> std::ops::Range<usize> {
        self.offsets[anchor]..self.offsets[anchor + 1]
    }

    pub fn for_anchor(&self, anchor: usize) -> impl Iterator<Item = &[f64]> {
        self.range(anchor).map(move |r| self.vectors.row(r))
    }

    /// Replaces the vectors, keeping anchors and provenance (e.g. after encoding feature-space samples).
    pub fn with_vectors(self, vectors: DenseMatrix) -> Result<Self> {
        if vectors.rows() != self.vectors.rows() {
            return Err(Error::Shape(format!(
                "{} replacement vectors for a bank of {}",
                vectors.rows(),
                self.vectors.rows()
            )));
        }
        Ok(Self { vectors, ..self })
    }

    /// Writes `anchor,n1,n2,lambda,gamma,mode` per synthesized vector.
    pub fn write_debug_csv(&self, path: &Path, cfg: &MixConfig) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "anchor,n1,n2,lambda,gamma,mode").map_err(io)?;
        for a in 0..self.n_anchors() {
            for r in self.range(a) {
                let p = self.provenance[r];
                writeln!(
                    w,
                    "{a},{},{},{},{},{}",
                    p.n1,
                    p.n2,
                    cfg.lambda,
                    cfg.gamma,
                    cfg.mode.as_str()
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Draws `synth_per_anchor` ordered pairs `n1 ≠ n2` from each anchor's hard
/// set and synthesizes one vector per pair from the rows of `source`.
///
/// Pair draws and masks come from separate per-anchor streams keyed by
/// `(seed, round, anchor)`, so modes that share a seed share pair draws.
pub fn synthesize_bank(
    source: &DenseMatrix,
    hardness: &HardnessTable,
    cfg: &MixConfig,
    seed: u64,
    round: u64,
) -> Result<NegativeBank> {
    cfg.validate()?;
    let n = hardness.n_anchors();
    let dim = source.cols();
    let s = cfg.synth_per_anchor;
    if cfg.mode == MixMode::None || s == 0 {
        return Ok(NegativeBank::empty(n, dim));
    }
    if hardness.hard_set.len() != n {
        return Err(Error::Validation("hard sets have not been selected".into()));
    }
    for (i, h) in hardness.hard_set.iter().enumerate() {
        if h.len() < 2 {
            return Err(Error::Validation(format!(
                "anchor {i}: hard set has {} member(s), mixing needs at least 2",
                h.len()
            )));
        }
        if let Some(&bad) = h.iter().find(|&&j| j >= source.rows()) {
            return Err(Error::Shape(format!(
                "anchor {i}: hard negative {bad} has no source row"
            )));
        }
    }
    let mut vectors = DenseMatrix::zeros(n * s, dim);
    let mut provenance = vec![
        Provenance {
            n1: 0,
            n2: 0,
            mask_id: 0
        };
        n * s
    ];
    vectors
        .data_mut()
        .par_chunks_mut(s * dim)
        .zip(provenance.par_chunks_mut(s))
        .enumerate()
        .for_each(|(i, (data, prov))| {
            let hard = &hardness.hard_set[i];
            let idx = round_anchor_index(round, i);
            let mut pair_rng = substream(seed, Purpose::PairDraw, idx);
            let mut mask_rng = substream(seed, Purpose::Mask, idx);
            let (lambda, mu) = (cfg.lambda, 1.0 - cfg.lambda);
            for (t, (out, p)) in data.chunks_mut(dim).zip(prov.iter_mut()).enumerate() {
                let a = pair_rng.gen_range(0..hard.len());
                let mut b = pair_rng.gen_range(0..hard.len() - 1);
                if b >= a {
                    b += 1;
                }
                let (n1, n2) = (hard[a], hard[b]);
                let (h1, h2) = (source.row(n1), source.row(n2));
                // Same arithmetic as `mix_pair`, `drop_mix` and `cut_mix`, without the allocations.
                match cfg.mode {
                    MixMode::Mixup => {
                        for ((o, &x), &y) in out.iter_mut().zip(h1).zip(h2) {
                            *o = lambda * x + mu * y;
                        }
                    }
                    MixMode::Cutmix | MixMode::Dropmix => {
                        let mask = sample_mask(dim, cfg.gamma, &mut mask_rng);
                        let cut = cfg.mode == MixMode::Cutmix;
                        for (((o, &keep), &x), &y) in out.iter_mut().zip(&mask).zip(h1).zip(h2) {
                            *o = match (keep, cut) {
                                (true, _) => x,
                                (false, true) => y,
                                (false, false) => lambda * x + mu * y,
                            };
                        }
                    }
                    MixMode::None => unreachable!("handled above"),
                }
                let mask_id = if cfg.mode.uses_mask() { i * s + t } else { usize::MAX };
                *p = Provenance { n1, n2, mask_id };
            }
        });
    Ok(NegativeBank {
        offsets: (0..=n).map(|i| i * s).collect(),
        vectors,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mix_pair_examples() {
        let m = mix_pair(&[1.0, 0.0], &[0.0, 1.0], 0.3).unwrap();
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);
        let (h1, h2) = ([0.25, -3.5, 7.0], [1.5, 2.0, -0.125]);
        assert_eq!(mix_pair(&h1, &h2, 1.0).unwrap(), h1);
        assert_eq!(mix_pair(&h1, &h2, 0.0).unwrap(), h2);
        assert!(mix_pair(&h1, &h2, 1.5).is_err());
        assert!(mix_pair(&h1, &h2[..2], 0.5).is_err());
    }

    #[test]
    fn mask_extremes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mask(16, 0.0, &mut rng).iter().all(|&k| k));
        assert!(sample_mask(16, 1.0, &mut rng).iter().all(|&k| !k));
        let m = sample_mask(128, 0.3, &mut rng);
        assert_eq!(m.iter().filter(|&&k| !k).count(), 38);
    }

    #[test]
    fn drop_mix_examples() {
        let (h1, h2) = ([1.0, 0.0], [0.0, 1.0]);
        let v = drop_mix(&h1, &h2, 0.3, &[true, false]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 0.7).abs() < 1e-15);
        assert_eq!(drop_mix(&h1, &h2, 0.3, &[true, true]).unwrap(), h1);
        assert_eq!(
            drop_mix(&h1, &h2, 0.3, &[false, false]).unwrap(),
            mix_pair(&h1, &h2, 0.3).unwrap()
        );
        assert!(drop_mix(&h1, &h2, 0.3, &[true]).is_err());
    }

    #[test]
    fn none_mode_is_empty() {
        let t =
            HardnessTable::from_scores(DenseMatrix::zeros(3, 3), DenseMatrix::zeros(3, 3), Default::default()).unwrap();
        let cfg = MixConfig {
            mode: MixMode::None,
            ..Default::default()
        };
        let bank = synthesize_bank(&DenseMatrix::zeros(3, 4), &t, &cfg, 0, 0).unwrap();
        assert!(bank.is_empty());
        assert_eq!(bank.n_anchors(), 3);
        assert_eq!(bank.for_anchor(1).count(), 0);
    }

    #[test]
    fn small_hard_set_is_rejected() {
        let mut t =
            HardnessTable::from_scores(DenseMatrix::zeros(3, 3), DenseMatrix::zeros(3, 3), Default::default()).unwrap();
        t.hard_set = vec![vec![1, 2], vec![0], vec![0, 1]];
        let err = synthesize_bank(&DenseMatrix::zeros(3, 4), &t, &MixConfig::default(), 0, 0).unwrap_err();
        assert!(err.to_string().contains("anchor 1"));
    }
}
