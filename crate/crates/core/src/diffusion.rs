//! Personalized PageRank diffusion `S = α(I − (1−α)Â)^{-1}`, evaluated as the
//! truncated series `Σ_{k=0..K} α(1−α)^k Â^k` and then sparsified.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Restart probability of the random walk.
    pub teleport: f64,
    /// Bound on the discarded series tail `(1 − teleport)^{K+1}`.
    pub series_tol: f64,
    /// Entries below this value are dropped.
    pub sparsify_eps: f64,
    /// Keep at most this many of the largest entries per row.
    pub topk: Option<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            teleport: 0.15,
            series_tol: 1e-4,
            sparsify_eps: 1e-4,
            topk: Some(128),
        }
    }
}

impl DiffusionConfig {
    /// Exact series, no sparsification.
    pub fn exact(teleport: f64, series_tol: f64) -> Self {
        Self {
            teleport,
            series_tol,
            sparsify_eps: 0.0,
            topk: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.teleport > 0.0 && self.teleport < 1.0) {
            return Err(Error::Config(format!(
                "teleport must lie in (0, 1), got {}",
                self.teleport
            )));
        }
        if !(self.series_tol > 0.0 && self.series_tol < 1.0) {
            return Err(Error::Config(format!(
                "series_tol must lie in (0, 1), got {}",
                self.series_tol
            )));
        }
        if !(self.sparsify_eps >= 0.0) {
            return Err(Error::Config(format!(
                "sparsify_eps must be non-negative, got {}",
                self.sparsify_eps
            )));
        }
        if self.topk == Some(0) {
            return Err(Error::Config("topk must be at least 1 when set".into()));
        }
        Ok(())
    }

    /// Highest power `K` kept: the smallest `K` with `(1 − teleport)^{K+1} ≤ series_tol`.
    pub fn max_power(&self) -> usize {
        let decay = 1.0 - self.teleport;
        let mut tail = decay;
        let mut k = 0;
        while tail > self.series_tol {
            tail *= decay;
            k += 1;
        }
        k
    }
}

/// Sparsified diffusion operator plus how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionMatrix {
    pub matrix: CsrMatrix,
    /// Highest power of `Â` included in the series.
    pub terms_used: usize,
    /// Stored entries over `N²`.
    pub density: f64,
}

/// Rows of `Σ_{k=0..K} α(1−α)^k Â^k` with strictly positive entries.
pub fn ppr_series(adj: &CsrMatrix, teleport: f64, max_power: usize) -> Result<CsrMatrix> {
    let n = adj.n_rows();
    if n == 0 {
        return Err(Error::Validation("diffusion of an empty graph".into()));
    }
    if adj.n_cols() != n {
        return Err(Error::Shape(format!(
            "diffusion needs a square operator, got {}x{}",
            n,
            adj.n_cols()
        )));
    }
    let adj_t = adj.transpose();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n], vec![0.0; n]),
            |(x, next, acc), i| {
                x.iter_mut().for_each(|v| *v = 0.0);
                acc.iter_mut().for_each(|v| *v = 0.0);
                x[i] = 1.0;
                let mut coef = teleport;
                acc[i] = coef;
                for _ in 0..max_power {
                    // Row i of Â^k: x_kᵀ = x_{k-1}ᵀ Â.
                    adj_t.mul_vec(x, next);
                    std::mem::swap(x, next);
                    coef *= 1.0 - teleport;
                    for (a, v) in acc.iter_mut().zip(x.iter()) {
                        *a += coef * v;
                    }
                }
                acc.iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            },
        )
        .collect();
    CsrMatrix::from_rows(n, rows)
}

/// Keeps an entry iff it is positive, at least `eps`, and (when `topk` is
/// set) among the row's `topk` largest values, ties going to the smaller column.
pub fn sparsify_row(mut row: Vec<(usize, f64)>, eps: f64, topk: Option<usize>) -> Vec<(usize, f64)> {
    row.retain(|&(_, v)| v > 0.0 && v >= eps);
    if let Some(k) = topk {
        if row.len() > k {
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            row.sort_by_key(|&(c, _)| c);
        }
    }
    row
}

pub fn sparsify(s: &DenseMatrix, eps: f64, topk: Option<usize>) -> Result<CsrMatrix> {
    check_sparsify_args(eps, topk)?;
    let rows = s
        .row_iter()
        .map(|r| sparsify_row(r.iter().copied().enumerate().collect(), eps, topk))
        .collect();
    CsrMatrix::from_rows(s.cols(), rows)
}

pub fn sparsify_csr(s: &CsrMatrix, eps: f64, topk: Option<usize>) -> Result<CsrMatrix> {
    check_sparsify_args(eps, topk)?;
    let rows = (0..s.n_rows())
        .map(|i| {
            let (c, v) = s.row(i);
            sparsify_row(c.iter().copied().zip(v.iter().copied()).collect(), eps, topk)
        })
        .collect();
    CsrMatrix::from_rows(s.n_cols(), rows)
}

fn check_sparsify_args(eps: f64, topk: Option<usize>) -> Result<()> {
    if !(eps >= 0.0) {
        return Err(Error::Validation(format!("sparsify eps must be >= 0, got {eps}")));
    }
    if topk == Some(0) {
        return Err(Error::Validation("sparsify topk must be at least 1".into()));
    }
    Ok(())
}

pub fn compute_ppr(adj: &CsrMatrix, cfg: &DiffusionConfig) -> Result<DiffusionMatrix> {
    cfg.validate()?;
    let terms_used = cfg.max_power();
    let series = ppr_series(adj, cfg.teleport, terms_used)?;
    let matrix = if cfg.sparsify_eps > 0.0 || cfg.topk.is_some() {
        sparsify_csr(&series, cfg.sparsify_eps, cfg.topk)?
    } else {
        series
    };
    let n = adj.n_rows() as f64;
    let density = matrix.nnz() as f64 / (n * n);
    log::debug!(
        "ppr diffusion: K = {terms_used}, nnz = {}, density = {density:.4}",
        matrix.nnz()
    );
    Ok(DiffusionMatrix {
        matrix,
        terms_used,
        density,
    })
}

/// Cache file name for `(adj, cfg)`: a digest of the operator and every config field.
pub fn cache_key(adj: &CsrMatrix, cfg: &DiffusionConfig) -> String {
    let mut h = Sha256::new();
    h.update((adj.n_rows() as u64).to_le_bytes());
    for &p in adj.indptr() {
        h.update((p as u64).to_le_bytes());
    }
    for &c in adj.indices() {
        h.update((c as u64).to_le_bytes());
    }
    for &v in adj.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(cfg.teleport.to_bits().to_le_bytes());
    h.update(cfg.series_tol.to_bits().to_le_bytes());
    h.update(cfg.sparsify_eps.to_bits().to_le_bytes());
    h.update(cfg.topk.map_or(u64::MAX, |k| k as u64).to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("ppr-{hex}.txt")
}

/// [`compute_ppr`] backed by a text dump in `cache_dir`.
pub fn compute_ppr_cached(adj: &CsrMatrix, cfg: &DiffusionConfig, cache_dir: &Path) -> Result<DiffusionMatrix> {
    cfg.validate()?;
    let path: PathBuf = cache_dir.join(cache_key(adj, cfg));
    if path.exists() {
        match CsrMatrix::read_text(&path) {
            Ok(matrix) if matrix.n_rows() == adj.n_rows() => {
                let n = adj.n_rows() as f64;
                return Ok(DiffusionMatrix {
                    density: matrix.nnz() as f64 / (n * n),
                    matrix,
                    terms_used: cfg.max_power(),
                });
            }
            Ok(_) => log::warn!("{}: cached matrix has the wrong size; recomputing", path.display()),
            Err(e) => log::warn!("{}: unreadable cache ({e}); recomputing", path.display()),
        }
    }
    let s = compute_ppr(adj, cfg)?;
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    s.matrix.write_text(&path)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)]).unwrap()
    }

    #[test]
    fn single_node_is_identity() {
        for t in [0.05, 0.15, 0.5, 0.9] {
            let s = compute_ppr(&CsrMatrix::identity(1), &DiffusionConfig::exact(t, 1e-12)).unwrap();
            assert!((s.matrix.get(0, 0).unwrap() - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn two_node_values() {
        let s = compute_ppr(&two_node(), &DiffusionConfig::exact(0.15, 1e-14)).unwrap();
        let d = s.matrix.to_dense();
        let expect = [0.575, 0.425, 0.425, 0.575];
        for (a, b) in d.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn truncation_depth() {
        // 0.5^20 ≈ 9.54e-7 already meets the 1e-6 tolerance.
        let cfg = DiffusionConfig::exact(0.5, 1e-6);
        assert_eq!(cfg.max_power(), 19);
        assert!(0.5f64.powi(20) <= 1e-6 && 0.5f64.powi(19) > 1e-6);
        assert_eq!(DiffusionConfig::exact(0.5, 0.6).max_power(), 0);
    }

    #[test]
    fn empty_graph_is_rejected() {
        let empty = CsrMatrix::from_rows(0, vec![]).unwrap();
        assert!(matches!(
            compute_ppr(&empty, &DiffusionConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn config_validation() {
        for bad in [
            DiffusionConfig {
                teleport: 1.0,
                ..Default::default()
            },
            DiffusionConfig {
                topk: Some(0),
                ..Default::default()
            },
            DiffusionConfig {
                series_tol: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sparsify_rules() {
        let row = vec![(0, 0.5), (1, 0.3), (2, 0.2)];
        assert_eq!(sparsify_row(row.clone(), 0.0, None), row);
        assert_eq!(sparsify_row(row.clone(), 0.0, Some(2)), vec![(0, 0.5), (1, 0.3)]);
        assert_eq!(sparsify_row(row.clone(), 0.25, None), vec![(0, 0.5), (1, 0.3)]);
        let tie = vec![(0, 0.4), (1, 0.4), (2, 0.2)];
        assert_eq!(sparsify_row(tie, 0.0, Some(1)), vec![(0, 0.4)]);
        let d = DenseMatrix::from_rows(&[[0.5, 0.3, 0.2]]).unwrap();
        assert!(sparsify(&d, 0.0, Some(0)).is_err());
        assert_eq!(sparsify(&d, 0.0, None).unwrap().to_dense(), d);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DiffusionConfig::default();
        let a = compute_ppr_cached(&two_node(), &cfg, dir.path()).unwrap();
        assert!(dir.path().join(cache_key(&two_node(), &cfg)).exists());
        let b = compute_ppr_cached(&two_node(), &cfg, dir.path()).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.teleport = 0.2;
        assert_ne!(cache_key(&two_node(), &cfg), cache_key(&two_node(), &other));
    }
}
