//! Dual-view hardness scoring and hard-negative window selection.
//!
//! For anchor `i` the positive is node `i` itself in each view's space, so
//! `Φ_l[i][n] = cos(H_local[i], H_local[n])` and
//! `Φ_g[i][n] = cos(H_global[i], H_global[n])`. Candidates are every `n ≠ i`,
//! ranked per anchor by `Φ` ascending (ties to the smaller node index); the
//! ranks `[⌊α·N_neg⌋, ⌊β·N_neg⌋)` form the hard set.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::encoder::ViewEmbeddings;
use crate::error::{Error, Result};
use crate::grad::cosine_sim_matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    Local,
    Global,
    #[default]
    Both,
}

impl ViewMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewMode::Local => "local",
            ViewMode::Global => "global",
            ViewMode::Both => "both",
        }
    }
}

impl std::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" | "local_only" => Ok(ViewMode::Local),
            "global" | "global_only" => Ok(ViewMode::Global),
            "both" => Ok(ViewMode::Both),
            _ => Err(Error::Config(format!("unknown view mode {s:?} (local, global, both)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinerConfig {
    /// Fraction of the easiest negatives dropped.
    pub lower_pct: f64,
    /// Negatives ranked at or above this fraction are dropped as likely false negatives.
    pub upper_pct: f64,
    pub view_mode: ViewMode,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            lower_pct: 0.35,
            upper_pct: 0.95,
            view_mode: ViewMode::Both,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.lower_pct)
            && self.upper_pct > 0.0
            && self.upper_pct <= 1.0
            && self.lower_pct < self.upper_pct;
        if !ok {
            return Err(Error::Config(format!(
                "hardness window needs 0 <= lower < upper <= 1, got [{}, {})",
                self.lower_pct, self.upper_pct
            )));
        }
        Ok(())
    }
}

/// `[⌊lower·n⌋, ⌊upper·n⌋)`; a tiny slack keeps e.g. `0.35 · 20` from flooring to 6.
pub fn window_bounds(n_neg: usize, lower: f64, upper: f64) -> (usize, usize) {
    let cut = |p: f64| (((p * n_neg as f64) + 1e-9).floor() as usize).min(n_neg);
    (cut(lower), cut(upper))
}

/// Per-anchor hardness scores and, once selected, the hard sets.
#[derive(Clone, Debug, PartialEq)]
pub struct HardnessTable {
    /// `N × N`; entry `(i, n)` is `Φ_l` for anchor `i` and candidate `n`. The diagonal is unused.
    pub phi_local: DenseMatrix,
    pub phi_global: DenseMatrix,
    pub view_mode: ViewMode,
    /// Selected negatives per anchor, sorted by node index. Empty until selection.
    pub hard_set: Vec<Vec<usize>>,
}

impl HardnessTable {
    pub fn from_scores(phi_local: DenseMatrix, phi_global: DenseMatrix, view_mode: ViewMode) -> Result<Self> {
        let n = phi_local.rows();
        if phi_local.shape() != (n, n) || phi_global.shape() != (n, n) {
            return Err(Error::Shape("hardness scores must be two N×N matrices".into()));
        }
        Ok(Self {
            phi_local,
            phi_global,
            view_mode,
            hard_set: Vec::new(),
        })
    }

    pub fn n_anchors(&self) -> usize {
        self.phi_local.rows()
    }

    /// Candidates per anchor: everything except the anchor itself.
    pub fn n_candidates(&self) -> usize {
        self.n_anchors().saturating_sub(1)
    }

    /// Combined hardness `Φ` under the table's view mode.
    #[inline]
    pub fn phi(&self, anchor: usize, negative: usize) -> f64 {
        match self.view_mode {
            ViewMode::Local => self.phi_local.get(anchor, negative),
            ViewMode::Global => self.phi_global.get(anchor, negative),
            ViewMode::Both => self.phi_local.get(anchor, negative) + self.phi_global.get(anchor, negative),
        }
    }

    pub fn mean_hard_set_size(&self) -> f64 {
        if self.hard_set.is_empty() {
            return 0.0;
        }
        self.hard_set.iter().map(Vec::len).sum::<usize>() as f64 / self.hard_set.len() as f64
    }

    /// Writes `anchor,negative,phi_l,phi_g,phi,selected` for every anchor–candidate pair.
    pub fn write_debug_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "anchor,negative,phi_l,phi_g,phi,selected").map_err(io)?;
        let n = self.n_anchors();
        for i in 0..n {
            let hard = self.hard_set.get(i);
            for c in (0..n).filter(|&c| c != i) {
                let selected = hard.is_some_and(|h| h.binary_search(&c).is_ok());
                writeln!(
                    w,
                    "{i},{c},{},{},{},{}",
                    self.phi_local.get(i, c),
                    self.phi_global.get(i, c),
                    self.phi(i, c),
                    u8::from(selected)
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Scores every anchor–candidate pair in both views.
pub fn score_hardness(embeds: &ViewEmbeddings, cfg: &MinerConfig) -> Result<HardnessTable> {
    if embeds.local.shape() != embeds.global.shape() {
        return Err(Error::Shape("view embeddings differ in shape".into()));
    }
    let phi_local = cosine_sim_matrix(&embeds.local, &embeds.local)?;
    let phi_global = cosine_sim_matrix(&embeds.global, &embeds.global)?;
    HardnessTable::from_scores(phi_local, phi_global, cfg.view_mode)
}

/// Fills `hard_set` with each anchor's rank window.
pub fn select_hard_set(mut table: HardnessTable, cfg: &MinerConfig) -> Result<HardnessTable> {
    cfg.validate()?;
    table.view_mode = cfg.view_mode;
    let n = table.n_anchors();
    let n_neg = table.n_candidates();
    let (lo, hi) = window_bounds(n_neg, cfg.lower_pct, cfg.upper_pct);
    if lo >= hi {
        // Every anchor has the same candidate count, so anchor 0 is the first to fail.
        return Err(Error::Validation(format!(
            "anchor 0: hardness window [{}, {}) of {n_neg} candidates selects no negatives",
            cfg.lower_pct, cfg.upper_pct
        )));
    }
    let t = &table;
    let hard_set: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cands: Vec<(f64, usize)> = (0..n).filter(|&c| c != i).map(|c| (t.phi(i, c), c)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
            if lo > 0 {
                cands.select_nth_unstable_by(lo, cmp);
            }
            let upper = &mut cands[lo..];
            let width = hi - lo;
            if width < upper.len() {
                upper.select_nth_unstable_by(width, cmp);
            }
            let mut window: Vec<usize> = upper[..width].iter().map(|&(_, c)| c).collect();
            window.sort_unstable();
            window
        })
        .collect();
    table.hard_set = hard_set;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_matches_worked_example() {
        assert_eq!(window_bounds(20, 0.35, 0.95), (7, 19));
        assert_eq!(window_bounds(20, 0.0, 1.0), (0, 20));
    }

    #[test]
    fn identical_embeddings_score_two() {
        let row = [0.3, -1.0, 2.0];
        let h = DenseMatrix::from_rows(&[row; 5]).unwrap();
        let e = ViewEmbeddings {
            local: h.clone(),
            global: h,
        };
        let t = score_hardness(&e, &MinerConfig::default()).unwrap();
        for i in 0..5 {
            for n in (0..5).filter(|&n| n != i) {
                assert!((t.phi(i, n) - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        let t = HardnessTable::from_scores(DenseMatrix::zeros(3, 3), DenseMatrix::zeros(3, 3), ViewMode::Both).unwrap();
        let cfg = MinerConfig {
            lower_pct: 0.1,
            upper_pct: 0.2,
            view_mode: ViewMode::Both,
        };
        let err = select_hard_set(t, &cfg).unwrap_err();
        assert!(err.to_string().contains("anchor 0"));
    }

    #[test]
    fn full_window_keeps_every_candidate() {
        let t = HardnessTable::from_scores(DenseMatrix::identity(4), DenseMatrix::identity(4), ViewMode::Both).unwrap();
        let cfg = MinerConfig {
            lower_pct: 0.0,
            upper_pct: 1.0,
            view_mode: ViewMode::Both,
        };
        let t = select_hard_set(t, &cfg).unwrap();
        assert_eq!(t.hard_set[2], vec![0, 1, 3]);
    }

    #[test]
    fn bad_window_config() {
        for (lo, hi) in [(0.5, 0.5), (0.6, 0.4), (-0.1, 0.5), (0.1, 1.1)] {
            let cfg = MinerConfig {
                lower_pct: lo,
                upper_pct: hi,
                view_mode: ViewMode::Both,
            };
            assert!(cfg.validate().is_err());
        }
    }
}
