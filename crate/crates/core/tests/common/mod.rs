//! Helpers shared by the integration suites.
#![allow(dead_code)]

use dropmix::{DenseMatrix, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[-1, 1]`.
pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Erdős–Rényi graph with uniform features in `[-1, 1]` and no labels.
pub fn random_graph(n: usize, p: f64, d: usize, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(random_matrix(n, d, rng), edges, None).unwrap()
}

/// Largest per-entry relative error, with entries below `floor` in
/// magnitude compared on the `floor` scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &DenseMatrix, h: f64, mut f: impl FnMut(&DenseMatrix) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.data().len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `Σ G ⊙ Y`, the scalar whose gradient with respect to `Y` is `G`.
pub fn contract(g: &DenseMatrix, y: &DenseMatrix) -> f64 {
    g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// `α(I − (1−α)Â)^{-1}` by dense LU, with `Â` rebuilt from the edge list.
pub fn ppr_closed_form(graph: &Graph, teleport: f64) -> nalgebra::DMatrix<f64> {
    let n = graph.n_nodes();
    let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
    for &(u, v) in graph.edges() {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let a_hat = nalgebra::DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (deg[i] * deg[j]).sqrt());
    let m = nalgebra::DMatrix::<f64>::identity(n, n) - a_hat * (1.0 - teleport);
    m.lu().try_inverse().expect("I - (1-α)Â is invertible") * teleport
}

/// Hardness table over `source` in both views, with default hard sets selected.
pub fn selected_table(source: &DenseMatrix) -> dropmix::HardnessTable {
    let e = dropmix::ViewEmbeddings {
        local: source.clone(),
        global: source.clone(),
    };
    let cfg = dropmix::MinerConfig::default();
    dropmix::select_hard_set(dropmix::score_hardness(&e, &cfg).unwrap(), &cfg).unwrap()
}

/// Position-wise zero frequencies of `draws` masks for each `γ ∈ {0.1, …, 0.6}`
/// at `k = 128`.
pub struct MaskUniformity {
    /// Positions whose count lies outside `mean ± 3σ`, over all γ.
    pub beyond_3_sigma: usize,
    pub positions: usize,
    /// Largest `|count − mean| / σ` seen.
    pub max_z: f64,
    /// Largest per-γ `Σ z²`, approximately χ² with `k − 1` degrees of freedom.
    pub max_chi2: f64,
}

pub fn mask_uniformity(draws: usize, seed: u64) -> MaskUniformity {
    let mut r = rng(seed);
    mask_uniformity_with(draws, |k, gamma| dropmix::synth::sample_mask(k, gamma, &mut r))
}

pub fn mask_uniformity_with(draws: usize, mut sample: impl FnMut(usize, f64) -> Vec<bool>) -> MaskUniformity {
    let k = 128;
    let mut out = MaskUniformity {
        beyond_3_sigma: 0,
        positions: 0,
        max_z: 0.0,
        max_chi2: 0.0,
    };
    for step in 1..=6 {
        let gamma = step as f64 / 10.0;
        let p = dropmix::synth::mixed_count(k, gamma) as f64 / k as f64;
        let mut hits = vec![0usize; k];
        for _ in 0..draws {
            for (j, keep) in sample(k, gamma).into_iter().enumerate() {
                if !keep {
                    hits[j] += 1;
                }
            }
        }
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &h in &hits {
            let z = (h as f64 - mean) / sigma;
            chi2 += z * z;
            out.max_z = out.max_z.max(z.abs());
            out.beyond_3_sigma += usize::from(z.abs() > 3.0);
            out.positions += 1;
        }
        out.max_chi2 = out.max_chi2.max(chi2);
    }
    out
}

impl MaskUniformity {
    /// Under uniform sampling about 0.27% of positions exceed 3σ by chance
    /// (≈2 of 768), so the count is compared with its binomial tail rather
    /// than required to be zero. The limits below each have a false-alarm
    /// rate under 0.1%.
    pub fn is_uniform(&self) -> bool {
        self.beyond_3_sigma <= 8 && self.max_z <= 5.0 && self.max_chi2 <= 182.0
    }
}
