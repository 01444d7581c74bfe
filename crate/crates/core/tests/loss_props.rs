//! Closed values and invariances of the cross-view InfoNCE objective.

mod common;

use common::{random_matrix, rng};
use dropmix::{info_nce, DenseMatrix, LossConfig, NegativeBank, ViewEmbeddings};
use proptest::prelude::*;

fn views(local: DenseMatrix, global: DenseMatrix) -> ViewEmbeddings {
    ViewEmbeddings { local, global }
}

/// `-ln(e^{s_ii/τ} / Σ_k e^{s_ik/τ})` averaged over anchors, one direction,
/// computed from scalar loops.
fn oracle_one_direction(a: &DenseMatrix, b: &DenseMatrix, tau: f64) -> f64 {
    let cos = |x: &[f64], y: &[f64]| {
        let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        d / (nx * ny)
    };
    let n = a.rows();
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).map(|k| (cos(a.row(i), b.row(k)) / tau).exp()).sum();
        total += -(cos(a.row(i), b.row(i)) / tau).exp().ln() + denom.ln();
    }
    total / n as f64
}

#[test]
fn identical_embeddings_give_ln_n_for_any_tau() {
    for n in [2usize, 4, 16] {
        let row: Vec<f64> = (0..5).map(|j| 0.3 * j as f64 - 0.4).collect();
        let h = DenseMatrix::from_rows(&vec![row; n]).unwrap();
        for tau in [0.05, 0.2, 0.5, 1.0, 3.0] {
            for symmetric in [false, true] {
                let cfg = LossConfig {
                    tau,
                    symmetric,
                    ..Default::default()
                };
                let out = info_nce(&views(h.clone(), h.clone()), &NegativeBank::empty(n, 5), &cfg).unwrap();
                assert!((out.loss - (n as f64).ln()).abs() <= 1e-9, "n {n} tau {tau}");
            }
        }
    }
}

#[test]
fn orthonormal_pair_closed_value() {
    let h = DenseMatrix::identity(2);
    let cfg = LossConfig {
        tau: 1.0,
        symmetric: false,
        ..Default::default()
    };
    let out = info_nce(&views(h.clone(), h), &NegativeBank::empty(2, 2), &cfg).unwrap();
    let want = (1.0 + (-1.0f64).exp()).ln();
    assert!((out.loss - want).abs() <= 1e-9);
    assert!(out.anchor_terms.iter().all(|t| (t - want).abs() <= 1e-9));
}

#[test]
fn matches_scalar_oracle_on_random_views() {
    let mut r = rng(51);
    for tau in [0.2, 0.5, 1.0] {
        let (l, g) = (random_matrix(9, 4, &mut r), random_matrix(9, 4, &mut r));
        let fwd = oracle_one_direction(&l, &g, tau);
        let rev = oracle_one_direction(&g, &l, tau);
        let e = views(l, g);
        let bank = NegativeBank::empty(9, 4);
        let one = info_nce(
            &e,
            &bank,
            &LossConfig {
                tau,
                symmetric: false,
                ..Default::default()
            },
        )
        .unwrap();
        let both = info_nce(
            &e,
            &bank,
            &LossConfig {
                tau,
                symmetric: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((one.loss - fwd).abs() <= 1e-12);
        assert!((both.loss - 0.5 * (fwd + rev)).abs() <= 1e-12);
    }
}

#[test]
fn bank_copy_of_positive_raises_that_anchor_only() {
    let mut r = rng(52);
    let (l, g) = (random_matrix(6, 3, &mut r), random_matrix(6, 3, &mut r));
    let cfg = LossConfig {
        symmetric: false,
        ..Default::default()
    };
    let e = views(l, g.clone());
    let base = info_nce(&e, &NegativeBank::empty(6, 3), &cfg).unwrap();
    let mut per: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 6];
    per[2].push(g.row(2).to_vec());
    let with = info_nce(&e, &NegativeBank::from_vectors(3, per).unwrap(), &cfg).unwrap();
    assert!(with.anchor_terms[2] > base.anchor_terms[2]);
    for i in (0..6).filter(|&i| i != 2) {
        assert_eq!(with.anchor_terms[i], base.anchor_terms[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_rescaling_leaves_loss_unchanged(
        seed in any::<u64>(),
        n in 2usize..12,
        k in 1usize..6,
        c in 0.01f64..100.0,
        intra in any::<bool>(),
        symmetric in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let (l, g) = (random_matrix(n, k, &mut r), random_matrix(n, k, &mut r));
        prop_assume!(l.row_iter().chain(g.row_iter()).all(|row| row.iter().any(|v| v.abs() > 1e-3)));
        let per: Vec<Vec<Vec<f64>>> = (0..n).map(|i| vec![g.row((i + 1) % n).to_vec()]).collect();
        let bank = NegativeBank::from_vectors(k, per).unwrap();
        let cfg = LossConfig { tau: 0.5, include_intra_view_negatives: intra, symmetric };
        let row = seed as usize % n;
        let mut l2 = l.clone();
        let mut g2 = g.clone();
        l2.row_mut(row).iter_mut().for_each(|v| *v *= c);
        g2.row_mut((row + 1) % n).iter_mut().for_each(|v| *v *= c);
        let a = info_nce(&views(l, g), &bank, &cfg).unwrap().loss;
        let b = info_nce(&views(l2, g2), &bank, &cfg).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
    }
}
