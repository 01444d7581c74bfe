//! Negative synthesis: convexity, retention, subsumption and determinism.

mod common;

use common::{random_matrix, rng, selected_table};
use dropmix::synth::{cut_mix, drop_mix, mix_pair, mixed_count, sample_mask};
use dropmix::{synthesize_bank, MixConfig, MixMode, NegativeBank};
use proptest::prelude::*;

fn bank(source: &dropmix::DenseMatrix, mode: MixMode, lambda: f64, gamma: f64, seed: u64) -> NegativeBank {
    let table = selected_table(source);
    let cfg = MixConfig {
        mode,
        lambda,
        gamma,
        synth_per_anchor: 8,
    };
    synthesize_bank(source, &table, &cfg, seed, 3).unwrap()
}

fn bits(b: &NegativeBank) -> Vec<u64> {
    b.vectors().data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn dropmix_full_gamma_is_mixup_bitwise() {
    let mut r = rng(31);
    let source = random_matrix(30, 16, &mut r);
    for lambda in [0.0, 0.2, 0.37, 1.0] {
        let d = bank(&source, MixMode::Dropmix, lambda, 1.0, 5);
        let m = bank(&source, MixMode::Mixup, lambda, 0.3, 5);
        assert_eq!(bits(&d), bits(&m));
        let pairs = |b: &NegativeBank| b.provenance().iter().map(|p| (p.n1, p.n2)).collect::<Vec<_>>();
        assert_eq!(pairs(&d), pairs(&m));
    }
}

#[test]
fn dropmix_zero_gamma_copies_first_source() {
    let mut r = rng(32);
    let source = random_matrix(30, 16, &mut r);
    let b = bank(&source, MixMode::Dropmix, 0.2, 0.0, 9);
    for (row, p) in b.vectors().row_iter().zip(b.provenance()) {
        let want: Vec<u64> = source.row(p.n1).iter().map(|v| v.to_bits()).collect();
        let got: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn cutmix_is_dropmix_with_zero_lambda() {
    let mut r = rng(33);
    let source = random_matrix(30, 16, &mut r);
    for gamma in [0.1, 0.3, 0.6, 1.0] {
        let c = bank(&source, MixMode::Cutmix, 0.25, gamma, 4);
        let d = bank(&source, MixMode::Dropmix, 0.0, gamma, 4);
        assert_eq!(bits(&c), bits(&d));
    }
}

#[test]
fn bank_sources_come_from_hard_sets() {
    let mut r = rng(34);
    let source = random_matrix(25, 6, &mut r);
    let table = selected_table(&source);
    let b = synthesize_bank(&source, &table, &MixConfig::default(), 1, 0).unwrap();
    assert_eq!(b.len(), 25 * 64);
    for i in 0..25 {
        for p in &b.provenance()[b.range(i)] {
            assert_ne!(p.n1, p.n2);
            assert!(table.hard_set[i].contains(&p.n1) && table.hard_set[i].contains(&p.n2));
        }
    }
    assert!(b.vectors().is_finite());
}

#[test]
fn bank_is_deterministic_and_round_dependent() {
    let mut r = rng(35);
    let source = random_matrix(30, 12, &mut r);
    let table = selected_table(&source);
    let cfg = MixConfig::default();
    let a = synthesize_bank(&source, &table, &cfg, 77, 2).unwrap();
    let b = synthesize_bank(&source, &table, &cfg, 77, 2).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.provenance(), b.provenance());
    let other_round = synthesize_bank(&source, &table, &cfg, 77, 3).unwrap();
    let other_seed = synthesize_bank(&source, &table, &cfg, 78, 2).unwrap();
    assert_ne!(bits(&a), bits(&other_round));
    assert_ne!(bits(&a), bits(&other_seed));
}

#[test]
fn none_mode_gives_an_empty_bank() {
    let mut r = rng(36);
    let source = random_matrix(10, 4, &mut r);
    let b = bank(&source, MixMode::None, 0.2, 0.3, 0);
    assert!(b.is_empty());
    assert_eq!(b.n_anchors(), 10);
}

#[test]
fn cutmix_changes_exactly_the_mixed_positions() {
    let k = 128;
    let h1: Vec<f64> = (0..k).map(|j| j as f64).collect();
    let h2: Vec<f64> = (0..k).map(|j| -1.0 - j as f64).collect();
    let mask = sample_mask(k, 0.3, &mut rng(37));
    let out = cut_mix(&h1, &h2, &mask).unwrap();
    let diffs = out.iter().zip(&h1).filter(|(a, b)| a != b).count();
    assert_eq!(diffs, 38);
}

fn vec_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, k)
}

proptest! {
    #[test]
    fn mixing_is_coordinatewise_convex(
        (h1, h2) in (1usize..40).prop_flat_map(|k| (vec_strategy(k), vec_strategy(k))),
        lambda in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mask = sample_mask(h1.len(), gamma, &mut rng(seed));
        let outs = [
            mix_pair(&h1, &h2, lambda).unwrap(),
            drop_mix(&h1, &h2, lambda, &mask).unwrap(),
            cut_mix(&h1, &h2, &mask).unwrap(),
        ];
        for out in &outs {
            for j in 0..h1.len() {
                let (lo, hi) = (h1[j].min(h2[j]), h1[j].max(h2[j]));
                prop_assert!(out[j] >= lo - 1e-12 && out[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn dropmix_retains_unmixed_dimensions(
        (h1, h2) in (1usize..64).prop_flat_map(|k| (vec_strategy(k), vec_strategy(k))),
        lambda in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let k = h1.len();
        let mask = sample_mask(k, gamma, &mut rng(seed));
        for out in [drop_mix(&h1, &h2, lambda, &mask).unwrap(), cut_mix(&h1, &h2, &mask).unwrap()] {
            let changed = out.iter().zip(&h1).filter(|(a, b)| a != b).count();
            prop_assert!(changed <= mixed_count(k, gamma));
            for j in (0..k).filter(|&j| mask[j]) {
                prop_assert_eq!(out[j].to_bits(), h1[j].to_bits());
            }
        }
    }
}
