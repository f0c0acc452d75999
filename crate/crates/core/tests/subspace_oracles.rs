mod common;

use common::{gaussian, rank_oracle, rng};
use llmfp_core::subspace::build_basis;
use llmfp_core::{Fingerprint, OrthoBasis, VectorMode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn residual_matches_svd_projection() {
    let mut r = rng(1);
    for _ in 0..10 {
        let w = gaussian(&mut r, 60, 7);
        let fp = Fingerprint::new("w", w.clone()).unwrap();
        let basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let u = w.svd(true, false).u.unwrap();
        let s = gaussian(&mut r, 60, 1);
        let oracle = (&s - &u * (u.transpose() * &s)).norm();
        let res = basis.residual(s.as_slice()).unwrap();
        assert!(
            (res.distance - oracle).abs() <= 1e-12 * s.norm(),
            "{} vs {oracle}",
            res.distance
        );
    }
}

#[test]
fn recovers_known_orthogonal_offset() {
    let mut r = rng(2);
    let w = gaussian(&mut r, 40, 5);
    let extra = gaussian(&mut r, 40, 1);
    let joined = DMatrix::from_columns(&[
        w.column(0),
        w.column(1),
        w.column(2),
        w.column(3),
        w.column(4),
        extra.column(0),
    ]);
    let q = joined.qr().q();
    let perp = q.column(5).into_owned();
    let x = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25, 1.5]);
    let s = &w * x + perp * 3.0;
    let fp = Fingerprint::new("w", w).unwrap();
    let res = build_basis(&fp, VectorMode::LogitsMode)
        .unwrap()
        .residual(s.as_slice())
        .unwrap();
    assert!((res.distance - 3.0).abs() < 1e-12);
}

#[test]
fn augmentation_count_matches_rank_oracle() {
    let mut r = rng(3);
    for trial in 0..20 {
        let (v, h) = (30 + trial, 3 + trial % 5);
        let w = gaussian(&mut r, v, h);
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for j in 0..12 {
            let col = match j % 3 {
                0 => (&w * gaussian(&mut r, h, 1)).as_slice().to_vec(),
                1 => gaussian(&mut r, v, 1).as_slice().to_vec(),
                _ => samples.last().cloned().unwrap_or_else(|| vec![1.0; v]),
            };
            samples.push(col);
        }
        let fp = Fingerprint::new("w", w.clone()).unwrap();
        let mut basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let mut added = 0;
        for s in &samples {
            let res = basis.residual(s).unwrap();
            if res.relative_distance > 1e-6 {
                basis.augment(&res).unwrap();
                added += 1;
            }
        }
        assert_eq!(added, rank_oracle(&w, &samples), "trial {trial}");
        assert!(basis.orthonormality_error() < 1e-12);
    }
}

#[test]
fn probability_basis_contains_ones() {
    let mut r = rng(4);
    let fp = Fingerprint::new("w", gaussian(&mut r, 25, 4)).unwrap();
    let basis = build_basis(&fp, VectorMode::ProbabilityMode).unwrap();
    assert_eq!(basis.rank(), 5);
    assert!(basis.residual(&[1.0; 25]).unwrap().distance < 1e-12);
}

proptest! {
    #[test]
    fn residual_properties(seed in 0u64..10_000, v in 6usize..40, h in 1usize..6) {
        let mut r = rng(seed);
        let w = gaussian(&mut r, v, h);
        let fp = Fingerprint::new("w", w.clone()).unwrap();
        let basis = build_basis(&fp, VectorMode::LogitsMode).unwrap();
        let s = gaussian(&mut r, v, 1);
        let res = basis.residual(s.as_slice()).unwrap();
        prop_assert!(res.distance <= norm(s.as_slice()) * (1.0 + 1e-12));
        let p = basis.project(s.as_slice()).unwrap();
        prop_assert!(basis.residual(&p).unwrap().relative_distance < 1e-10);
        let inside = &w * gaussian(&mut r, h, 1);
        prop_assert!(basis.residual(inside.as_slice()).unwrap().relative_distance < 1e-10);
        // the component is orthogonal to every column of W
        for j in 0..h {
            let c = w.column(j);
            let d: f64 = c.iter().zip(&res.component).map(|(a, b)| a * b).sum();
            prop_assert!(d.abs() < 1e-10 * c.norm() * norm(s.as_slice()));
        }
    }

    #[test]
    fn augmenting_keeps_orthonormal(seed in 0u64..10_000, extra in 1usize..8) {
        let mut r = rng(seed);
        let w = gaussian(&mut r, 30, 4);
        let mut basis = OrthoBasis::from_columns(30, (0..4).map(|j| w.column(j).as_slice().to_vec()).collect::<Vec<_>>().iter().map(|c| c.as_slice()), VectorMode::LogitsMode).unwrap();
        for _ in 0..extra {
            let s = gaussian(&mut r, 30, 1);
            let res = basis.residual(s.as_slice()).unwrap();
            basis.augment(&res).unwrap();
        }
        prop_assert_eq!(basis.rank(), 4 + extra);
        prop_assert!(basis.orthonormality_error() < 1e-12);
    }
}
