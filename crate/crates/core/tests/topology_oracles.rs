mod common;

use common::{naive_h1, sweep_h0};
use ppg_gate_core::matrix::Matrix;
use ppg_gate_core::topology::{delay_embed, rips_h1, signature, sublevel_h0, TopoConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn h1_pairs(points: &Matrix) -> Vec<(f64, f64)> {
    let d = rips_h1(points, None, 512).unwrap();
    assert!(d.pairs.iter().all(|b| !b.capped));
    let mut v: Vec<_> = d.pairs.iter().map(|b| (b.birth, b.death)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[test]
fn h0_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let len = rng.random_range(2..=64);
        // Every other case draws from a coarse grid to exercise ties.
        let seq: Vec<f64> = (0..len)
            .map(|_| if case % 2 == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(0..5) as f64 })
            .collect();
        let mut got: Vec<(f64, f64)> = sublevel_h0(&seq).unwrap().finite().map(|b| (b.birth, b.death)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, sweep_h0(&seq), "{seq:?}");
    }
}

#[test]
fn h1_matches_naive_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let m = rng.random_range(3..=12);
        let dim = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..dim)
                    .map(|_| if case % 3 == 0 { rng.random_range(0..3) as f64 } else { rng.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let cloud = Matrix::from_rows(&rows).unwrap();
        let got = h1_pairs(&cloud);
        let want = naive_h1(&cloud);
        assert_eq!(got.len(), want.len(), "case {case}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12, "case {case}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn h1_of_sampled_circle_has_one_dominant_loop() {
    let pts: Vec<Vec<f64>> = (0..40)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU / 40.0;
            vec![t.cos(), t.sin()]
        })
        .collect();
    let d = rips_h1(&Matrix::from_rows(&pts).unwrap(), None, 512).unwrap();
    let mut lifetimes: Vec<f64> = d.pairs.iter().map(|b| b.lifetime()).collect();
    lifetimes.sort_by(|a, b| b.total_cmp(a));
    assert!(lifetimes[0] > 1.0);
    assert!(lifetimes.get(1).map_or(true, |&l| l < 0.1));
}

#[test]
fn h0_is_stable_under_small_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-3;
    for _ in 0..50 {
        let seq: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let moved: Vec<f64> = seq.iter().map(|v| v + rng.random_range(-eps..eps)).collect();
        let a = sublevel_h0(&seq).unwrap();
        let b = sublevel_h0(&moved).unwrap();
        // Bars that survive the perturbation keep their endpoints within eps:
        // match each long bar of `a` to some bar of `b`.
        for bar in a.finite().filter(|b| b.lifetime() > 4.0 * eps) {
            assert!(
                b.pairs.iter().any(|c| (c.birth - bar.birth).abs() <= eps && (c.death - bar.death).abs() <= eps),
                "{bar:?}"
            );
        }
    }
}

#[test]
fn signature_is_deterministic_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let emb: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..2.0)).collect();
    let cfg = TopoConfig::default();
    let a = signature(&emb, &cfg).unwrap();
    assert_eq!(a, signature(&emb, &cfg).unwrap());
    let shifted: Vec<f64> = emb.iter().map(|v| v + 0.5).collect();
    let b = signature(&shifted, &cfg).unwrap();
    assert_eq!(a.n_h1, b.n_h1);
    assert!((a.sum_h1 - b.sum_h1).abs() < 1e-9);
    assert!((a.max_h0 - b.max_h0).abs() < 1e-9 && (a.mean_h0 - b.mean_h0).abs() < 1e-9);
    assert!(a.mean_h0 <= a.max_h0 && a.n_h1 > 0);
    assert_eq!(delay_embed(&emb, 3, 1).unwrap().rows(), 126);
}
