use super::*;
use proptest::prelude::*;

fn spec(mode: PhaseMode, m: usize) -> SyntheticClusterSpec {
    SyntheticClusterSpec::new(59, 7, m, mode)
}

#[test]
fn tied_clusters_have_rank_two() {
    for seed in 0..20 {
        let x = synthetic_cluster(&spec(PhaseMode::Tied, 12), seed).unwrap();
        let sig = rank_signature(&x, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(sig.numerical_rank, 2, "seed {seed}");
        assert_eq!(sig.verdict, Verdict::Disc);
        assert!(sig.ratio(3) < 1e-10);
    }
}

#[test]
fn independent_clusters_have_rank_four() {
    for seed in 0..20 {
        let x = synthetic_cluster(&spec(PhaseMode::Independent, 12), seed).unwrap();
        let sig = rank_signature(&x, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(sig.numerical_rank, 4, "seed {seed}");
        assert_eq!(sig.verdict, Verdict::Torus);
        assert!(sig.ratio(5) < 1e-10 && sig.ratio(4) > 1e-3);
    }
}

#[test]
fn gaussian_matrix_is_full_rank() {
    let mut rng = seeds::rng(0, "test", 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(59 * 59, 10, |_, _| normal.sample(&mut rng));
    let sig = rank_signature(&x, DEFAULT_RANK_TOLERANCE).unwrap();
    assert_eq!(sig.numerical_rank, 10);
    assert_eq!(sig.verdict, Verdict::Indeterminate);
    assert_eq!(sig.elbow_verdict(DEFAULT_ELBOW_ENERGY), Verdict::Indeterminate);
}

#[test]
fn factors_fit_the_matching_mode_exactly() {
    for seed in 0..5 {
        let tied = synthetic_cluster(&spec(PhaseMode::Tied, 6), seed).unwrap();
        assert!(factor_fit_residual(&tied, &disc_factor(59, 7)).unwrap() < 1e-10);
        let indep = synthetic_cluster(&spec(PhaseMode::Independent, 6), seed).unwrap();
        assert!(factor_fit_residual(&indep, &torus_factor(59, 7)).unwrap() < 1e-10);
        // the disc factor cannot explain independent phases
        assert!(factor_fit_residual(&indep, &disc_factor(59, 7)).unwrap() > 1e-3);
    }
}

#[test]
fn custom_phases_reproduce_the_formula() {
    let phases = vec![(0.3, 1.1), (2.0, 0.0)];
    let x = synthetic_cluster(&spec(PhaseMode::Custom(phases.clone()), 2), 0).unwrap();
    let (n, f) = (59usize, 7usize);
    for &(a, b) in &[(0usize, 0usize), (3, 58), (41, 17)] {
        for (i, (l, r)) in phases.iter().enumerate() {
            let ta = TAU * (f * a) as f64 / n as f64;
            let tb = TAU * (f * b) as f64 / n as f64;
            let want = (ta + l).cos() + (tb + r).cos();
            assert!((x[(a * n + b, i)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert_eq!(
        synthetic_cluster(&spec(PhaseMode::Tied, 1), 0),
        Err(GeometryError::TooFewNeurons(1))
    );
    let mut s = spec(PhaseMode::Tied, 3);
    s.n = 2;
    s.f = 1;
    assert_eq!(synthetic_cluster(&s, 0), Err(GeometryError::ModulusTooSmall(2)));
    assert!(matches!(
        synthetic_cluster(&spec(PhaseMode::Custom(vec![(0.0, 0.0)]), 3), 0),
        Err(GeometryError::BadPhases { .. })
    ));
    let zero = DMatrix::zeros(9, 3);
    assert_eq!(rank_signature(&zero, 1e-8).unwrap_err(), GeometryError::ZeroMatrix);
}

#[test]
fn noise_is_reproducible_and_breaks_exact_rank() {
    let mut s = spec(PhaseMode::Tied, 8);
    s.noise_std = 0.05;
    let a = synthetic_cluster(&s, 4).unwrap();
    assert_eq!(a, synthetic_cluster(&s, 4).unwrap());
    let sig = rank_signature(&a, DEFAULT_RANK_TOLERANCE).unwrap();
    assert_eq!(sig.numerical_rank, 8);
    assert_eq!(sig.elbow_verdict(DEFAULT_ELBOW_ENERGY), Verdict::Disc);
}

#[test]
fn pca_of_tied_cluster_is_planar() {
    let x = synthetic_cluster(&spec(PhaseMode::Tied, 10), 1).unwrap();
    let pca = pca_cluster(&x, 2).unwrap();
    assert!((pca.cumulative(2) - 1.0).abs() < 1e-10);
    assert!(!pca.padded);
    assert_eq!(pca.elbow_verdict(DEFAULT_ELBOW_ENERGY), Verdict::Disc);
    // asking for more components than exist pads with zeros
    let wide = pca_cluster(&x, 5).unwrap();
    assert!(wide.padded);
    assert!(wide.explained_variance_ratios[2..5].iter().all(|&v| v < 1e-15));
}

#[test]
fn pca_of_many_independent_neurons_splits_evenly() {
    // uniformly drawn phases only even out for thousands of neurons
    let s = SyntheticClusterSpec::new(13, 1, 4000, PhaseMode::Independent);
    let x = synthetic_cluster(&s, 0).unwrap();
    let pca = pca_cluster(&x, 4).unwrap();
    for &r in &pca.explained_variance_ratios[..4] {
        assert!((r - 0.25).abs() < 0.02, "{:?}", &pca.explained_variance_ratios[..4]);
    }
    assert_eq!(pca.elbow_verdict(DEFAULT_ELBOW_ENERGY), Verdict::Torus);
}

#[test]
fn pca_projections_match_scores() {
    let x = synthetic_cluster(&spec(PhaseMode::Independent, 6), 2).unwrap();
    let pca = pca_cluster(&x, 3).unwrap();
    // scores of distinct components are orthogonal with squared norms in
    // proportion to the ratios
    let total: f64 = {
        let mut c = x.clone();
        for mut col in c.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        c.norm_squared()
    };
    for i in 0..3 {
        let pi = pca.projections.column(i);
        assert!((pi.norm_squared() / total - pca.explained_variance_ratios[i]).abs() < 1e-10);
        for j in 0..i {
            assert!(pi.dot(&pca.projections.column(j)).abs() < 1e-8 * total);
        }
    }
    let csv = pca_csv(&pca, 59, 2);
    assert!(csv.starts_with("a,b,pc1,pc2,pc3,label\n"));
    assert_eq!(csv.lines().count(), 59 * 59 + 1);
    assert!(csv.lines().nth(2).unwrap().ends_with(",2"));
}

#[test]
fn torus_maps() {
    assert_eq!(torus_to_circle([1.0, 0.0, 1.0, 0.0]), [1.0, 0.0]);
    assert_eq!(torus_to_circle([0.0, 1.0, 0.0, 1.0]), [-1.0, 0.0]);
    assert_eq!(disc_projection([1.0, 0.0, -1.0, 0.0]), [0.0, 0.0]);
    assert_eq!(disc_projection([0.0; 4]), [0.0, 0.0]);
    let n = 59;
    for a in 0..n {
        for b in 0..n {
            let (u, v) = (TAU * a as f64 / n as f64, TAU * b as f64 / n as f64);
            let y = torus_to_circle([u.cos(), u.sin(), v.cos(), v.sin()]);
            assert!((y[0] - (u + v).cos()).abs() < 1e-12 && (y[1] - (u + v).sin()).abs() < 1e-12);
        }
    }
    let torus = torus_factor(n, 3);
    let disc = disc_factor(n, 3);
    for row in 0..n * n {
        let t = [torus[(row, 0)], torus[(row, 1)], torus[(row, 2)], torus[(row, 3)]];
        assert_eq!(disc_projection(t), [disc[(row, 0)], disc[(row, 1)]]);
    }
}

proptest! {
    #[test]
    fn circle_map_preserves_unit_norm(u in 0.0..TAU, v in 0.0..TAU) {
        let y = torus_to_circle([u.cos(), u.sin(), v.cos(), v.sin()]);
        prop_assert!(((y[0] * y[0] + y[1] * y[1]).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_ratios_ignore_column_order_and_scale(seed in 0u64..50, scale in 0.1f64..10.0) {
        let s = SyntheticClusterSpec { n: 11, f: 2, m: 6, phase_mode: PhaseMode::Independent, noise_std: 0.1 };
        let x = synthetic_cluster(&s, seed).unwrap();
        let base = pca_cluster(&x, 6).unwrap();
        let mut cols: Vec<usize> = (0..6).collect();
        cols.rotate_left((seed % 6) as usize);
        cols.swap(0, 5);
        let permuted = DMatrix::from_fn(x.nrows(), 6, |r, c| x[(r, cols[c])] * scale);
        let other = pca_cluster(&permuted, 6).unwrap();
        for (a, b) in base.explained_variance_ratios.iter().zip(&other.explained_variance_ratios) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
