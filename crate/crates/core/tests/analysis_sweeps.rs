mod common;

use common::{rmse_reference, ssd_reference};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sparkle_core::analysis::{
    basis_count_sweep, noise_location_sweep, overlap_matrix, random_lightmap, rmse, spectrum, ssd,
    test_noise_stability, NoiseMode, SimulatedSystem, SweepConfig,
};
use sparkle_core::calibrate::CalibrationConfig;
use sparkle_core::render::{Provenance, TransferMatrix};
use sparkle_core::rng;
use sparkle_core::scene::SceneConfig;

fn small_config() -> SweepConfig {
    SweepConfig {
        scene: SceneConfig::standard(5, 40, 0.3, 1.5, 0.2, 2),
        surface_seed: 1,
        calibration: CalibrationConfig {
            k: 25,
            ..CalibrationConfig::default()
        },
        test_images: 4,
        ..SweepConfig::default()
    }
}

#[test]
fn noise_free_sweeps_are_exact() {
    let cfg = small_config();
    for mode in [NoiseMode::Both, NoiseMode::TrainOnly, NoiseMode::TestOnly] {
        let r = noise_location_sweep(&cfg, &[0.0], &[0, 1], mode).unwrap();
        assert!(r.records.iter().all(|rec| rec.metric < 1e-12), "{mode:?}");
    }
    let r = basis_count_sweep(&cfg, &[0, 5, 25], 0.0, &[0, 1]).unwrap();
    assert!(r.records.iter().all(|rec| rec.metric < 1e-8));
    assert_eq!(r.scene, Some(cfg.scene));
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = small_config();
    let a = noise_location_sweep(&cfg, &[0.0, 0.01], &[3, 4], NoiseMode::Both).unwrap();
    let b = noise_location_sweep(&cfg, &[0.0, 0.01], &[3, 4], NoiseMode::Both).unwrap();
    assert_eq!(a, b);
    let bits = |r: &sparkle_core::analysis::SweepResult| {
        r.records
            .iter()
            .map(|x| x.metric.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    // records come back in grid order
    let order: Vec<(f64, u64)> = a.records.iter().map(|r| (r.value, r.seed)).collect();
    assert_eq!(order, vec![(0.0, 3), (0.0, 4), (0.01, 3), (0.01, 4)]);
}

#[test]
fn both_noise_sources_at_least_test_noise() {
    let cfg = small_config();
    let seeds: Vec<u64> = (0..4).collect();
    let both = noise_location_sweep(&cfg, &[0.005, 0.02], &seeds, NoiseMode::Both).unwrap();
    let test = noise_location_sweep(&cfg, &[0.005, 0.02], &seeds, NoiseMode::TestOnly).unwrap();
    for ((v, mb, _), (_, mt, _)) in both.summary().into_iter().zip(test.summary()) {
        assert!(mb >= mt, "sigma {v}: {mb} < {mt}");
    }
}

#[test]
fn basis_sweep_rejects_descending_k() {
    assert!(basis_count_sweep(&small_config(), &[10, 5], 0.0, &[0]).is_err());
    assert!(noise_location_sweep(&small_config(), &[-0.1], &[0], NoiseMode::Both).is_err());
}

#[test]
fn test_noise_rmse_grows_and_respects_bound() {
    let cfg = small_config();
    let sys = SimulatedSystem::new(&cfg.scene, 1).unwrap();
    let a = &sys.truth;
    let clean: Vec<DVector<f64>> = (0..5)
        .map(|i| sys.observe(a, &random_lightmap(5, 5, 7, i), 0.0, 0, 0))
        .collect();
    let sigmas = [0.0, 0.001, 0.01, 0.05];
    let r = test_noise_stability(a, &clean, &sigmas, &[0, 1, 2]).unwrap();
    let summary = r.summary();
    assert_eq!(summary[0].1, 0.0);
    for w in summary.windows(2) {
        assert!(w[1].1 >= w[0].1);
    }
    let kappa = spectrum(a).unwrap().condition_number;
    let (m, n) = (a.rows() as f64, a.cols() as f64);
    for (sigma, mean, _) in summary {
        assert!(
            mean <= kappa * sigma * (m / n).sqrt(),
            "sigma {sigma}: {mean}"
        );
    }
}

#[test]
fn spectrum_invariant_under_permutation() {
    let mut r = rng::stream(6, "perm", 0);
    let m = DMatrix::from_fn(12, 7, |_, _| r.random::<f64>());
    let mut rows: Vec<usize> = (0..12).collect();
    let mut cols: Vec<usize> = (0..7).collect();
    rows.shuffle(&mut r);
    cols.shuffle(&mut r);
    let p = m.select_rows(&rows).select_columns(&cols);
    let mk =
        |x: DMatrix<f64>| TransferMatrix::new(x, Provenance::Simulated, None, (7, 1, 1)).unwrap();
    let s1 = spectrum(&mk(m)).unwrap();
    let s2 = spectrum(&mk(p)).unwrap();
    assert!((s1.condition_number - s2.condition_number).abs() <= 1e-10 * s1.condition_number);
    for (a, b) in s1.singular_values.iter().zip(&s2.singular_values) {
        assert!((a - b).abs() <= 1e-12 * s1.singular_values[0]);
    }
}

#[test]
fn wide_matrix_is_rank_deficient() {
    let a = TransferMatrix::new(
        DMatrix::from_element(2, 3, 1.0),
        Provenance::Simulated,
        None,
        (3, 1, 1),
    )
    .unwrap();
    let s = spectrum(&a).unwrap();
    assert_eq!(s.singular_values.len(), 3);
    assert_eq!(s.rank_deficit, 2);
    assert!(s.condition_number.is_infinite());
}

#[test]
fn simulated_overlap_is_small_off_diagonal() {
    let sys = SimulatedSystem::new(&SceneConfig::default_sweep(), 0).unwrap();
    let o = overlap_matrix(&sys.truth.matrix, 0.1).unwrap();
    assert!(o.flagged.is_empty());
    assert!(o.max_off_diagonal() < 0.2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlap_is_symmetric_with_unit_diagonal(seed in any::<u64>(), threshold in 0.05f64..1.0) {
        let mut r = rng::stream(seed, "overlap", 0);
        let y = DMatrix::from_fn(30, 6, |_, _| if r.random_bool(0.3) { r.random::<f64>() } else { 0.0 });
        let o = overlap_matrix(&y, threshold).unwrap();
        for i in 0..6 {
            prop_assert_eq!(o.values[(i, i)], 1.0);
            for j in 0..6 {
                prop_assert_eq!(o.values[(i, j)], o.values[(j, i)]);
                prop_assert!((0.0..=1.0).contains(&o.values[(i, j)]));
            }
        }
    }

    #[test]
    fn metrics_match_loop_references(seed in any::<u64>(), len in 1usize..200) {
        let mut r = rng::stream(seed, "metrics", 0);
        let a: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        prop_assert!((ssd(&a, &b) - ssd_reference(&a, &b)).abs() <= 1e-12 * ssd_reference(&a, &b).max(1.0));
        prop_assert!((rmse(&a, &b) - rmse_reference(&a, &b)).abs() <= 1e-12);
    }
}
