mod common;

use common::bisection_fit;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sparkle_core::hdr::{
    average_backgrounds, hdr_merge, merge_pixel, subtract_background, Exposure, ExposureStack,
    DEFAULT_WINDOW,
};
use sparkle_core::image::{Grid, SensorImage};
use sparkle_core::rng;

#[test]
fn closed_form_matches_numeric_minimiser() {
    let times = [0.01, 0.04, 0.16, 0.64, 2.56];
    let mut r = rng::stream(11, "hdr-oracle", 0);
    let n = 10_000;
    let grids: Vec<Grid> = {
        let radiance: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(r.random_range(-1.5..1.5)))
            .collect();
        times
            .iter()
            .map(|&t| {
                let data = radiance
                    .iter()
                    .map(|&s| {
                        (s * t * (1.0 + 0.05 * r.sample::<f64, _>(StandardNormal))).clamp(0.0, 1.0)
                    })
                    .collect();
                Grid::from_vec(100, 100, 1, data).unwrap()
            })
            .collect()
    };
    let stack = ExposureStack::new(
        times
            .iter()
            .zip(&grids)
            .map(|(&time, g)| Exposure {
                time,
                image: g.clone(),
            })
            .collect(),
    )
    .unwrap();
    let merged = hdr_merge(&stack).unwrap();
    let mut checked = 0;
    for p in 0..n {
        let vals: Vec<f64> = grids.iter().map(|g| g.data[p]).collect();
        if let Some(s) = bisection_fit(&times, &vals, DEFAULT_WINDOW) {
            checked += 1;
            assert!((merged.image.data()[p] - s).abs() <= 1e-9, "pixel {p}");
        } else {
            assert!(merged.fallback_pixels.contains(&p));
        }
    }
    assert!(checked > 9_000);
}

#[test]
fn window_bounds_are_exact() {
    let (lo, hi) = DEFAULT_WINDOW;
    let up = |v: f64| f64::from_bits(v.to_bits() + 1);
    let down = |v: f64| f64::from_bits(v.to_bits() - 1);
    // samples sitting on a bound are ignored
    assert_eq!(
        merge_pixel(&[1.0, 2.0, 3.0], &[lo, 0.5, hi], DEFAULT_WINDOW),
        (0.25, false)
    );
    // one ulp inside counts
    let (s, _) = merge_pixel(&[1.0, 2.0], &[up(lo), down(hi)], DEFAULT_WINDOW);
    assert_eq!(s, (up(lo) + 2.0 * down(hi)) / 5.0);
    assert_eq!(merge_pixel(&[1.0], &[down(lo)], DEFAULT_WINDOW).1, true);
    assert_eq!(merge_pixel(&[1.0], &[up(hi)], DEFAULT_WINDOW).1, true);
}

#[test]
fn estimator_variance_matches_theory() {
    let times = [0.5, 1.0, 2.0];
    let (s, sigma) = (0.3, 0.01);
    let trials = 20_000;
    let mut r = rng::stream(5, "hdr-variance", 0);
    let est: Vec<f64> = (0..trials)
        .map(|_| {
            let vals: Vec<f64> = times
                .iter()
                .map(|&t| s * t + sigma * r.sample::<f64, _>(StandardNormal))
                .collect();
            merge_pixel(&times, &vals, DEFAULT_WINDOW).0
        })
        .collect();
    let mean = est.iter().sum::<f64>() / trials as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let theory = sigma * sigma / times.iter().map(|t| t * t).sum::<f64>();
    assert!((var / theory - 1.0).abs() < 0.2, "{var} vs {theory}");
    assert!((mean - s).abs() < 4.0 * theory.sqrt() / (trials as f64).sqrt());
}

#[test]
fn background_average_and_clamped_subtraction() {
    let frames = vec![
        Grid::from_vec(2, 1, 1, vec![0.1, 0.3]).unwrap(),
        Grid::from_vec(2, 1, 1, vec![0.3, 0.1]).unwrap(),
    ];
    let bg = average_backgrounds(&frames).unwrap();
    assert_eq!(bg.count, 2);
    assert!((bg.image.data[0] - 0.2).abs() < 1e-15);
    let y = SensorImage::from_vec(2, 1, 1, vec![0.5, 0.1]).unwrap();
    let out = subtract_background(&y, &bg).unwrap();
    assert!((out.data()[0] - 0.3).abs() < 1e-15);
    assert_eq!(out.data()[1], 0.0);
    assert!(average_backgrounds(&[]).is_err());
    let wrong = SensorImage::from_vec(1, 1, 1, vec![0.5]).unwrap();
    assert!(subtract_background(&wrong, &bg).is_err());
}

#[test]
fn invalid_stacks_rejected() {
    let g = Grid::from_vec(1, 1, 1, vec![0.5]).unwrap();
    let e = |time: f64| Exposure {
        time,
        image: g.clone(),
    };
    assert!(ExposureStack::new(vec![]).is_err());
    assert!(ExposureStack::new(vec![e(0.0)]).is_err());
    assert!(ExposureStack::new(vec![e(2.0), e(1.0)]).is_err());
    assert!(ExposureStack::new(vec![e(1.0), e(1.0)]).is_err());
    assert!(ExposureStack::with_window(vec![e(1.0)], (0.7, 0.1)).is_err());
    let other = Exposure {
        time: 2.0,
        image: Grid::from_vec(2, 1, 1, vec![0.5, 0.5]).unwrap(),
    };
    assert!(ExposureStack::new(vec![e(1.0), other]).is_err());
}

fn in_window() -> impl Strategy<Value = f64> {
    0.11f64..0.69
}

proptest! {
    #[test]
    fn time_scaling_is_equivariant(
        vals in prop::collection::vec(in_window(), 1..6),
        c in 0.01f64..100.0,
    ) {
        let times: Vec<f64> = (0..vals.len()).map(|k| 2f64.powi(k as i32)).collect();
        let scaled: Vec<f64> = times.iter().map(|t| t * c).collect();
        let (s1, _) = merge_pixel(&times, &vals, DEFAULT_WINDOW);
        let (s2, _) = merge_pixel(&scaled, &vals, DEFAULT_WINDOW);
        prop_assert!((s2 * c - s1).abs() <= 1e-12 * s1.abs());
    }

    #[test]
    fn estimate_lies_between_sample_ratios(
        vals in prop::collection::vec(0.0f64..1.0, 1..6),
    ) {
        let times: Vec<f64> = (0..vals.len()).map(|k| 0.1 * 3f64.powi(k as i32)).collect();
        let (s, fell_back) = merge_pixel(&times, &vals, DEFAULT_WINDOW);
        prop_assert!(s >= 0.0 && s.is_finite());
        if !fell_back {
            let ratios: Vec<f64> = times
                .iter()
                .zip(&vals)
                .filter(|(_, &v)| v > 0.1 && v < 0.7)
                .map(|(t, v)| v / t)
                .collect();
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            prop_assert!(s >= lo * (1.0 - 1e-12) && s <= hi * (1.0 + 1e-12));
        }
    }

    #[test]
    fn widening_window_keeps_fits_of_interior_samples(
        vals in prop::collection::vec(in_window(), 1..6),
        lo in 0.0f64..0.1,
        hi in 0.7f64..1.0,
    ) {
        let times: Vec<f64> = (0..vals.len()).map(|k| 1.0 + k as f64).collect();
        let narrow = merge_pixel(&times, &vals, DEFAULT_WINDOW);
        let wide = merge_pixel(&times, &vals, (lo, hi));
        prop_assert_eq!(narrow, wide);
    }
}
