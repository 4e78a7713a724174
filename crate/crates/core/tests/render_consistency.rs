use nalgebra::{DVector, Point3, Vector3};
use proptest::prelude::*;
use rand::Rng;
use sparkle_core::image::Lightmap;
use sparkle_core::render::{
    coverage_probability_analytic, coverage_probability_mc, diffuse_transfer_matrix,
    facet_pixel_map, render_with, transfer_matrix_from, CoverageModel, LightTransport,
};
use sparkle_core::rng;
use sparkle_core::scene::{Scene, SceneConfig};

fn random_map(w: usize, h: usize, c: usize, seed: u64, i: u64) -> Lightmap {
    let mut r = rng::stream(seed, "render-test", i);
    Lightmap::from_vec(w, h, c, (0..w * h * c).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn glitter() -> Scene {
    SceneConfig::standard(6, 30, 0.3, 1.5, 0.2, 2)
        .build(9)
        .unwrap()
}

#[test]
fn rendering_equals_matrix_product() {
    let scene = glitter();
    let lt = LightTransport::trace(&scene);
    for channels in [1, 3] {
        let a = transfer_matrix_from(&lt, &scene, channels).unwrap();
        let count = if channels == 1 { 100 } else { 10 };
        for i in 0..count {
            let x = random_map(6, 6, channels, 1, i);
            let y = render_with(&lt, &scene, &x).unwrap();
            let ax = &a.matrix * DVector::from_column_slice(x.data());
            let err = y
                .data()
                .iter()
                .zip(ax.iter())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-10, "map {i}: {err}");
        }
    }
}

#[test]
fn superposition() {
    let scene = glitter();
    let lt = LightTransport::trace(&scene);
    for i in 0..20 {
        let x1 = random_map(6, 6, 1, 2, 2 * i);
        let x2 = random_map(6, 6, 1, 2, 2 * i + 1);
        let (a, b) = (0.3 + i as f64 * 0.1, 1.7 - i as f64 * 0.05);
        let mix: Vec<f64> = x1
            .data()
            .iter()
            .zip(x2.data())
            .map(|(p, q)| a * p + b * q)
            .collect();
        let ym = render_with(&lt, &scene, &Lightmap::from_vec(6, 6, 1, mix).unwrap()).unwrap();
        let y1 = render_with(&lt, &scene, &x1).unwrap();
        let y2 = render_with(&lt, &scene, &x2).unwrap();
        for k in 0..ym.len() {
            let expect = a * y1.data()[k] + b * y2.data()[k];
            assert!((ym.data()[k] - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn matrix_is_nonnegative_and_normalised() {
    let scene = glitter();
    let a = transfer_matrix_from(&LightTransport::trace(&scene), &scene, 1).unwrap();
    assert!(a.matrix.iter().all(|&v| v >= 0.0));
    let max = a.matrix.max();
    assert!(max <= 1.0 + 1e-12 && max > 0.25, "{max}");
}

#[test]
fn trace_is_deterministic() {
    let scene = glitter();
    let a = transfer_matrix_from(&LightTransport::trace(&scene), &scene, 1).unwrap();
    let b = transfer_matrix_from(&LightTransport::trace(&scene), &scene, 1).unwrap();
    assert_eq!(a, b);
}

/// Pixel hit by the mirror image of the camera through facet point `q` on
/// the flat plane z = 0, with fractional screen coordinates.
fn mirror_oracle(scene: &Scene, q: Point3<f64>) -> Option<(usize, f64, f64)> {
    let s = &scene.screen;
    let c = Vector3::from(scene.camera.position);
    let image = Vector3::new(c.x, c.y, -c.z);
    let w = s.pixel_width;
    let p00 = s.pixel_center(0, 0).coords;
    let u = (s.pixel_center(0, 1).coords - p00) / w;
    let v = (s.pixel_center(1, 0).coords - p00) / w;
    let n = u.cross(&v);
    let dir = q.coords - image;
    let t = (p00 - image).dot(&n) / dir.dot(&n);
    let hit = image + dir * t;
    let corner = p00 - (u + v) * (0.5 * w);
    let fc = (hit - corner).dot(&u) / w;
    let fr = (hit - corner).dot(&v) / w;
    if fc < 0.0 || fr < 0.0 || fc >= s.width_pixels as f64 || fr >= s.height_pixels as f64 {
        return None;
    }
    Some((fr as usize * s.width_pixels + fc as usize, fr, fc))
}

#[test]
fn flat_mirror_matches_closed_form() {
    let scene = SceneConfig::standard(7, 25, 0.0, 1.5, 0.4, 1)
        .build(0)
        .unwrap();
    let map = facet_pixel_map(&scene);
    let cfg = &scene.surface.config;
    let near_edge = |f: f64| (f - f.round()).abs() < 1e-9;
    let mut hits = 0;
    for (i, got) in map.iter().enumerate() {
        let q = cfg.facet_center(i / cfg.cols, i % cfg.cols);
        match mirror_oracle(&scene, q) {
            Some((pixel, fr, fc)) => {
                hits += 1;
                if !near_edge(fr) && !near_edge(fc) {
                    assert_eq!(*got, Some(pixel), "facet {i}");
                }
            }
            None => assert_eq!(*got, None, "facet {i}"),
        }
    }
    assert_eq!(hits, map.len());
}

#[test]
fn flat_mirror_map_is_monotone() {
    let scene = SceneConfig::standard(7, 25, 0.0, 1.5, 0.4, 1)
        .build(0)
        .unwrap();
    let map = facet_pixel_map(&scene);
    let (cols, w) = (scene.surface.config.cols, scene.screen.width_pixels);
    let col_of = |i: usize| map[i].unwrap() % w;
    let row_of = |i: usize| map[i].unwrap() / w;
    let first_row: Vec<usize> = (0..cols).map(col_of).collect();
    let increasing = first_row.last() >= first_row.first();
    for r in 0..cols {
        for c in 1..cols {
            let (a, b) = (col_of(r * cols + c - 1), col_of(r * cols + c));
            assert!(if increasing { b >= a } else { b <= a });
            // screen row is constant along a facet row
            assert_eq!(row_of(r * cols + c), row_of(r * cols));
        }
    }
}

#[test]
fn single_trial_on_flat_mirror_marks_mirrored_pixels() {
    let cfg = SceneConfig::standard(7, 25, 0.0, 1.5, 0.4, 1);
    let scene = cfg.build(0).unwrap();
    let map = facet_pixel_map(&scene);
    let mc = coverage_probability_mc(
        &cfg.screen,
        &cfg.camera,
        &cfg.surface,
        &cfg.distribution,
        1,
        3,
    )
    .unwrap();
    for p in 0..mc.frequency.len() {
        let hit = map.contains(&Some(p));
        assert_eq!(mc.frequency[p], if hit { 1.0 } else { 0.0 });
    }
}

#[test]
fn mc_frequencies_are_probabilities() {
    let cfg = SceneConfig::standard(5, 12, 0.3, 1.5, 0.2, 1);
    let mc = coverage_probability_mc(
        &cfg.screen,
        &cfg.camera,
        &cfg.surface,
        &cfg.distribution,
        50,
        1,
    )
    .unwrap();
    assert_eq!(mc.trials, 50);
    for (f, se) in mc.frequency.iter().zip(&mc.std_error) {
        assert!((0.0..=1.0).contains(f));
        assert!((se - (f * (1.0 - f) / 50.0).sqrt()).abs() < 1e-15);
    }
    assert!(coverage_probability_mc(
        &cfg.screen,
        &cfg.camera,
        &cfg.surface,
        &cfg.distribution,
        0,
        1
    )
    .is_err());
}

#[test]
fn zero_pixel_width_means_zero_probability() {
    let mut cfg = SceneConfig::standard(5, 12, 0.3, 1.5, 0.2, 1);
    cfg.screen.pixel_width = 0.0;
    for model in [CoverageModel::SmallAngle, CoverageModel::SolidAngle] {
        let a = coverage_probability_analytic(
            &cfg.screen,
            &cfg.camera,
            &cfg.surface,
            &cfg.distribution,
            model,
        )
        .unwrap();
        assert!(a.probability.iter().all(|&p| p == 0.0));
    }
}

#[test]
fn diffuse_matrix_is_dense_and_positive() {
    let scene = glitter();
    let d = diffuse_transfer_matrix(&scene, 1).unwrap();
    assert!(d.matrix.iter().all(|&v| v > 0.0));
    assert!((d.matrix.max() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_probability_monotone_in_width_and_count(
        scale in 1.01f64..2.0,
        sigma in 0.1f64..0.6,
        facets in 4usize..12,
    ) {
        let base = SceneConfig::standard(6, facets, sigma, 1.0, 0.2, 1);
        for model in [CoverageModel::SmallAngle, CoverageModel::SolidAngle] {
            let eval = |c: &SceneConfig| coverage_probability_analytic(&c.screen, &c.camera, &c.surface, &c.distribution, model).unwrap();
            let p0 = eval(&base);
            // a one-pixel screen keeps its centre when the width changes
            let mut single = base;
            single.screen.width_pixels = 1;
            single.screen.height_pixels = 1;
            let mut wider = single;
            wider.screen.pixel_width *= scale;
            let (ps, p1) = (eval(&single), eval(&wider));
            prop_assert!(p1.probability[0] >= ps.probability[0]);
            let mut denser = base;
            denser.surface.cols *= 2;
            denser.surface.rows *= 2;
            let p2 = eval(&denser);
            for i in 0..p0.probability.len() {
                prop_assert!((0.0..=1.0).contains(&p0.probability[i]));
                prop_assert!(p2.probability[i] >= p0.probability[i]);
            }
        }
    }
}
