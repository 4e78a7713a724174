//! Forward simulation of light from the screen, via the facets, into the
//! camera.
//!
//! Each camera ray hits one facet, reflects about that facet's normal and
//! lands on (or misses) a screen pixel. A sensor pixel's value is the
//! radiance of the screen pixel its ray lands on, times a geometric weight
//! `cos(incidence) / distance^2` normalised so the largest weight over the
//! surface is 1. With supersampling, `k x k` rays per facet are averaged.

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};
use crate::image::{Lightmap, PixelMask, SensorImage};
use crate::rng;
use crate::scene::{
    sample_surface, CameraModel, FacetSurface, OrientationDistribution, Scene, ScreenModel,
    SurfaceConfig,
};

const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Simulated,
    Calibrated,
}

/// Linear map from a flattened lightmap to a flattened (possibly masked)
/// sensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
    /// Sensor indices of the retained rows, if the rows were masked.
    pub mask: Option<PixelMask>,
    /// `(width, height, channels)` of the lightmap the columns index.
    pub screen_shape: (usize, usize, usize),
}

impl TransferMatrix {
    pub fn new(
        matrix: DMatrix<f64>,
        provenance: Provenance,
        mask: Option<PixelMask>,
        screen_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let (w, h, c) = screen_shape;
        if w * h * c != matrix.ncols() {
            return Err(SparkleError::dims(
                format!("{} columns", w * h * c),
                format!("{} columns", matrix.ncols()),
            ));
        }
        if let Some(m) = &mask {
            if m.len() != matrix.nrows() {
                return Err(SparkleError::MaskMismatch(format!(
                    "mask has {} indices but matrix has {} rows",
                    m.len(),
                    matrix.nrows()
                )));
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(SparkleError::param("transfer matrix", "non-finite entry"));
        }
        Ok(TransferMatrix {
            matrix,
            provenance,
            mask,
            screen_shape,
        })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, x: &Lightmap) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(SparkleError::dims(self.cols(), x.len()));
        }
        Ok(&self.matrix * DVector::from_column_slice(x.data()))
    }

    /// Keeps only the rows listed in `mask` (indices into the current rows'
    /// sensor index space; the matrix must be unmasked).
    pub fn restrict_rows(&self, mask: &PixelMask) -> Result<TransferMatrix> {
        if self.mask.is_some() {
            return Err(SparkleError::MaskMismatch(
                "matrix is already masked".into(),
            ));
        }
        if mask.indices().last().is_some_and(|&i| i >= self.rows()) {
            return Err(SparkleError::MaskMismatch("mask index out of range".into()));
        }
        let m = self.matrix.select_rows(mask.indices());
        TransferMatrix::new(m, self.provenance, Some(mask.clone()), self.screen_shape)
    }
}

/// Where one ray through a facet lands.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RayHit {
    pixel: usize,
    /// `cos(incidence) / distance^2`, before normalisation.
    raw_weight: f64,
}

/// Traces the camera ray through `point` on a facet with world normal
/// `normal`, returning the screen pixel it reflects onto.
fn trace_ray(
    camera: &Point3<f64>,
    point: &Point3<f64>,
    normal: &Vector3<f64>,
    screen: &ScreenModel,
) -> Option<RayHit> {
    let d = (point - camera).normalize();
    let cos_in = -d.dot(normal);
    if cos_in <= 0.0 {
        return None;
    }
    let r = d + 2.0 * cos_in * normal;
    let sn = screen.normal();
    let denom = r.dot(&sn);
    // the ray must arrive at the emitting side of the screen
    if denom > -PARALLEL_EPS {
        return None;
    }
    let center = Point3::from(screen.pose.translation_vector());
    let t = (center - point).dot(&sn) / denom;
    if !(t > 0.0) {
        return None;
    }
    let hit = point + r * t;
    let pixel = screen.pixel_at(&hit)?;
    Some(RayHit {
        pixel,
        raw_weight: cos_in / (t * t),
    })
}

/// Screen pixel reflected into the camera by each facet centre, or `None`
/// for a miss. Row-major over the facet grid.
pub fn facet_pixel_map(scene: &Scene) -> Vec<Option<usize>> {
    facet_pixel_map_parts(&scene.surface, &scene.screen, &scene.camera.pinhole())
}

fn facet_pixel_map_parts(
    surface: &FacetSurface,
    screen: &ScreenModel,
    camera: &Point3<f64>,
) -> Vec<Option<usize>> {
    let cfg = &surface.config;
    (0..cfg.facet_count())
        .map(|i| {
            let q = cfg.facet_center(i / cfg.cols, i % cfg.cols);
            trace_ray(camera, &q, &surface.world_normal(i), screen).map(|h| h.pixel)
        })
        .collect()
}

/// Per-sensor-pixel list of `(screen pixel, weight)` contributions.
///
/// This is the sparse form of the gray transfer matrix; entries for one
/// sensor pixel are sorted by screen pixel and already include the
/// supersampling average and max-normalisation.
#[derive(Debug, Clone)]
pub struct LightTransport {
    pub sensor_pixels: usize,
    pub screen_pixels: usize,
    pub footprints: Vec<Vec<(usize, f64)>>,
}

impl LightTransport {
    pub fn trace(scene: &Scene) -> Self {
        let cfg = &scene.surface.config;
        let k = scene.camera.supersample;
        let camera = scene.camera.pinhole();
        let raw: Vec<Vec<RayHit>> = (0..cfg.facet_count())
            .into_par_iter()
            .map(|i| {
                let (row, col) = (i / cfg.cols, i % cfg.cols);
                let n = scene.surface.world_normal(i);
                let mut hits = Vec::new();
                for a in 0..k {
                    for b in 0..k {
                        let fu = (b as f64 + 0.5) / k as f64;
                        let fv = (a as f64 + 0.5) / k as f64;
                        let p = cfg.pose.apply_point(&cfg.local_point(row, col, fu, fv));
                        if let Some(h) = trace_ray(&camera, &p, &n, &scene.screen) {
                            hits.push(h);
                        }
                    }
                }
                hits
            })
            .collect();

        let max_w = raw
            .iter()
            .flatten()
            .map(|h| h.raw_weight)
            .fold(0.0_f64, f64::max);
        let scale = if max_w > 0.0 {
            1.0 / (max_w * (k * k) as f64)
        } else {
            0.0
        };
        let footprints = raw
            .into_iter()
            .map(|hits| {
                let mut fp: Vec<(usize, f64)> = Vec::with_capacity(hits.len());
                let mut sorted = hits;
                sorted.sort_by_key(|h| h.pixel);
                for h in sorted {
                    match fp.last_mut() {
                        Some((p, w)) if *p == h.pixel => *w += h.raw_weight * scale,
                        _ => fp.push((h.pixel, h.raw_weight * scale)),
                    }
                }
                fp
            })
            .collect();
        LightTransport {
            sensor_pixels: cfg.facet_count(),
            screen_pixels: scene.screen_pixels(),
            footprints,
        }
    }

    /// Renders a flattened lightmap with `channels` channels.
    pub fn render_slice(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let (m, n) = (self.sensor_pixels, self.screen_pixels);
        let mut y = vec![0.0; m * channels];
        for c in 0..channels {
            let xc = &x[c * n..(c + 1) * n];
            for (j, fp) in self.footprints.iter().enumerate() {
                y[c * m + j] = fp.iter().map(|&(p, w)| w * xc[p]).sum();
            }
        }
        y
    }
}

fn check_lightmap(scene: &Scene, x: &Lightmap) -> Result<()> {
    if x.width() != scene.screen.width_pixels || x.height() != scene.screen.height_pixels {
        return Err(SparkleError::dims(
            format!(
                "{}x{}",
                scene.screen.width_pixels, scene.screen.height_pixels
            ),
            format!("{}x{}", x.width(), x.height()),
        ));
    }
    Ok(())
}

/// Renders the sensor image of `scene` lit by `x`.
pub fn render_image(scene: &Scene, x: &Lightmap) -> Result<SensorImage> {
    check_lightmap(scene, x)?;
    let lt = LightTransport::trace(scene);
    render_with(&lt, scene, x)
}

/// Same as [`render_image`] with a pre-traced transport.
pub fn render_with(lt: &LightTransport, scene: &Scene, x: &Lightmap) -> Result<SensorImage> {
    check_lightmap(scene, x)?;
    let data = lt.render_slice(x.data(), x.channels());
    SensorImage::from_vec(
        scene.camera.sensor_width,
        scene.camera.sensor_height,
        x.channels(),
        data,
    )
}

/// Exact transfer matrix: column `i` is the rendering of impulse `e_i`.
pub fn build_transfer_matrix(scene: &Scene, channels: usize) -> Result<TransferMatrix> {
    let lt = LightTransport::trace(scene);
    transfer_matrix_from(&lt, scene, channels)
}

pub fn transfer_matrix_from(
    lt: &LightTransport,
    scene: &Scene,
    channels: usize,
) -> Result<TransferMatrix> {
    let (sw, sh) = (scene.screen.width_pixels, scene.screen.height_pixels);
    let n = sw * sh * channels;
    let m = scene.sensor_pixels() * channels;
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| lt.render_slice(Lightmap::impulse(sw, sh, channels, i).data(), channels))
        .collect();
    let mut a = DMatrix::zeros(m, n);
    for (i, col) in columns.iter().enumerate() {
        a.column_mut(i).copy_from_slice(col);
    }
    TransferMatrix::new(a, Provenance::Simulated, None, (sw, sh, channels))
}

/// Transfer matrix of a matte (Lambertian) reflector on the same geometry:
/// every sensor pixel's surface point integrates the whole screen with
/// weight `cos(at reflector) * cos(at screen) * area / distance^2`,
/// normalised to a maximum of 1.
pub fn diffuse_transfer_matrix(scene: &Scene, channels: usize) -> Result<TransferMatrix> {
    let cfg = &scene.surface.config;
    let screen = &scene.screen;
    let nb = cfg.base_normal();
    let ns = screen.normal();
    let area = screen.pixel_width * screen.pixel_width;
    let (mg, ng) = (cfg.facet_count(), screen.pixel_count());
    let mut gray = DMatrix::zeros(mg, ng);
    for j in 0..mg {
        let q = cfg.facet_center(j / cfg.cols, j % cfg.cols);
        for i in 0..ng {
            let p = screen.pixel_center(i / screen.width_pixels, i % screen.width_pixels);
            let a = p - q;
            let r2 = a.norm_squared();
            let dir = a / r2.sqrt();
            let cos_refl = nb.dot(&dir).max(0.0);
            let cos_scr = (-ns.dot(&dir)).max(0.0);
            gray[(j, i)] = cos_refl * cos_scr * area / r2;
        }
    }
    let max = gray.max();
    if max > 0.0 {
        gray /= max;
    }
    let mut a = DMatrix::zeros(mg * channels, ng * channels);
    for c in 0..channels {
        a.view_mut((c * mg, c * ng), (mg, ng)).copy_from(&gray);
    }
    TransferMatrix::new(
        a,
        Provenance::Simulated,
        None,
        (screen.width_pixels, screen.height_pixels, channels),
    )
}

/// Facet-to-pixel probability model used by [`coverage_probability_analytic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CoverageModel {
    /// `P(theta0) * w^2 cos(theta) / (4 |p - q|)`, the small-angle estimate.
    #[default]
    SmallAngle,
    /// Same construction with the solid-angle terms kept: slant density
    /// converted to a density over directions (`/ (2 pi sin theta0)`), the
    /// pixel's solid angle `w^2 cos(theta) / |p - q|^2` and the reflection
    /// Jacobian `1 / (4 cos(theta_d))`.
    SolidAngle,
}

/// Output of the analytic coverage model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    pub width: usize,
    pub height: usize,
    /// Per-screen-pixel probability, row-major.
    pub probability: Vec<f64>,
    /// Largest per-facet probability seen (before clamping).
    pub max_facet_probability: f64,
    /// Number of facet/pixel pairs whose probability exceeded 1.
    pub clamped: usize,
}

/// Probability that each screen pixel is reflected into the camera by at
/// least one facet: `1 - prod_j (1 - P(q_j reflects p_i))`.
pub fn coverage_probability_analytic(
    screen: &ScreenModel,
    camera: &CameraModel,
    surface: &SurfaceConfig,
    dist: &OrientationDistribution,
    model: CoverageModel,
) -> Result<CoverageMap> {
    // zero-width pixels are allowed here and have zero probability
    ScreenModel {
        pixel_width: if screen.pixel_width == 0.0 {
            1.0
        } else {
            screen.pixel_width
        },
        ..*screen
    }
    .validate()?;
    surface.validate()?;
    let c = camera.pinhole();
    let nb = surface.base_normal();
    let ns = screen.normal();
    let w2 = screen.pixel_width * screen.pixel_width;
    let facets: Vec<Point3<f64>> = (0..surface.facet_count())
        .map(|j| surface.facet_center(j / surface.cols, j % surface.cols))
        .collect();

    let per_pixel: Vec<(f64, f64, usize)> = (0..screen.pixel_count())
        .into_par_iter()
        .map(|i| {
            let p = screen.pixel_center(i / screen.width_pixels, i % screen.width_pixels);
            let mut miss = 1.0;
            let mut max_pr = 0.0_f64;
            let mut clamped = 0;
            for q in &facets {
                let a = p - q;
                let dist_pq = a.norm();
                let to_screen = a / dist_pq;
                let to_camera = (c - q).normalize();
                let Some(h) = (to_screen + to_camera).try_normalize(PARALLEL_EPS) else {
                    continue;
                };
                let cos_h = h.dot(&nb);
                if cos_h <= 0.0 {
                    continue;
                }
                let theta0 = cos_h.min(1.0).acos();
                let cos_screen = to_screen.dot(&ns).abs();
                let pr = match model {
                    CoverageModel::SmallAngle => {
                        dist.slant_density(theta0) * w2 * cos_screen / (4.0 * dist_pq)
                    }
                    CoverageModel::SolidAngle => {
                        let sin0 = theta0.sin();
                        let cos_d = h.dot(&to_camera);
                        if sin0 <= PARALLEL_EPS || cos_d <= 0.0 {
                            0.0
                        } else {
                            let solid = w2 * cos_screen / (dist_pq * dist_pq);
                            dist.slant_density(theta0) / (2.0 * std::f64::consts::PI * sin0) * solid
                                / (4.0 * cos_d)
                        }
                    }
                };
                max_pr = max_pr.max(pr);
                let pr = if pr > 1.0 {
                    clamped += 1;
                    1.0
                } else {
                    pr
                };
                miss *= 1.0 - pr;
            }
            (1.0 - miss, max_pr, clamped)
        })
        .collect();

    let clamped: usize = per_pixel.iter().map(|t| t.2).sum();
    if clamped > 0 {
        log::warn!(
            "coverage model: {clamped} facet/pixel probabilities exceeded 1 and were clamped"
        );
    }
    Ok(CoverageMap {
        width: screen.width_pixels,
        height: screen.height_pixels,
        probability: per_pixel.iter().map(|t| t.0.clamp(0.0, 1.0)).collect(),
        max_facet_probability: per_pixel.iter().map(|t| t.1).fold(0.0, f64::max),
        clamped,
    })
}

/// Monte Carlo hit frequencies with their binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageFrequency {
    pub width: usize,
    pub height: usize,
    pub trials: usize,
    pub frequency: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Samples `trials` surfaces and counts how often each screen pixel is hit
/// by at least one facet centre ray.
pub fn coverage_probability_mc(
    screen: &ScreenModel,
    camera: &CameraModel,
    surface: &SurfaceConfig,
    dist: &OrientationDistribution,
    trials: usize,
    seed: u64,
) -> Result<CoverageFrequency> {
    if trials == 0 {
        return Err(SparkleError::param("trials", "must be >= 1"));
    }
    screen.validate()?;
    let n = screen.pixel_count();
    let c = camera.pinhole();
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<u32>> {
            let s = sample_surface(surface, dist, trial_seed(seed, t))?;
            let mut hit = vec![0u32; n];
            for p in facet_pixel_map_parts(&s, screen, &c).into_iter().flatten() {
                hit[p] = 1;
            }
            Ok(hit)
        })
        .try_reduce(
            || vec![0u32; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let tf = trials as f64;
    let frequency: Vec<f64> = counts.iter().map(|&k| k as f64 / tf).collect();
    let std_error = frequency
        .iter()
        .map(|f| (f * (1.0 - f) / tf).sqrt())
        .collect();
    Ok(CoverageFrequency {
        width: screen.width_pixels,
        height: screen.height_pixels,
        trials,
        frequency,
        std_error,
    })
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    use rand::Rng;
    rng::stream(seed, "coverage-trial", trial as u64).random()
}
