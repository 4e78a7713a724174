//! Diagnostics and experiment sweeps: bright-set overlap between impulse
//! responses, singular-value spectra, and recovery error under calibration
//! noise, test noise, probe count and misalignment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    bright_mask, build_bases, calibrate_matrix, Bases, BasisSet, CalibrationConfig, ProbeResponses,
};
use crate::error::{Result, SparkleError};
use crate::image::{Lightmap, SensorImage};
use crate::linalg::{default_rank_tolerance, singular_values};
use crate::reconstruct::{shift_grid, Reconstructor};
use crate::render::{transfer_matrix_from, LightTransport, Provenance, TransferMatrix};
use crate::rng;
use crate::scene::{Scene, SceneConfig};

/// Pairwise overlap `|S_i & S_j| / min(|S_i|, |S_j|)` of the bright sets of
/// impulse responses, where `S_i` holds the pixels brighter than
/// `threshold_fraction * max(y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub values: DMatrix<f64>,
    pub sets: Vec<Vec<usize>>,
    pub threshold_fraction: f64,
    /// Responses with an empty bright set (all dark).
    pub flagged: Vec<usize>,
}

impl OverlapMatrix {
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.values.nrows();
        let mut best = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    best = best.max(self.values[(i, j)]);
                }
            }
        }
        best
    }

    /// Mean overlap of 8-neighbour pairs and of all other pairs, for
    /// responses indexed row-major over a `width`-wide screen.
    pub fn neighbour_means(&self, width: usize) -> (f64, f64) {
        let n = self.values.nrows();
        let (mut adj, mut na, mut far, mut nf) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            for j in i + 1..n {
                let dr = (i / width).abs_diff(j / width);
                let dc = (i % width).abs_diff(j % width);
                if dr.max(dc) == 1 {
                    adj += self.values[(i, j)];
                    na += 1;
                } else {
                    far += self.values[(i, j)];
                    nf += 1;
                }
            }
        }
        (adj / na.max(1) as f64, far / nf.max(1) as f64)
    }
}

/// `responses` holds one impulse response per column.
pub fn overlap_matrix(responses: &DMatrix<f64>, threshold_fraction: f64) -> Result<OverlapMatrix> {
    let n = responses.ncols();
    if n < 2 {
        return Err(SparkleError::param(
            "responses",
            "need at least two impulse responses",
        ));
    }
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(SparkleError::param(
            "threshold_fraction",
            "must be in (0, 1]",
        ));
    }
    let mut flagged = Vec::new();
    let sets: Vec<Vec<usize>> = responses
        .column_iter()
        .enumerate()
        .map(|(i, col)| {
            let max = col.max();
            if !(max > 0.0) {
                flagged.push(i);
                return Vec::new();
            }
            let thr = threshold_fraction * max;
            (0..col.len()).filter(|&r| col[r] > thr).collect()
        })
        .collect();
    let mut values = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&sets[i], &sets[j]);
            let smaller = a.len().min(b.len());
            let o = if smaller == 0 {
                0.0
            } else {
                sorted_intersection(a, b) as f64 / smaller as f64
            };
            values[(i, j)] = o;
            values[(j, i)] = o;
        }
    }
    Ok(OverlapMatrix {
        values,
        sets,
        threshold_fraction,
        flagged,
    })
}

pub fn overlap_from_images(
    images: &[SensorImage],
    threshold_fraction: f64,
) -> Result<OverlapMatrix> {
    let first = images
        .first()
        .ok_or(SparkleError::Empty("impulse responses"))?;
    let m = first.len();
    let mut cols = DMatrix::zeros(m, images.len());
    for (i, im) in images.iter().enumerate() {
        if im.len() != m {
            return Err(SparkleError::dims(m, im.len()));
        }
        cols.column_mut(i).copy_from_slice(im.data());
    }
    overlap_matrix(&cols, threshold_fraction)
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                k += 1;
                i += 1;
                j += 1;
            }
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `sigma_max / sigma_min`; infinite when the matrix is rank deficient.
    pub condition_number: f64,
    /// Ratio over the singular values above tolerance only.
    pub effective_condition_number: f64,
    pub rank_deficit: usize,
    pub provenance: Provenance,
}

pub fn spectrum(a: &TransferMatrix) -> Result<SpectrumReport> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(SparkleError::Empty("transfer matrix"));
    }
    let mut sv = singular_values(&a.matrix);
    // a wide matrix has cols - rows structural zeros
    sv.resize(a.cols(), 0.0);
    let smax = sv[0];
    let tol = default_rank_tolerance(a.rows(), a.cols()) * smax;
    let above: Vec<f64> = sv.iter().copied().filter(|&s| s > tol).collect();
    let rank_deficit = sv.len() - above.len();
    let effective = match above.last() {
        Some(&smin) => smax / smin,
        None => f64::INFINITY,
    };
    Ok(SpectrumReport {
        condition_number: if rank_deficit > 0 {
            f64::INFINITY
        } else {
            effective
        },
        effective_condition_number: effective,
        rank_deficit,
        singular_values: sv,
        provenance: a.provenance,
    })
}

/// Sum of squared differences.
pub fn ssd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Root-mean-squared difference.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (ssd(a, b) / a.len() as f64).sqrt()
}

/// Adds i.i.d. Gaussian noise `sigma * z` in place and clips at 0. The
/// standard-normal draws come from `(seed, label, index)` so the same
/// realisation is reused across noise levels.
pub fn add_noise(values: &mut [f64], sigma: f64, seed: u64, label: &str, index: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = rng::stream(seed, label, index);
    for v in values.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = (*v + sigma * z).max(0.0);
    }
}

/// Lightmap with i.i.d. uniform `[0, 1]` pixels.
pub fn random_lightmap(width: usize, height: usize, seed: u64, index: u64) -> Lightmap {
    let mut rng = rng::stream(seed, "test-lightmap", index);
    let data = (0..width * height)
        .map(|_| rng.random_range(0.0..=1.0))
        .collect();
    Lightmap::from_vec(width, height, 1, data).expect("sized")
}

/// Smooth lightmap: a few Gaussian blobs over a linear ramp, scaled into
/// `[0.1, 0.9]`.
pub fn smooth_lightmap(width: usize, height: usize, seed: u64, index: u64) -> Lightmap {
    let mut rng = rng::stream(seed, "smooth-lightmap", index);
    let (w, h) = (width as f64, height as f64);
    let gx: f64 = rng.random_range(-1.0..1.0);
    let gy: f64 = rng.random_range(-1.0..1.0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(0.3..0.6) * w.max(h),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut data: Vec<f64> = (0..width * height)
        .map(|i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            let mut v = gx * c / w + gy * r / h;
            for &(bx, by, s, amp) in &blobs {
                v += amp * (-((c - bx).powi(2) + (r - by).powi(2)) / (2.0 * s * s)).exp();
            }
            v
        })
        .collect();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    data.iter_mut()
        .for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / span);
    Lightmap::from_vec(width, height, 1, data).expect("sized")
}

/// How probe images reach the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDisplay {
    /// Probes are rendered as-is, including negative DCT entries.
    Signed,
    /// Probes pass through their display transform; responses are
    /// de-biased with a once-measured flat-field response.
    Physical,
}

/// Renders (and optionally perturbs) the responses to every probe.
///
/// Noise draws are keyed by probe family and column so that, for a fixed
/// seed, the realisation of each probe does not depend on `sigma` or on how
/// many random probes are used.
pub fn measure_probes(
    transport: &LightTransport,
    bases: &Bases,
    display: ProbeDisplay,
    sigma: f64,
    seed: u64,
) -> ProbeResponses {
    let m = transport.sensor_pixels;
    let measure = |v: &[f64], label: &str, idx: u64| -> Vec<f64> {
        let mut y = transport.render_slice(v, 1);
        add_noise(&mut y, sigma, seed, label, idx);
        y
    };
    let family = |set: &BasisSet, label: &'static str| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, set.len());
        let (gain, offset) = match display {
            ProbeDisplay::Signed => (1.0, 0.0),
            ProbeDisplay::Physical => (set.display.gain, set.display.offset),
        };
        let flat = (offset != 0.0).then(|| {
            let level = vec![offset; set.dim()];
            measure(&level, "flat-field", 0)
        });
        let columns: Vec<Vec<f64>> = (0..set.len())
            .into_par_iter()
            .map(|j| {
                let v: Vec<f64> = set
                    .vectors
                    .column(j)
                    .iter()
                    .map(|x| offset + gain * x)
                    .collect();
                let mut y = measure(&v, label, j as u64);
                if let Some(f) = &flat {
                    y.iter_mut().zip(f).for_each(|(a, b)| *a -= b);
                }
                if gain != 1.0 {
                    y.iter_mut().for_each(|a| *a /= gain);
                }
                y
            })
            .collect();
        for (j, c) in columns.iter().enumerate() {
            out.column_mut(j).copy_from_slice(c);
        }
        out
    };
    ProbeResponses {
        impulse: family(&bases.impulse, "noise-impulse"),
        dct: family(&bases.dct, "noise-dct"),
        random: family(&bases.random, "noise-random"),
    }
}

/// Where calibration or test noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Both,
    TrainOnly,
    TestOnly,
}

impl NoiseMode {
    fn train(self) -> bool {
        matches!(self, NoiseMode::Both | NoiseMode::TrainOnly)
    }

    fn test(self) -> bool {
        matches!(self, NoiseMode::Both | NoiseMode::TestOnly)
    }
}

/// Shared settings for the simulated calibrate-and-reconstruct sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scene: SceneConfig,
    /// Seed of the facet orientations; the sweep seeds drive noise, probes
    /// and test lightmaps.
    pub surface_seed: u64,
    pub calibration: CalibrationConfig,
    /// Restrict calibration and reconstruction to the bright-pixel mask.
    pub use_mask: bool,
    pub display: ProbeDisplay,
    /// Number of random test lightmaps reconstructed per seed.
    pub test_images: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            scene: SceneConfig::default_sweep(),
            surface_seed: 0,
            calibration: CalibrationConfig {
                k: 100,
                ..CalibrationConfig::default()
            },
            use_mask: true,
            display: ProbeDisplay::Physical,
            test_images: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub value: f64,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Name of the independent variable (`sigma`, `k`, `shift`).
    pub variable: String,
    /// Name of the error metric (`ssd`, `rmse`).
    pub metric: String,
    pub records: Vec<SweepRecord>,
    pub seeds: Vec<u64>,
    pub scene: Option<SceneConfig>,
}

impl SweepResult {
    /// `(value, mean, standard deviation)` per distinct value, in the order
    /// the values were given.
    pub fn summary(&self) -> Vec<(f64, f64, f64)> {
        let mut values: Vec<f64> = Vec::new();
        for r in &self.records {
            if !values.contains(&r.value) {
                values.push(r.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let xs: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.value == v)
                    .map(|r| r.metric)
                    .collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (v, mean, var.sqrt())
            })
            .collect()
    }

    pub fn mean_at(&self, value: f64) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.0 == value)
            .map(|s| s.1)
    }
}

/// Traced scene plus its exact gray transfer matrix.
#[derive(Debug, Clone)]
pub struct SimulatedSystem {
    pub scene: Scene,
    pub transport: LightTransport,
    pub truth: TransferMatrix,
}

impl SimulatedSystem {
    pub fn new(config: &SceneConfig, surface_seed: u64) -> Result<Self> {
        let scene = config.build(surface_seed)?;
        let transport = LightTransport::trace(&scene);
        let truth = transfer_matrix_from(&transport, &scene, 1)?;
        Ok(SimulatedSystem {
            scene,
            transport,
            truth,
        })
    }

    pub fn screen_dims(&self) -> (usize, usize) {
        (
            self.scene.screen.width_pixels,
            self.scene.screen.height_pixels,
        )
    }

    pub fn render(&self, x: &Lightmap) -> Vec<f64> {
        self.transport.render_slice(x.data(), 1)
    }

    /// Calibrates from simulated probe measurements with noise `sigma`.
    pub fn calibrate(
        &self,
        calibration: &CalibrationConfig,
        use_mask: bool,
        display: ProbeDisplay,
        sigma: f64,
        seed: u64,
    ) -> Result<TransferMatrix> {
        let (w, h) = self.screen_dims();
        let bases = build_bases(w, h, calibration.k, seed)?;
        let responses = measure_probes(&self.transport, &bases, display, sigma, seed);
        let mask = if use_mask {
            Some(bright_mask(&responses.impulse, calibration.fraction)?)
        } else {
            None
        };
        calibrate_matrix(&responses, &bases, mask.as_ref(), calibration, (w, h, 1))
    }

    /// Observation of `x` in the row space of `a`, with optional test noise.
    pub fn observe(
        &self,
        a: &TransferMatrix,
        x: &Lightmap,
        sigma: f64,
        seed: u64,
        index: u64,
    ) -> DVector<f64> {
        let mut y = self.render(x);
        add_noise(&mut y, sigma, seed, "noise-test", index);
        match &a.mask {
            Some(m) => DVector::from_vec(m.select(&y)),
            None => DVector::from_vec(y),
        }
    }
}

/// Mean SSD over `count` random test lightmaps reconstructed with `a`.
fn mean_test_ssd(
    sys: &SimulatedSystem,
    a: &TransferMatrix,
    count: usize,
    test_sigma: f64,
    seed: u64,
) -> Result<f64> {
    let solver = Reconstructor::new(a)?;
    let (w, h) = sys.screen_dims();
    let mut total = 0.0;
    for t in 0..count {
        let x = random_lightmap(w, h, seed, t as u64);
        let y = sys.observe(a, &x, test_sigma, seed, t as u64);
        let r = solver.reconstruct_observation(&y)?;
        total += ssd(r.lightmap.data(), x.data());
    }
    Ok(total / count.max(1) as f64)
}

/// Recovery error versus noise level with noise in the calibration
/// images, the test images, or both.
pub fn noise_location_sweep(
    config: &SweepConfig,
    sigmas: &[f64],
    seeds: &[u64],
    mode: NoiseMode,
) -> Result<SweepResult> {
    if sigmas.iter().any(|&s| !(s >= 0.0)) {
        return Err(SparkleError::param("sigma", "must be >= 0"));
    }
    let sys = SimulatedSystem::new(&config.scene, config.surface_seed)?;
    let jobs: Vec<(f64, u64)> = sigmas
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(sigma, seed)| -> Result<SweepRecord> {
            let train = if mode.train() { sigma } else { 0.0 };
            let test = if mode.test() { sigma } else { 0.0 };
            let a = sys.calibrate(
                &config.calibration,
                config.use_mask,
                config.display,
                train,
                seed,
            )?;
            let metric = mean_test_ssd(&sys, &a, config.test_images, test, seed)?;
            Ok(SweepRecord {
                value: sigma,
                seed,
                metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        variable: "sigma".into(),
        metric: "ssd".into(),
        records,
        seeds: seeds.to_vec(),
        scene: Some(config.scene),
    })
}

/// Recovery error versus the number of random calibration probes, with
/// calibration noise `sigma` and clean test images.
pub fn basis_count_sweep(
    config: &SweepConfig,
    ks: &[usize],
    sigma: f64,
    seeds: &[u64],
) -> Result<SweepResult> {
    if ks.windows(2).any(|w| w[1] < w[0]) {
        return Err(SparkleError::param("k values", "must be ascending"));
    }
    let sys = SimulatedSystem::new(&config.scene, config.surface_seed)?;
    let jobs: Vec<(usize, u64)> = ks
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&seed| (k, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(k, seed)| -> Result<SweepRecord> {
            let cal = CalibrationConfig {
                k,
                ..config.calibration
            };
            let a = sys.calibrate(&cal, config.use_mask, config.display, sigma, seed)?;
            let metric = mean_test_ssd(&sys, &a, config.test_images, 0.0, seed)?;
            Ok(SweepRecord {
                value: k as f64,
                seed,
                metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        variable: "k".into(),
        metric: "ssd".into(),
        records,
        seeds: seeds.to_vec(),
        scene: Some(config.scene),
    })
}

/// RMSE between reconstructions from noisy and clean test images, for a
/// fixed transfer matrix. `clean` holds the noise-free observations (in the
/// row space of `a`) of the test lightmaps.
pub fn test_noise_stability(
    a: &TransferMatrix,
    clean: &[DVector<f64>],
    sigmas: &[f64],
    seeds: &[u64],
) -> Result<SweepResult> {
    let solver = Reconstructor::new(a)?;
    let baseline: Vec<DVector<f64>> = clean
        .iter()
        .map(|y| {
            solver
                .reconstruct_observation(y)
                .map(|r| DVector::from_column_slice(r.lightmap.data()))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(f64, u64)> = sigmas
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(sigma, seed)| -> Result<SweepRecord> {
            let mut total = 0.0;
            for (t, (y, base)) in clean.iter().zip(&baseline).enumerate() {
                let mut noisy: Vec<f64> = y.iter().copied().collect();
                add_noise(&mut noisy, sigma, seed, "noise-stability", t as u64);
                let r = solver.reconstruct_observation(&DVector::from_vec(noisy))?;
                total += rmse(r.lightmap.data(), base.as_slice());
            }
            Ok(SweepRecord {
                value: sigma,
                seed,
                metric: total / clean.len().max(1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        variable: "sigma".into(),
        metric: "rmse".into(),
        records,
        seeds: seeds.to_vec(),
        scene: None,
    })
}

/// RMSE of recoveries from test images translated horizontally by each
/// `shift` (sensor pixels) before reconstruction.
pub fn misalignment_sweep(
    sys: &SimulatedSystem,
    a: &TransferMatrix,
    shifts: &[f64],
    seeds: &[u64],
    test_images: usize,
) -> Result<SweepResult> {
    let solver = Reconstructor::new(a)?;
    let (w, h) = sys.screen_dims();
    let cam = &sys.scene.camera;
    let jobs: Vec<(f64, u64)> = shifts
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(shift, seed)| -> Result<SweepRecord> {
            let mut total = 0.0;
            for t in 0..test_images {
                let x = smooth_lightmap(w, h, seed, t as u64);
                let y =
                    SensorImage::from_vec(cam.sensor_width, cam.sensor_height, 1, sys.render(&x))?;
                let shifted = SensorImage {
                    grid: shift_grid(&y.grid, shift, 0.0),
                    mask: a.mask.clone(),
                };
                let r = solver.reconstruct(&shifted)?;
                total += rmse(r.lightmap.data(), x.data());
            }
            Ok(SweepRecord {
                value: shift,
                seed,
                metric: total / test_images.max(1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        variable: "shift".into(),
        metric: "rmse".into(),
        records,
        seeds: seeds.to_vec(),
        scene: None,
    })
}
