//! Simulate, calibrate and reconstruct in one in-memory run.

use std::path::Path;

use serde::Serialize;
use sparkle_core::analysis::{
    add_noise, measure_probes, random_lightmap, rmse, spectrum, ssd, SimulatedSystem,
};
use sparkle_core::calibrate::{bright_mask, build_bases, calibrate_matrix};
use sparkle_core::reconstruct::{ShiftSearchConfig, Solver};
use sparkle_core::{Grid, SensorImage};

use super::reconstruct::{solve, ReconstructArgs};
use super::{finite, matrix_bytes, pfm_bytes, write_bytes};
use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::write_json;

pub const REPORT_NAME: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub screen: (usize, usize),
    pub sensor: (usize, usize),
    /// Rows kept by the bright mask (all sensor pixels without one).
    pub calibrated_rows: usize,
    pub random_probes: usize,
    pub lambda: f64,
    pub condition_number_truth: Option<f64>,
    pub condition_number_calibrated: Option<f64>,
    pub calibration_error_rms: Option<f64>,
    pub mean_ssd: f64,
    pub mean_rmse: f64,
    pub images: Vec<ImageReport>,
    /// SHA-256 of each stage's output bytes.
    pub hashes: StageHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageReport {
    pub index: usize,
    pub ssd: f64,
    pub rmse: f64,
    pub residual: f64,
    pub residual_clamped: f64,
    pub clamp_count: usize,
    pub shift: (f64, f64),
    pub solver: Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageHashes {
    pub truth_matrix: String,
    pub calibrated_matrix: String,
    pub reconstructions: String,
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<PipelineReport> {
    let sys = SimulatedSystem::new(&cfg.scene, cfg.surface_seed)
        .map_err(|e| CliError::from(e).in_stage("simulate"))?;
    let (w, h) = sys.screen_dims();
    let (sw, sh) = (
        sys.scene.camera.sensor_width,
        sys.scene.camera.sensor_height,
    );
    let cal = cfg.calibration.core();

    let a = (|| {
        let bases = build_bases(w, h, cal.k, cfg.seed)?;
        let responses = measure_probes(
            &sys.transport,
            &bases,
            cfg.calibration.display,
            cfg.noise.calibration_sigma,
            cfg.seed,
        );
        let mask = match cfg.calibration.use_mask {
            true => Some(bright_mask(&responses.impulse, cal.fraction)?),
            false => None,
        };
        calibrate_matrix(&responses, &bases, mask.as_ref(), &cal, (w, h, 1))
    })()
    .map_err(|e| CliError::from(e).in_stage("calibrate"))?;

    // calibration error against the truth on the same rows
    let truth_rows = match &a.mask {
        Some(m) => sys.truth.restrict_rows(m)?,
        None => sys.truth.clone(),
    };
    let diff = &a.matrix - &truth_rows.matrix;
    let calibration_error_rms =
        (!diff.is_empty()).then(|| (diff.norm_squared() / diff.len() as f64).sqrt());

    let search = match &cfg.shift_search {
        Some(g) if g.two_dimensional => Some(ShiftSearchConfig::square(g.min, g.max, g.step)?),
        Some(g) => Some(ShiftSearchConfig::horizontal(g.min, g.max, g.step)?),
        None => None,
    };
    let args = ReconstructArgs {
        nonnegative: cfg.nonnegative,
        shift_search: search,
        preview: None,
    };

    let mut images = Vec::new();
    let mut recon_bytes = Vec::new();
    let mut files = Vec::new();
    for t in 0..cfg.test_images {
        let x = random_lightmap(w, h, cfg.seed, t as u64);
        let mut y = sys.render(&x);
        add_noise(
            &mut y,
            cfg.noise.test_sigma,
            cfg.seed,
            "noise-test",
            t as u64,
        );
        let image = SensorImage::new(Grid::from_vec(sw, sh, 1, y)?);
        let (xr, rep) = solve(&a, image, &args).map_err(|e| e.in_stage("reconstruct"))?;
        let bytes = pfm_bytes(&xr.grid);
        recon_bytes.extend_from_slice(&bytes);
        files.push((format!("reconstruction_{t:03}.pfm"), bytes));
        images.push(ImageReport {
            index: t,
            ssd: ssd(xr.data(), x.data()),
            rmse: rmse(xr.data(), x.data()),
            residual: rep.residual,
            residual_clamped: rep.residual_clamped,
            clamp_count: rep.clamp_count,
            shift: rep.shift,
            solver: rep.solver,
        });
    }
    let count = images.len().max(1) as f64;

    let truth_bytes = matrix_bytes(&sys.truth);
    let a_bytes = matrix_bytes(&a);
    let report = PipelineReport {
        config_hash: cfg.hash(),
        screen: (w, h),
        sensor: (sw, sh),
        calibrated_rows: a.rows(),
        random_probes: cal.k,
        lambda: cal.lambda_for(w * h),
        condition_number_truth: finite(spectrum(&sys.truth)?.condition_number),
        condition_number_calibrated: finite(spectrum(&a)?.condition_number),
        calibration_error_rms,
        mean_ssd: images.iter().map(|i| i.ssd).sum::<f64>() / count,
        mean_rmse: images.iter().map(|i| i.rmse).sum::<f64>() / count,
        hashes: StageHashes {
            truth_matrix: sha256_hex(&truth_bytes),
            calibrated_matrix: sha256_hex(&a_bytes),
            reconstructions: sha256_hex(&recon_bytes),
        },
        images,
    };

    files.push(("truth.mat".into(), truth_bytes));
    files.push(("calibrated.mat".into(), a_bytes));
    for (rel, bytes) in &files {
        write_bytes(&out_dir.join(rel), bytes)?;
    }
    write_json(&out_dir.join(REPORT_NAME), &report)?;
    Ok(report)
}
