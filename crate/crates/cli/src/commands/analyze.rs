//! Matrix diagnostics and the simulated parameter sweeps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};
use sparkle_core::analysis::{
    basis_count_sweep, misalignment_sweep, noise_location_sweep, overlap_matrix, random_lightmap,
    spectrum, test_noise_stability, SimulatedSystem, SweepResult,
};
use sparkle_core::render::TransferMatrix;
use sparkle_core::{io, Result as CoreResult};

use super::finite;
use crate::config::ExperimentConfig;
use crate::error::{at_path, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Overlap,
    Spectrum,
    NoiseSweep,
    BasisSweep,
    TestNoise,
    Misalignment,
}

fn write_csv(out: &Path, f: impl FnOnce(&mut BufWriter<File>) -> CoreResult<()>) -> CliResult<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        at_path(std::fs::create_dir_all(dir), dir)?;
    }
    let mut w = BufWriter::new(at_path(File::create(out), out)?);
    at_path(f(&mut w), out)?;
    at_path(w.flush(), out)
}

fn sweep_summary(r: &SweepResult) -> Value {
    let rows: Vec<Value> = r
        .summary()
        .into_iter()
        .map(|(v, mean, std)| json!({ r.variable.as_str(): v, "mean": mean, "std": std }))
        .collect();
    json!({ "variable": r.variable, "metric": r.metric, "summary": rows })
}

/// Calibrated matrix for the configured scene, at the configured
/// calibration noise.
fn calibrated(cfg: &ExperimentConfig, sys: &SimulatedSystem) -> CliResult<TransferMatrix> {
    Ok(sys.calibrate(
        &cfg.calibration.core(),
        cfg.calibration.use_mask,
        cfg.calibration.display,
        cfg.noise.calibration_sigma,
        cfg.seed,
    )?)
}

/// Runs one analysis, writes its CSV to `out` and returns a JSON summary.
/// `matrix` replaces the simulated truth for the matrix diagnostics.
pub fn run(
    kind: Analysis,
    cfg: &ExperimentConfig,
    matrix: Option<&TransferMatrix>,
    out: &Path,
) -> CliResult<Value> {
    let hash = cfg.hash();
    let sweep_cfg = cfg.sweep_config();
    let s = &cfg.sweeps;
    let summary = match kind {
        Analysis::Overlap | Analysis::Spectrum => {
            let owned;
            let a = match matrix {
                Some(a) => a,
                None => {
                    owned = SimulatedSystem::new(&cfg.scene, cfg.surface_seed)?.truth;
                    &owned
                }
            };
            if kind == Analysis::Overlap {
                let o = overlap_matrix(&a.matrix, s.overlap_threshold)?;
                write_csv(out, |w| io::write_matrix_csv(w, &o.values, &hash))?;
                let (adj, non) = o.neighbour_means(a.screen_shape.0);
                json!({
                    "max_off_diagonal": o.max_off_diagonal(),
                    "adjacent_mean": adj,
                    "non_adjacent_mean": non,
                    "empty_bright_sets": o.flagged,
                })
            } else {
                let r = spectrum(a)?;
                write_csv(out, |w| {
                    io::write_spectrum_csv(w, &r.singular_values, &hash)
                })?;
                json!({
                    "provenance": r.provenance,
                    "condition_number": finite(r.condition_number),
                    "effective_condition_number": finite(r.effective_condition_number),
                    "rank_deficit": r.rank_deficit,
                })
            }
        }
        Analysis::NoiseSweep => {
            let r = noise_location_sweep(&sweep_cfg, &s.sigmas, &s.seeds, s.mode)?;
            write_csv(out, |w| io::write_sweep_csv(w, &r, &hash))?;
            sweep_summary(&r)
        }
        Analysis::BasisSweep => {
            let r = basis_count_sweep(&sweep_cfg, &s.ks, s.basis_sigma, &s.seeds)?;
            write_csv(out, |w| io::write_sweep_csv(w, &r, &hash))?;
            sweep_summary(&r)
        }
        Analysis::TestNoise => {
            let sys = SimulatedSystem::new(&cfg.scene, cfg.surface_seed)?;
            let a = calibrated(cfg, &sys)?;
            let (w, h) = sys.screen_dims();
            let clean: Vec<_> = (0..cfg.test_images as u64)
                .map(|t| sys.observe(&a, &random_lightmap(w, h, cfg.seed, t), 0.0, cfg.seed, t))
                .collect();
            let r = test_noise_stability(&a, &clean, &s.sigmas, &s.seeds)?;
            write_csv(out, |w| io::write_sweep_csv(w, &r, &hash))?;
            sweep_summary(&r)
        }
        Analysis::Misalignment => {
            let sys = SimulatedSystem::new(&cfg.scene, cfg.surface_seed)?;
            let a = calibrated(cfg, &sys)?;
            let r = misalignment_sweep(&sys, &a, &s.shifts, &s.seeds, cfg.test_images)?;
            write_csv(out, |w| io::write_sweep_csv(w, &r, &hash))?;
            sweep_summary(&r)
        }
    };
    Ok(json!({ "config_hash": hash, "result": summary }))
}
