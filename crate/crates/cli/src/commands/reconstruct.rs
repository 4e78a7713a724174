//! Recovers a lightmap from one sensor image.

use std::path::Path;

use serde::Serialize;
use sparkle_core::hdr::{subtract_background, BackgroundFrame};
use sparkle_core::reconstruct::{
    reconstruct_nnls, reconstruct_with_shift_search, shift_grid, Reconstructor, ShiftSearchConfig,
    Solver,
};
use sparkle_core::render::TransferMatrix;
use sparkle_core::{io, SensorImage};

use super::load_grid;
use crate::error::{at_path, CliError, CliResult};
use crate::manifest::write_json;

#[derive(Debug, Clone, Default)]
pub struct ReconstructArgs {
    pub nonnegative: bool,
    pub shift_search: Option<ShiftSearchConfig>,
    /// Also write an 8-bit preview (PGM/PPM) here.
    pub preview: Option<std::path::PathBuf>,
}

/// Sidecar written next to the recovered lightmap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructReport {
    pub solver: Solver,
    pub residual: f64,
    pub residual_clamped: f64,
    pub clamp_count: usize,
    /// Compensating shift chosen by the search, `(0, 0)` without one.
    pub shift: (f64, f64),
    pub total_variation: Option<f64>,
}

pub fn solve(
    a: &TransferMatrix,
    image: SensorImage,
    args: &ReconstructArgs,
) -> CliResult<(SensorImage, ReconstructReport)> {
    let y = SensorImage {
        grid: image.grid,
        mask: a.mask.clone(),
    };
    let (shift, tv) = match &args.shift_search {
        Some(grid) => {
            let s = reconstruct_with_shift_search(a, &y, grid)?;
            (s.shift, Some(s.total_variation))
        }
        None => ((0.0, 0.0), None),
    };
    let y = if shift == (0.0, 0.0) {
        y
    } else {
        SensorImage {
            grid: shift_grid(&y.grid, shift.0, shift.1),
            mask: y.mask,
        }
    };
    let r = if args.nonnegative {
        reconstruct_nnls(a, &y)?
    } else {
        Reconstructor::new(a)?.reconstruct(&y)?
    };
    let report = ReconstructReport {
        solver: r.solver,
        residual: r.residual,
        residual_clamped: r.residual_clamped,
        clamp_count: r.clamp_count,
        shift,
        total_variation: tv,
    };
    Ok((SensorImage::new(r.lightmap.0), report))
}

pub fn run(
    a: &TransferMatrix,
    image_path: &Path,
    background: Option<&BackgroundFrame>,
    args: &ReconstructArgs,
    out: &Path,
) -> CliResult<ReconstructReport> {
    let grid = load_grid(image_path)?;
    let expected = a
        .mask
        .as_ref()
        .and_then(|m| m.indices().last())
        .map_or(0, |&i| i + 1);
    if grid.len() < expected || (a.mask.is_none() && grid.len() != a.rows()) {
        return Err(CliError::Config(format!(
            "{}: image {} does not match a {}x{} transfer matrix",
            image_path.display(),
            grid.shape_string(),
            a.rows(),
            a.cols()
        )));
    }
    let image = match background {
        Some(bg) => subtract_background(&SensorImage::new(grid), bg)?,
        None => SensorImage::new(grid),
    };
    let (x, report) = solve(a, image, args)?;
    at_path(io::save_pfm(out, &x.grid), out)?;
    if let Some(p) = &args.preview {
        at_path(io::save_display(p, &x.grid, Some(1.0)), p)?;
    }
    write_json(&out.with_extension("json"), &report)?;
    Ok(report)
}
