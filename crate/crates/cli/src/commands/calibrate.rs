//! Estimates a transfer matrix from captured probe images.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use sparkle_core::calibrate::{
    bright_mask, build_bases, calibrate_matrix, BasisKind, BasisSet, CalibrationConfig,
    ProbeResponses,
};
use sparkle_core::hdr::BackgroundFrame;
use sparkle_core::render::TransferMatrix;
use sparkle_core::{io, Grid};

use super::load_grid;
use crate::error::{at_path, CliError, CliResult};
use crate::manifest::{read_json, resolve, ProbeManifest};

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    /// Families to use; impulses are always required.
    pub families: Vec<BasisKind>,
    /// Random probes to use; `None` takes every one in the manifest.
    pub k: Option<usize>,
    pub config: CalibrationConfig,
    pub use_mask: bool,
    pub background: Option<Grid>,
}

/// Loads probe captures, removes display offsets and gains, and solves for A.
pub fn run(manifest_path: &Path, args: &CalibrateArgs, out: &Path) -> CliResult<TransferMatrix> {
    let manifest: ProbeManifest = read_json(manifest_path)?;
    if !args.families.contains(&BasisKind::Impulse) {
        return Err(CliError::Config("--bases must include impulse".into()));
    }
    let (w, h) = manifest.screen;
    let available = manifest.probe_paths(BasisKind::Random)?.len();
    let k = args.k.unwrap_or(available);
    if k > available {
        return Err(CliError::Config(format!(
            "--k {k} exceeds the {available} random probes in the manifest"
        )));
    }
    let mut bases = build_bases(w, h, k, manifest.random_seed)?;
    for kind in [BasisKind::Dct, BasisKind::Random] {
        if !args.families.contains(&kind) {
            let set = family_mut(&mut bases, kind);
            set.vectors = DMatrix::zeros(set.dim(), 0);
        }
    }

    let flat = match &manifest.flat_field {
        Some(f) => Some((
            f.level,
            load_capture(manifest_path, &f.path, &manifest, args)?,
        )),
        None => None,
    };
    let responses = ProbeResponses {
        impulse: load_family(
            manifest_path,
            &manifest,
            &bases.impulse,
            flat.as_ref(),
            args,
        )?,
        dct: load_family(manifest_path, &manifest, &bases.dct, flat.as_ref(), args)?,
        random: load_family(manifest_path, &manifest, &bases.random, flat.as_ref(), args)?,
    };
    let mask = if args.use_mask {
        Some(bright_mask(&responses.impulse, args.config.fraction)?)
    } else {
        None
    };
    let cal = CalibrationConfig { k, ..args.config };
    let a = calibrate_matrix(&responses, &bases, mask.as_ref(), &cal, (w, h, 1))?;
    at_path(io::save_matrix(out, &a), out)?;
    log::info!(
        "calibrated {}x{} matrix -> {}",
        a.rows(),
        a.cols(),
        out.display()
    );
    Ok(a)
}

fn family_mut(bases: &mut sparkle_core::calibrate::Bases, kind: BasisKind) -> &mut BasisSet {
    match kind {
        BasisKind::Impulse => &mut bases.impulse,
        BasisKind::Dct => &mut bases.dct,
        BasisKind::Random => &mut bases.random,
    }
}

fn load_capture(
    manifest_path: &Path,
    rel: &str,
    manifest: &ProbeManifest,
    args: &CalibrateArgs,
) -> CliResult<Vec<f64>> {
    let path = resolve(manifest_path, rel);
    let g = load_grid(&path)?;
    if (g.width, g.height, g.channels) != (manifest.sensor.0, manifest.sensor.1, 1) {
        return Err(CliError::Io(format!(
            "{}: expected a {}x{} gray image, found {}",
            path.display(),
            manifest.sensor.0,
            manifest.sensor.1,
            g.shape_string()
        )));
    }
    let mut data = g.data;
    if let Some(bg) = &args.background {
        if !bg.same_shape(&Grid::zeros(manifest.sensor.0, manifest.sensor.1, 1)) {
            return Err(CliError::Config(format!(
                "background is {}, sensor is {}x{}",
                bg.shape_string(),
                manifest.sensor.0,
                manifest.sensor.1
            )));
        }
        data.iter_mut()
            .zip(&bg.data)
            .for_each(|(v, b)| *v = (*v - b).max(0.0));
    }
    Ok(data)
}

fn load_family(
    manifest_path: &Path,
    manifest: &ProbeManifest,
    set: &BasisSet,
    flat: Option<&(f64, Vec<f64>)>,
    args: &CalibrateArgs,
) -> CliResult<DMatrix<f64>> {
    let m = manifest.sensor.0 * manifest.sensor.1;
    let paths = manifest.probe_paths(set.kind)?;
    if paths.len() < set.len() {
        return Err(CliError::Config(format!(
            "manifest has {} {} probes, {} needed",
            paths.len(),
            set.kind.name(),
            set.len()
        )));
    }
    let display = manifest.displays.get(set.kind);
    if !(display.gain != 0.0) {
        return Err(CliError::Config(format!(
            "{} display gain must be nonzero",
            set.kind.name()
        )));
    }
    let flat = match (display.offset, flat) {
        (0.0, _) => None,
        (o, Some((level, f))) if *level == o => Some(f),
        (o, _) => {
            return Err(CliError::Config(format!(
                "{} probes were shown with offset {o} but no flat field at that level was captured",
                set.kind.name()
            )))
        }
    };
    let columns: Vec<Vec<f64>> = paths[..set.len()]
        .par_iter()
        .map(|rel| {
            let mut y = load_capture(manifest_path, rel, manifest, args)?;
            if let Some(f) = flat {
                y.iter_mut().zip(f).for_each(|(a, b)| *a -= b);
            }
            y.iter_mut().for_each(|a| *a /= display.gain);
            Ok(y)
        })
        .collect::<CliResult<_>>()?;
    let mut out = DMatrix::zeros(m, set.len());
    for (j, c) in columns.iter().enumerate() {
        out.column_mut(j).copy_from_slice(c);
    }
    Ok(out)
}

/// Dark frame for background subtraction, averaged over `paths`.
pub fn load_background(paths: &[std::path::PathBuf]) -> CliResult<Option<BackgroundFrame>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let frames: Vec<Grid> = paths
        .iter()
        .map(|p| load_grid(p))
        .collect::<CliResult<_>>()?;
    Ok(Some(sparkle_core::hdr::average_backgrounds(&frames)?))
}
