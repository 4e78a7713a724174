//! Renders every calibration probe and a set of test images for a
//! configured scene, and writes them with a manifest.

use std::path::Path;

use rayon::prelude::*;
use sparkle_core::analysis::{add_noise, random_lightmap, ProbeDisplay, SimulatedSystem};
use sparkle_core::calibrate::{build_bases, BasisKind, BasisSet, DisplayTransform};
use sparkle_core::{io, Grid};

use super::{matrix_bytes, pfm_bytes, write_bytes};
use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{at_path, CliResult};
use crate::manifest::{write_json, Displays, FlatField, ProbeEntry, ProbeManifest, TestEntry};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<ProbeManifest> {
    let sys = SimulatedSystem::new(&cfg.scene, cfg.surface_seed)?;
    let (w, h) = sys.screen_dims();
    let (sw, sh) = (
        sys.scene.camera.sensor_width,
        sys.scene.camera.sensor_height,
    );
    let bases = build_bases(w, h, cfg.calibration.k, cfg.seed)?;
    let sigma = cfg.noise.calibration_sigma;
    let seed = cfg.seed;

    let capture = |v: &[f64], label: &str, idx: u64| -> Grid {
        let mut y = sys.transport.render_slice(v, 1);
        add_noise(&mut y, sigma, seed, label, idx);
        Grid::from_vec(sw, sh, 1, y).expect("sensor sized")
    };
    let shown = |set: &BasisSet| match cfg.calibration.display {
        ProbeDisplay::Signed => DisplayTransform::IDENTITY,
        ProbeDisplay::Physical => set.display,
    };
    let displays = Displays {
        impulse: shown(&bases.impulse),
        dct: shown(&bases.dct),
        random: shown(&bases.random),
    };

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut probes = Vec::new();
    // same noise labels as the in-memory measurement, so both paths agree
    for (set, label) in [
        (&bases.impulse, "noise-impulse"),
        (&bases.dct, "noise-dct"),
        (&bases.random, "noise-random"),
    ] {
        let d = displays.get(set.kind);
        let images: Vec<Vec<u8>> = (0..set.len())
            .into_par_iter()
            .map(|j| {
                let v = d.apply(set.vectors.column(j).as_slice());
                pfm_bytes(&capture(&v, label, j as u64))
            })
            .collect();
        for (j, bytes) in images.into_iter().enumerate() {
            let path = format!("probes/{}_{j:04}.pfm", set.kind.name());
            probes.push(ProbeEntry {
                kind: set.kind,
                index: j,
                path: path.clone(),
            });
            files.push((path, bytes));
        }
    }

    let offsets: Vec<f64> = [BasisKind::Impulse, BasisKind::Dct, BasisKind::Random]
        .iter()
        .map(|&k| displays.get(k).offset)
        .filter(|&o| o != 0.0)
        .collect();
    let flat_field = match offsets.first() {
        Some(&level) => {
            if offsets.iter().any(|&o| o != level) {
                log::warn!(
                    "probe families use different display offsets; flat field taken at {level}"
                );
            }
            let path = "probes/flat.pfm".to_string();
            files.push((
                path.clone(),
                pfm_bytes(&capture(&vec![level; w * h], "flat-field", 0)),
            ));
            Some(FlatField { level, path })
        }
        None => None,
    };

    let mut tests = Vec::new();
    for t in 0..cfg.test_images {
        let x = random_lightmap(w, h, seed, t as u64);
        let mut y = sys.render(&x);
        add_noise(&mut y, cfg.noise.test_sigma, seed, "noise-test", t as u64);
        let entry = TestEntry {
            lightmap: format!("test/lightmap_{t:03}.pfm"),
            sensor: format!("test/sensor_{t:03}.pfm"),
        };
        files.push((entry.lightmap.clone(), pfm_bytes(x.grid())));
        files.push((
            entry.sensor.clone(),
            pfm_bytes(&Grid::from_vec(sw, sh, 1, y)?),
        ));
        tests.push(entry);
    }

    files.push(("truth.mat".into(), matrix_bytes(&sys.truth)));
    let mut surf = Vec::new();
    io::write_surface(&mut surf, &sys.scene.surface)?;
    files.push(("surface.surf".into(), surf));

    at_path(std::fs::create_dir_all(out_dir), out_dir)?;
    for (rel, bytes) in &files {
        write_bytes(&out_dir.join(rel), bytes)?;
    }

    let manifest = ProbeManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        screen: (w, h),
        sensor: (sw, sh),
        random_seed: seed,
        displays,
        flat_field,
        probes,
        tests,
        truth: Some("truth.mat".into()),
        surface: Some("surface.surf".into()),
    };
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    log::info!("wrote {} files to {}", files.len() + 1, out_dir.display());
    Ok(manifest)
}
