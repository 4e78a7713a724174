//! Fuses an exposure stack into one radiance image.

use std::path::Path;

use serde::Serialize;
use sparkle_core::hdr::{
    hdr_merge, subtract_background, BackgroundFrame, Exposure, ExposureStack, DEFAULT_WINDOW,
};
use sparkle_core::io;

use super::load_grid;
use crate::error::{at_path, CliResult};
use crate::manifest::{read_json, resolve, write_json, StackManifest};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HdrReport {
    pub exposures: usize,
    pub window: (f64, f64),
    pub fallback_pixels: usize,
    pub background_frames: usize,
}

/// Writes the merged image to `out` and a summary next to it.
pub fn run(
    stack_path: &Path,
    background: Option<&BackgroundFrame>,
    out: &Path,
) -> CliResult<HdrReport> {
    let manifest: StackManifest = read_json(stack_path)?;
    let entries = manifest
        .exposures
        .iter()
        .map(|e| {
            Ok(Exposure {
                time: e.time,
                image: load_grid(&resolve(stack_path, &e.path))?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let window = manifest.window.unwrap_or(DEFAULT_WINDOW);
    let stack = ExposureStack::with_window(entries, window)?;
    let merged = hdr_merge(&stack)?;
    let image = match background {
        Some(bg) => subtract_background(&merged.image, bg)?,
        None => merged.image,
    };
    at_path(io::save_pfm(out, &image.grid), out)?;
    if !merged.fallback_pixels.is_empty() {
        log::warn!(
            "{} pixel(s) had no exposure inside the window",
            merged.fallback_pixels.len()
        );
    }
    let report = HdrReport {
        exposures: stack.entries().len(),
        window,
        fallback_pixels: merged.fallback_pixels.len(),
        background_frames: background.map_or(0, |b| b.count),
    };
    write_json(&out.with_extension("json"), &report)?;
    Ok(report)
}
