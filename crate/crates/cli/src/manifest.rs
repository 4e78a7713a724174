//! JSON descriptions of on-disk image sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparkle_core::calibrate::{BasisKind, DisplayTransform};

use crate::error::{CliError, CliResult};

/// Probe captures written by `simulate` (or assembled by hand from a real
/// capture session) and consumed by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeManifest {
    pub schema_version: u32,
    pub config_hash: String,
    /// Screen resolution `(width, height)` of the gray lightmap.
    pub screen: (usize, usize),
    /// Sensor resolution `(width, height)`.
    pub sensor: (usize, usize),
    /// Seed from which the random probes are regenerated.
    pub random_seed: u64,
    pub displays: Displays,
    #[serde(default)]
    pub flat_field: Option<FlatField>,
    pub probes: Vec<ProbeEntry>,
    #[serde(default)]
    pub tests: Vec<TestEntry>,
    #[serde(default)]
    pub truth: Option<String>,
    #[serde(default)]
    pub surface: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Displays {
    pub impulse: DisplayTransform,
    pub dct: DisplayTransform,
    pub random: DisplayTransform,
}

impl Displays {
    pub fn get(&self, kind: BasisKind) -> DisplayTransform {
        match kind {
            BasisKind::Impulse => self.impulse,
            BasisKind::Dct => self.dct,
            BasisKind::Random => self.random,
        }
    }
}

/// Capture of a constant screen at `level`, used to remove display offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatField {
    pub level: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeEntry {
    pub kind: BasisKind,
    pub index: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestEntry {
    pub lightmap: String,
    pub sensor: String,
}

impl ProbeManifest {
    /// Paths of probes `0..count` of `kind`, in index order.
    pub fn probe_paths(&self, kind: BasisKind) -> CliResult<Vec<&str>> {
        let mut found: Vec<(usize, &str)> = self
            .probes
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| (p.index, p.path.as_str()))
            .collect();
        found.sort_by_key(|p| p.0);
        for (expect, (idx, _)) in found.iter().enumerate() {
            if *idx != expect {
                return Err(CliError::Config(format!(
                    "manifest: {} probes must be indexed 0..{} without gaps or repeats (found index {idx} at position {expect})",
                    kind.name(),
                    found.len()
                )));
            }
        }
        Ok(found.into_iter().map(|p| p.1).collect())
    }
}

/// Exposure stack for the `hdr` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    pub exposures: Vec<StackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackEntry {
    /// Seconds.
    pub time: f64,
    pub path: String,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}
