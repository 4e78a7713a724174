//! Declarative experiment description read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparkle_core::analysis::{NoiseMode, ProbeDisplay, SweepConfig};
use sparkle_core::calibrate::CalibrationConfig;
use sparkle_core::scene::SceneConfig;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Drives probes, noise and test lightmaps.
    pub seed: u64,
    /// Seed of the facet orientations.
    #[serde(default)]
    pub surface_seed: u64,
    pub scene: SceneConfig,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default = "default_test_images")]
    pub test_images: usize,
    /// Solve with the nonnegativity constraint instead of plain least squares.
    #[serde(default)]
    pub nonnegative: bool,
    #[serde(default)]
    pub shift_search: Option<ShiftGrid>,
    #[serde(default)]
    pub sweeps: SweepSettings,
}

fn default_test_images() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    pub k: usize,
    pub fraction: f64,
    /// `None` selects `1 / N`.
    pub lambda: Option<f64>,
    pub tolerance: f64,
    pub use_mask: bool,
    pub display: ProbeDisplay,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        CalibrationSettings {
            k: 0,
            fraction: c.fraction,
            lambda: c.lambda,
            tolerance: c.tolerance,
            use_mask: true,
            display: ProbeDisplay::Physical,
        }
    }
}

impl CalibrationSettings {
    pub fn core(&self) -> CalibrationConfig {
        CalibrationConfig {
            lambda: self.lambda,
            fraction: self.fraction,
            k: self.k,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSettings {
    pub calibration_sigma: f64,
    pub test_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    #[serde(default)]
    pub two_dimensional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub sigmas: Vec<f64>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: NoiseMode,
    pub basis_sigma: f64,
    /// Horizontal test-image shifts, in sensor pixels.
    pub shifts: Vec<f64>,
    pub overlap_threshold: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            sigmas: vec![0.0, 0.005, 0.01, 0.02],
            ks: vec![0, 25, 50, 100],
            seeds: (0..3).collect(),
            mode: NoiseMode::Both,
            basis_sigma: 0.01,
            shifts: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            overlap_threshold: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let field = |name: &str, ok: bool, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!("field `{name}`: {why}")))
            }
        };
        field(
            "noise.calibration_sigma",
            self.noise.calibration_sigma >= 0.0,
            "must be >= 0",
        )?;
        field(
            "noise.test_sigma",
            self.noise.test_sigma >= 0.0,
            "must be >= 0",
        )?;
        field(
            "calibration.fraction",
            self.calibration.fraction > 0.0 && self.calibration.fraction <= 1.0,
            "must be in (0, 1]",
        )?;
        field(
            "calibration.lambda",
            self.calibration.lambda.is_none_or(|l| l > 0.0),
            "must be positive",
        )?;
        field(
            "sweeps.overlap_threshold",
            self.sweeps.overlap_threshold > 0.0 && self.sweeps.overlap_threshold <= 1.0,
            "must be in (0, 1]",
        )?;
        if let Some(g) = &self.shift_search {
            field(
                "shift_search",
                g.step > 0.0 && g.max >= g.min,
                "need step > 0 and max >= min",
            )?;
        }
        field(
            "sweeps.sigmas",
            self.sweeps.sigmas.iter().all(|&s| s >= 0.0),
            "must be >= 0",
        )?;
        field(
            "sweeps.ks",
            self.sweeps.ks.windows(2).all(|w| w[0] <= w[1]),
            "must be ascending",
        )?;
        // build the scene once so geometry problems surface at load time
        self.scene
            .build(self.surface_seed)
            .map(|_| ())
            .map_err(|e| CliError::Config(format!("field `scene`: {e}")))
    }

    /// Starting point for a new experiment. `small` gives a scene that
    /// runs in well under a second.
    pub fn starter(small: bool) -> Self {
        let (scene, k, test_images) = if small {
            (SceneConfig::standard(4, 16, 0.3, 1.5, 0.2, 2), 8, 3)
        } else {
            (SceneConfig::default_sweep(), 100, 10)
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            surface_seed: 0,
            scene,
            calibration: CalibrationSettings {
                k,
                ..CalibrationSettings::default()
            },
            noise: NoiseSettings::default(),
            test_images,
            nonnegative: false,
            shift_search: None,
            sweeps: SweepSettings::default(),
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            scene: self.scene,
            surface_seed: self.surface_seed,
            calibration: self.calibration.core(),
            use_mask: self.calibration.use_mask,
            display: self.calibration.display,
            test_images: self.test_images,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn screen_dims(&self) -> (usize, usize) {
        (
            self.scene.screen.width_pixels,
            self.scene.screen.height_pixels,
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            surface_seed: 0,
            scene: SceneConfig::standard(2, 8, 0.3, 1.5, 0.2, 1),
            calibration: CalibrationSettings::default(),
            noise: NoiseSettings::default(),
            test_images: 2,
            nonnegative: false,
            shift_search: None,
            sweeps: SweepSettings::default(),
        }
    }

    #[test]
    fn starters_validate() {
        ExperimentConfig::starter(true).validate().unwrap();
        ExperimentConfig::starter(false).validate().unwrap();
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let c = minimal();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_field_reports_position() {
        let mut v = serde_json::to_value(minimal()).unwrap();
        v["bogus"] = serde_json::json!(1);
        let text = serde_json::to_string_pretty(&v).unwrap();
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("line"), "{err}");
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn wrong_schema_rejected() {
        let mut c = minimal();
        c.schema_version = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = minimal();
        let mut seen = vec![base.hash()];
        let mut variants = vec![];
        let mut c = base.clone();
        c.seed += 1;
        variants.push(c);
        let mut c = base.clone();
        c.scene.screen.pixel_width *= 1.0 + 1e-12;
        variants.push(c);
        let mut c = base.clone();
        c.calibration.lambda = Some(0.5);
        variants.push(c);
        let mut c = base.clone();
        c.sweeps.seeds.push(9);
        variants.push(c);
        for v in variants {
            let h = v.hash();
            assert!(!seen.contains(&h));
            seen.push(h);
        }
        assert_eq!(base.hash(), minimal().hash());
    }
}
