//! Subcommand implementations. Each returns a value the tests can inspect
//! in addition to writing its outputs.

pub mod analyze;
pub mod calibrate;
pub mod hdr;
pub mod pipeline;
pub mod reconstruct;
pub mod simulate;

use std::path::Path;

use sparkle_core::io;
use sparkle_core::render::TransferMatrix;
use sparkle_core::Grid;

use crate::error::{at_path, CliError, CliResult};

/// Parses `WxH` or `WxHxC`.
pub fn parse_shape(s: &str) -> CliResult<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[w, h]) if w > 0 && h > 0 => Ok((w, h, 1)),
        Some(&[w, h, c]) if w > 0 && h > 0 && (c == 1 || c == 3) => Ok((w, h, c)),
        _ => Err(CliError::Config(format!(
            "screen shape `{s}`: expected WxH or WxHxC with C in {{1, 3}}"
        ))),
    }
}

/// Parses `min,max,step`.
pub fn parse_range(s: &str) -> CliResult<(f64, f64, f64)> {
    let nums: Option<Vec<f64>> = s.split(',').map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some(&[a, b, c]) => Ok((a, b, c)),
        _ => Err(CliError::Config(format!(
            "range `{s}`: expected min,max,step"
        ))),
    }
}

pub fn load_grid(path: &Path) -> CliResult<Grid> {
    at_path(io::load_pfm(path), path)
}

pub fn pfm_bytes(grid: &Grid) -> Vec<u8> {
    let mut buf = Vec::new();
    io::write_pfm(&mut buf, grid).expect("in-memory write");
    buf
}

pub fn matrix_bytes(a: &TransferMatrix) -> Vec<u8> {
    let mut buf = Vec::new();
    io::write_matrix(&mut buf, a).expect("in-memory write");
    buf
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        at_path(std::fs::create_dir_all(dir), dir)?;
    }
    at_path(std::fs::write(path, bytes), path)
}

/// Finite values as numbers, infinities as `null`.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("10x12").unwrap(), (10, 12, 1));
        assert_eq!(parse_shape("4x4x3").unwrap(), (4, 4, 3));
        assert!(parse_shape("4x4x2").is_err());
        assert!(parse_shape("0x4").is_err());
        assert!(parse_shape("4").is_err());
        assert_eq!(parse_range("-1,1,0.5").unwrap(), (-1.0, 1.0, 0.5));
        assert!(parse_range("1,2").is_err());
    }
}
