//! Lightmap recovery from a single sensor image.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};
use crate::image::{Grid, Lightmap, SensorImage};
use crate::linalg::{self, LeastSquares};
use crate::render::TransferMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Unconstrained,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub lightmap: Lightmap,
    /// `||y - A x||` before clamping to `[0, 1]`.
    pub residual: f64,
    /// Same norm after clamping.
    pub residual_clamped: f64,
    pub solver: Solver,
    pub clamp_count: usize,
}

/// The observation vector of `y` in the row space of `a`, or a mask error.
fn observation(a: &TransferMatrix, y: &SensorImage) -> Result<DVector<f64>> {
    if a.mask != y.mask {
        let describe = |m: &Option<crate::image::PixelMask>| match m {
            Some(m) => format!("mask of {} pixels", m.len()),
            None => "no mask".to_string(),
        };
        return Err(SparkleError::MaskMismatch(format!(
            "matrix has {}, image has {}",
            describe(&a.mask),
            describe(&y.mask)
        )));
    }
    let obs = y.observation();
    if obs.len() != a.rows() {
        return Err(SparkleError::dims(a.rows(), obs.len()));
    }
    Ok(obs)
}

fn finish(
    a: &TransferMatrix,
    y: &DVector<f64>,
    raw: DVector<f64>,
    solver: Solver,
) -> Result<ReconstructionResult> {
    let residual = (y - &a.matrix * &raw).norm();
    let clamp_count = raw.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    let clamped = raw.map(|v| v.clamp(0.0, 1.0));
    let residual_clamped = (y - &a.matrix * &clamped).norm();
    let (w, h, c) = a.screen_shape;
    Ok(ReconstructionResult {
        lightmap: Lightmap::from_vec(w, h, c, clamped.iter().copied().collect())?,
        residual,
        residual_clamped,
        solver,
        clamp_count,
    })
}

/// A transfer matrix with its least-squares factorisation cached, for
/// reconstructing many images against the same calibration.
#[derive(Debug, Clone)]
pub struct Reconstructor<'a> {
    matrix: &'a TransferMatrix,
    ls: LeastSquares,
}

impl<'a> Reconstructor<'a> {
    pub fn new(matrix: &'a TransferMatrix) -> Result<Self> {
        Ok(Reconstructor {
            ls: LeastSquares::new(&matrix.matrix)?,
            matrix,
        })
    }

    pub fn matrix(&self) -> &TransferMatrix {
        self.matrix
    }

    /// Unclamped least-squares solution for an observation vector.
    pub fn solve_raw(&self, y: &DVector<f64>) -> DVector<f64> {
        self.ls.solve(y)
    }

    pub fn reconstruct(&self, y: &SensorImage) -> Result<ReconstructionResult> {
        let obs = observation(self.matrix, y)?;
        self.reconstruct_observation(&obs)
    }

    pub fn reconstruct_observation(&self, obs: &DVector<f64>) -> Result<ReconstructionResult> {
        if obs.len() != self.matrix.rows() {
            return Err(SparkleError::dims(self.matrix.rows(), obs.len()));
        }
        finish(self.matrix, obs, self.ls.solve(obs), Solver::Unconstrained)
    }
}

/// Unconstrained least squares, then clamping into `[0, 1]`.
pub fn reconstruct_ls(a: &TransferMatrix, y: &SensorImage) -> Result<ReconstructionResult> {
    Reconstructor::new(a)?.reconstruct(y)
}

/// Non-negative least squares, then clamping from above at 1.
pub fn reconstruct_nnls(a: &TransferMatrix, y: &SensorImage) -> Result<ReconstructionResult> {
    let obs = observation(a, y)?;
    // rank check, same contract as the unconstrained solver
    LeastSquares::new(&a.matrix)?;
    let sol = linalg::nnls(&a.matrix, &obs)?;
    finish(a, &obs, sol.x, Solver::Nonnegative)
}

/// Anisotropic total variation: sum of absolute forward differences along
/// rows and columns, over all channels.
pub fn total_variation(x: &Lightmap) -> f64 {
    grid_total_variation(x.grid())
}

pub fn grid_total_variation(g: &Grid) -> f64 {
    let (w, h) = (g.width, g.height);
    let mut tv = 0.0;
    for c in 0..g.channels {
        let plane = &g.data[c * w * h..(c + 1) * w * h];
        for r in 0..h {
            for col in 0..w {
                let v = plane[r * w + col];
                if col + 1 < w {
                    tv += (plane[r * w + col + 1] - v).abs();
                }
                if r + 1 < h {
                    tv += (plane[(r + 1) * w + col] - v).abs();
                }
            }
        }
    }
    tv
}

/// Translates the image content by `(dx, dy)` pixels (columns, rows) with
/// bilinear interpolation; samples from outside the frame are 0.
pub fn shift_grid(g: &Grid, dx: f64, dy: f64) -> Grid {
    let (w, h) = (g.width, g.height);
    let mut out = Grid::zeros(w, h, g.channels);
    let sample = |plane: &[f64], r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            plane[r as usize * w + c as usize]
        }
    };
    for ch in 0..g.channels {
        let plane = &g.data[ch * w * h..(ch + 1) * w * h];
        for r in 0..h {
            for c in 0..w {
                let sx = c as f64 - dx;
                let sy = r as f64 - dy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                let v = (1.0 - fy)
                    * ((1.0 - fx) * sample(plane, y0, x0) + fx * sample(plane, y0, x0 + 1))
                    + fy * ((1.0 - fx) * sample(plane, y0 + 1, x0)
                        + fx * sample(plane, y0 + 1, x0 + 1));
                out.data[ch * w * h + r * w + c] = v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSearchConfig {
    /// Candidate `(dx, dy)` offsets in sensor pixels.
    pub shifts: Vec<(f64, f64)>,
}

impl ShiftSearchConfig {
    pub fn new(shifts: Vec<(f64, f64)>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(SparkleError::param("shift grid", "must not be empty"));
        }
        if !shifts.iter().any(|&(x, y)| x == 0.0 && y == 0.0) {
            return Err(SparkleError::param(
                "shift grid",
                "must contain the zero shift",
            ));
        }
        Ok(ShiftSearchConfig { shifts })
    }

    /// Square grid `{min, min + step, ..., max}^2`.
    pub fn square(min: f64, max: f64, step: f64) -> Result<Self> {
        let axis = grid_axis(min, max, step)?;
        let shifts = axis
            .iter()
            .flat_map(|&dy| axis.iter().map(move |&dx| (dx, dy)))
            .collect();
        ShiftSearchConfig::new(shifts)
    }

    /// Horizontal-only grid `{(min, 0), ..., (max, 0)}`.
    pub fn horizontal(min: f64, max: f64, step: f64) -> Result<Self> {
        ShiftSearchConfig::new(
            grid_axis(min, max, step)?
                .into_iter()
                .map(|d| (d, 0.0))
                .collect(),
        )
    }
}

fn grid_axis(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) {
        return Err(SparkleError::param(
            "shift grid",
            "need step > 0 and max >= min",
        ));
    }
    let count = ((max - min) / step + 1e-9).floor() as i64;
    // snap to the step lattice so 0 is represented exactly when min is a multiple of step
    Ok((0..=count)
        .map(|i| {
            let v = min + i as f64 * step;
            let snapped = (v / step).round() * step;
            if (v - snapped).abs() < 1e-9 * step.max(1.0) {
                if snapped == 0.0 {
                    0.0
                } else {
                    snapped
                }
            } else {
                v
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSearchResult {
    pub shift: (f64, f64),
    pub total_variation: f64,
    pub result: ReconstructionResult,
    /// `(shift, total variation)` for every candidate that reconstructed.
    pub scores: Vec<((f64, f64), f64)>,
}

/// Reconstructs `y` under every candidate shift and keeps the one whose
/// recovered lightmap has the smallest total variation. Ties go to the
/// shorter shift, then lexicographically.
pub fn reconstruct_with_shift_search(
    a: &TransferMatrix,
    y: &SensorImage,
    config: &ShiftSearchConfig,
) -> Result<ShiftSearchResult> {
    if y.mask.is_some() && y.mask != a.mask {
        return Err(SparkleError::MaskMismatch(
            "image carries a different mask".into(),
        ));
    }
    let solver = Reconstructor::new(a)?;
    let candidates: Vec<Result<((f64, f64), f64, ReconstructionResult)>> = config
        .shifts
        .par_iter()
        .map(|&(dx, dy)| {
            let shifted = SensorImage {
                grid: shift_grid(&y.grid, dx, dy),
                mask: a.mask.clone(),
            };
            let r = solver.reconstruct(&shifted)?;
            Ok(((dx, dy), total_variation(&r.lightmap), r))
        })
        .collect();

    let mut ok: Vec<((f64, f64), f64, ReconstructionResult)> = Vec::new();
    for c in candidates {
        match c {
            Ok(v) => ok.push(v),
            Err(e) => log::warn!("shift candidate failed: {e}"),
        }
    }
    let scores = ok.iter().map(|(s, tv, _)| (*s, *tv)).collect();
    let best = ok
        .into_iter()
        .min_by(|(sa, ta, _), (sb, tb, _)| {
            ta.total_cmp(tb)
                .then((sa.0.hypot(sa.1)).total_cmp(&sb.0.hypot(sb.1)))
                .then(sa.0.total_cmp(&sb.0))
                .then(sa.1.total_cmp(&sb.1))
        })
        .ok_or(SparkleError::AllShiftsFailed(config.shifts.len()))?;
    Ok(ShiftSearchResult {
        shift: best.0,
        total_variation: best.1,
        result: best.2,
        scores,
    })
}
