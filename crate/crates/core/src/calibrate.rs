//! Probe bases and transfer-matrix estimation.
//!
//! The system is probed with impulses `E`, an orthonormal 2-D DCT basis `D`
//! and `K` random patterns `B`. Given the measured responses the estimate is
//! the minimiser of
//!
//! ```text
//! ||Y1 - A E||^2 + lambda ||Y2 - A D||^2 + lambda ||Y3 - A B||^2
//! ```
//!
//! optionally after keeping only the rows in a bright-pixel mask. The
//! minimiser is `(Y1 E^T + lambda Y2 D^T + lambda Y3 B^T) G^-1` with
//! `G = E E^T + lambda D D^T + lambda B B^T`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};
use crate::image::PixelMask;
use crate::linalg::{pseudo_inverse, CholeskyFailure, PivotedCholesky};
use crate::render::{Provenance, TransferMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Impulse,
    Dct,
    Random,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Impulse => "impulse",
            BasisKind::Dct => "dct",
            BasisKind::Random => "random",
        }
    }
}

/// Affine map `display = offset + gain * v` that turns a (possibly signed)
/// basis vector into something a screen can show.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayTransform {
    pub gain: f64,
    pub offset: f64,
}

impl DisplayTransform {
    pub const IDENTITY: DisplayTransform = DisplayTransform {
        gain: 1.0,
        offset: 0.0,
    };

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| self.offset + self.gain * x).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: BasisKind,
    /// One probe per column, `N` rows.
    pub vectors: DMatrix<f64>,
    pub display: DisplayTransform,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Orthonormal 2-D DCT-II basis on a `width x height` grid. Column
/// `ky * width + kx` holds frequency `(ky, kx)` flattened row-major.
pub fn dct_basis(width: usize, height: usize) -> DMatrix<f64> {
    let n = width * height;
    let cos_table = |len: usize| -> DMatrix<f64> {
        DMatrix::from_fn(len, len, |k, i| {
            let alpha = if k == 0 {
                (1.0 / len as f64).sqrt()
            } else {
                (2.0 / len as f64).sqrt()
            };
            alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2 * len) as f64).cos()
        })
    };
    let cx = cos_table(width);
    let cy = cos_table(height);
    DMatrix::from_fn(n, n, |pix, freq| {
        let (r, c) = (pix / width, pix % width);
        let (ky, kx) = (freq / width, freq % width);
        cy[(ky, r)] * cx[(kx, c)]
    })
}

/// Block-diagonal replication of a gray basis over `channels` colours.
fn block_diag(m: &DMatrix<f64>, channels: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * channels, c * channels);
    for k in 0..channels {
        out.view_mut((k * r, k * c), (r, c)).copy_from(m);
    }
    out
}

/// The three probe families.
#[derive(Debug, Clone, PartialEq)]
pub struct Bases {
    pub impulse: BasisSet,
    pub dct: BasisSet,
    pub random: BasisSet,
}

/// Builds impulse, DCT and `k` random probes for a gray
/// `width x height` screen. Random entries are i.i.d. uniform on `[0, 1]`.
pub fn build_bases(width: usize, height: usize, k: usize, seed: u64) -> Result<Bases> {
    if width == 0 || height == 0 {
        return Err(SparkleError::param(
            "screen",
            "resolution must be at least 1x1",
        ));
    }
    let n = width * height;
    let mut rng = rng::stream(seed, "random-basis", 0);
    // column-by-column so that the first k' columns do not depend on k
    let mut random = DMatrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            random[(i, j)] = rng.random_range(0.0..=1.0);
        }
    }
    Ok(Bases {
        impulse: BasisSet {
            kind: BasisKind::Impulse,
            vectors: DMatrix::identity(n, n),
            display: DisplayTransform::IDENTITY,
        },
        dct: BasisSet {
            kind: BasisKind::Dct,
            vectors: dct_basis(width, height),
            display: DisplayTransform {
                gain: 0.5,
                offset: 0.5,
            },
        },
        random: BasisSet {
            kind: BasisKind::Random,
            vectors: random,
            display: DisplayTransform::IDENTITY,
        },
    })
}

/// Extends gray bases to `channels` colours: every gray probe is shown once
/// per channel, giving block-diagonal probe matrices over the stacked
/// colour vector.
pub fn expand_color(gray: &Bases, channels: usize) -> Result<Bases> {
    if channels != 1 && channels != 3 {
        return Err(SparkleError::param(
            "channels",
            format!("must be 1 or 3, got {channels}"),
        ));
    }
    let n = gray.impulse.dim();
    if gray.dct.dim() != n || gray.random.dim() != n {
        return Err(SparkleError::dims(n, gray.dct.dim().max(gray.random.dim())));
    }
    let expand = |b: &BasisSet| BasisSet {
        kind: b.kind,
        vectors: block_diag(&b.vectors, channels),
        display: b.display,
    };
    Ok(Bases {
        impulse: expand(&gray.impulse),
        dct: expand(&gray.dct),
        random: expand(&gray.random),
    })
}

/// Union of the brightest pixels of every impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct BrightMask {
    pub omega: PixelMask,
    pub per_impulse: Vec<Vec<usize>>,
    pub fraction: f64,
}

/// Keeps the `ceil(fraction * M)` largest entries of each column of
/// `impulse_responses` (ties go to the lowest index) and unions them.
pub fn bright_mask(impulse_responses: &DMatrix<f64>, fraction: f64) -> Result<BrightMask> {
    let (m, n) = impulse_responses.shape();
    if n == 0 || m == 0 {
        return Err(SparkleError::Empty("impulse responses"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SparkleError::param(
            "fraction",
            format!("{fraction} not in (0, 1]"),
        ));
    }
    let keep = ((fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut per_impulse = Vec::with_capacity(n);
    let mut all = Vec::new();
    for col in impulse_responses.column_iter() {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        order.truncate(keep);
        order.sort_unstable();
        all.extend_from_slice(&order);
        per_impulse.push(order);
    }
    Ok(BrightMask {
        omega: PixelMask::new(all),
        per_impulse,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Weight of the DCT and random terms; `None` means `1 / N`.
    pub lambda: Option<f64>,
    pub fraction: f64,
    pub k: usize,
    /// Relative pivot tolerance of the Gram factorisation.
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            lambda: None,
            fraction: 0.01,
            k: 0,
            tolerance: 1e-12,
        }
    }
}

impl CalibrationConfig {
    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / n as f64)
    }
}

/// Measured responses, one column per probe, rows over the full sensor.
/// `dct` and `random` may have zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResponses {
    pub impulse: DMatrix<f64>,
    pub dct: DMatrix<f64>,
    pub random: DMatrix<f64>,
}

impl ProbeResponses {
    pub fn rows(&self) -> usize {
        self.impulse.nrows()
    }
}

/// Weighted least-squares estimate of the transfer matrix.
///
/// `screen_shape` is `(width, height, channels)` of the lightmap the columns
/// index. With a mask, only rows in `mask.omega` are estimated.
pub fn calibrate_matrix(
    responses: &ProbeResponses,
    bases: &Bases,
    mask: Option<&BrightMask>,
    config: &CalibrationConfig,
    screen_shape: (usize, usize, usize),
) -> Result<TransferMatrix> {
    let n = bases.impulse.dim();
    let m = responses.rows();
    let check = |name: &str, y: &DMatrix<f64>, b: &BasisSet| -> Result<()> {
        if y.ncols() != b.len() || y.nrows() != m || b.dim() != n {
            return Err(SparkleError::dims(
                format!("{name}: {m}x{} responses for {}-dim probes", b.len(), n),
                format!(
                    "{}x{} responses for {}-dim probes",
                    y.nrows(),
                    y.ncols(),
                    b.dim()
                ),
            ));
        }
        Ok(())
    };
    check("impulse", &responses.impulse, &bases.impulse)?;
    check("dct", &responses.dct, &bases.dct)?;
    check("random", &responses.random, &bases.random)?;
    let lambda = config.lambda_for(n);
    if !(lambda > 0.0) {
        return Err(SparkleError::param("lambda", "must be positive"));
    }

    let project = |y: &DMatrix<f64>| match mask {
        Some(mk) => y.select_rows(mk.omega.indices()),
        None => y.clone(),
    };
    if let Some(mk) = mask {
        if mk.omega.indices().last().is_some_and(|&i| i >= m) {
            return Err(SparkleError::MaskMismatch(
                "mask index beyond sensor rows".into(),
            ));
        }
    }
    let (e, d, b) = (
        &bases.impulse.vectors,
        &bases.dct.vectors,
        &bases.random.vectors,
    );
    let rhs = project(&responses.impulse) * e.transpose()
        + project(&responses.dct) * d.transpose() * lambda
        + project(&responses.random) * b.transpose() * lambda;
    let gram = e * e.transpose() + d * d.transpose() * lambda + b * b.transpose() * lambda;

    // A G = R  <=>  G A^T = R^T (G symmetric)
    let at = match PivotedCholesky::factor(&gram, config.tolerance) {
        Ok(c) => c.solve(&rhs.transpose()),
        Err(CholeskyFailure::Deficient(directions)) => {
            return Err(SparkleError::SingularGram { directions })
        }
        Err(CholeskyFailure::Breakdown) => {
            log::warn!("gram factorisation broke down; using pseudo-inverse");
            pseudo_inverse(&gram, config.tolerance) * rhs.transpose()
        }
    };
    TransferMatrix::new(
        at.transpose(),
        Provenance::Calibrated,
        mask.map(|mk| mk.omega.clone()),
        screen_shape,
    )
}

/// Value of the (masked) calibration objective at `a`.
pub fn calibration_objective(
    a: &DMatrix<f64>,
    responses: &ProbeResponses,
    bases: &Bases,
    mask: Option<&BrightMask>,
    lambda: f64,
) -> f64 {
    let project = |y: &DMatrix<f64>| match mask {
        Some(mk) => y.select_rows(mk.omega.indices()),
        None => y.clone(),
    };
    (project(&responses.impulse) - a * &bases.impulse.vectors).norm_squared()
        + lambda * (project(&responses.dct) - a * &bases.dct.vectors).norm_squared()
        + lambda * (project(&responses.random) - a * &bases.random.vectors).norm_squared()
}
