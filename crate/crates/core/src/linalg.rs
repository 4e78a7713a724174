//! Dense solvers used by calibration and reconstruction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SparkleError};

/// `P^T G P = L L^T` for a symmetric positive semi-definite `G`, pivoting on
/// the largest remaining diagonal entry.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    lower: DMatrix<f64>,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CholeskyFailure {
    /// Remaining pivots fell below the relative tolerance; holds the
    /// original indices of the unresolved directions.
    Deficient(Vec<usize>),
    /// Non-finite or otherwise unusable pivots.
    Breakdown,
}

impl PivotedCholesky {
    pub fn factor(g: &DMatrix<f64>, rel_tol: f64) -> std::result::Result<Self, CholeskyFailure> {
        let n = g.nrows();
        assert_eq!(n, g.ncols(), "gram matrix must be square");
        let mut a = g.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut lower = DMatrix::zeros(n, n);
        let scale = (0..n).map(|i| g[(i, i)]).fold(0.0_f64, f64::max);
        if !scale.is_finite() {
            return Err(CholeskyFailure::Breakdown);
        }
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]))
                .expect("non-empty range");
            if p != k {
                a.swap_rows(k, p);
                a.swap_columns(k, p);
                lower.swap_rows(k, p);
                perm.swap(k, p);
            }
            let pivot = a[(k, k)];
            if !pivot.is_finite() {
                return Err(CholeskyFailure::Breakdown);
            }
            if pivot <= rel_tol * scale {
                return Err(CholeskyFailure::Deficient(perm[k..].to_vec()));
            }
            let d = pivot.sqrt();
            lower[(k, k)] = d;
            for i in k + 1..n {
                lower[(i, k)] = a[(i, k)] / d;
            }
            for j in k + 1..n {
                let ljk = lower[(j, k)];
                for i in j..n {
                    let v = a[(i, j)] - lower[(i, k)] * ljk;
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
        Ok(PivotedCholesky { lower, perm })
    }

    /// Solves `G X = B` for every column of `B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut pb = DMatrix::zeros(n, b.ncols());
        for (k, &orig) in self.perm.iter().enumerate() {
            pb.row_mut(k).copy_from(&b.row(orig));
        }
        let z = self
            .lower
            .solve_lower_triangular(&pb)
            .expect("positive pivots");
        let w = self
            .lower
            .transpose()
            .solve_upper_triangular(&z)
            .expect("positive pivots");
        let mut x = DMatrix::zeros(n, b.ncols());
        for (k, &orig) in self.perm.iter().enumerate() {
            x.row_mut(orig).copy_from(&w.row(k));
        }
        x
    }
}

/// Moore-Penrose pseudo-inverse via SVD, truncating singular values at
/// `rel_tol * sigma_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// Default rank tolerance: `max(m, n) * eps` relative to the largest
/// singular value.
pub fn default_rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Singular values in descending order.
///
/// Tall matrices are first reduced by QR so only an `n x n` SVD is needed.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut sv: Vec<f64> = if m > n {
        a.clone()
            .qr()
            .r()
            .singular_values()
            .iter()
            .copied()
            .collect()
    } else {
        a.singular_values().iter().copied().collect()
    };
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Least-squares solver for a fixed full-column-rank matrix.
///
/// Factors `A = Q R`, then `R = U S V^T`, and keeps the explicit
/// pseudo-inverse `V S^-1 U^T Q^T` so repeated solves are one product.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl LeastSquares {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || n == 0 {
            return Err(SparkleError::Empty("least-squares matrix"));
        }
        let tol_rel = default_rank_tolerance(m, n);
        if m < n {
            let sv = singular_values(a);
            let smax = sv[0];
            let rank = sv.iter().filter(|&&s| s > tol_rel * smax).count();
            return Err(SparkleError::RankDeficient {
                nullity: n - rank,
                tolerance: tol_rel * smax,
            });
        }
        let qr = a.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = tol_rel * smax;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < n || !(smax > 0.0) {
            return Err(SparkleError::RankDeficient {
                nullity: n - rank,
                tolerance: tol,
            });
        }
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        let pinv = vt.transpose() * inv_s * u.transpose() * q.transpose();
        let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
        singular_values.sort_by(|x, y| y.total_cmp(x));
        Ok(LeastSquares {
            pinv,
            singular_values,
        })
    }

    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.pinv * y
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rows(&self) -> usize {
        self.pinv.ncols()
    }

    pub fn cols(&self) -> usize {
        self.pinv.nrows()
    }
}

/// Outcome of the active-set non-negative solver.
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

pub const NNLS_MAX_ITERATIONS: usize = 10_000;

/// KKT violation of `x` for `min ||y - A x||` s.t. `x >= 0`, given the
/// gradient-side vector `w = A^T (y - A x)`.
pub fn kkt_residual(x: &DVector<f64>, w: &DVector<f64>) -> f64 {
    x.iter()
        .zip(w.iter())
        .map(|(&xi, &wi)| {
            let primal = (-xi).max(0.0);
            let dual = if xi > 0.0 { wi.abs() } else { wi.max(0.0) };
            primal.max(dual)
        })
        .fold(0.0, f64::max)
}

/// Lawson-Hanson active-set method on the normal equations.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<NnlsSolution> {
    let n = a.ncols();
    if a.nrows() != y.len() {
        return Err(SparkleError::dims(a.nrows(), y.len()));
    }
    let gram = a.transpose() * a;
    let aty = a.transpose() * y;
    let tol = 10.0 * f64::EPSILON * (n as f64) * aty.amax().max(gram.amax()).max(1.0);

    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;
    let grad = |x: &DVector<f64>| &aty - &gram * x;

    loop {
        let w = grad(&x);
        let entering = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = entering else { break };
        passive[t] = true;

        loop {
            iterations += 1;
            if iterations > NNLS_MAX_ITERATIONS {
                let kkt = kkt_residual(&x, &grad(&x));
                return Err(SparkleError::NotConverged {
                    iterations: NNLS_MAX_ITERATIONS,
                    kkt_residual: kkt,
                    best: x.iter().copied().collect(),
                });
            }
            let s = solve_passive(&gram, &aty, &passive);
            if (0..n).filter(|&j| passive[j]).all(|j| s[j] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in (0..n).filter(|&j| passive[j] && s[j] <= 0.0) {
                alpha = alpha.min(x[j] / (x[j] - s[j]));
            }
            x += (s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    let kkt_residual = kkt_residual(&x, &grad(&x));
    Ok(NnlsSolution {
        x,
        iterations,
        kkt_residual,
    })
}

/// Unconstrained solution over the passive set, zero elsewhere.
fn solve_passive(gram: &DMatrix<f64>, aty: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let g = gram.select_rows(&idx).select_columns(&idx);
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| aty[j]));
    let sol = match g.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => pseudo_inverse(&g, 1e-12) * &b,
    };
    let mut s = DVector::zeros(passive.len());
    for (k, &j) in idx.iter().enumerate() {
        s[j] = sol[k];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, -1.0]);
        let c = PivotedCholesky::factor(&g, 1e-12).unwrap();
        let x = c.solve(&b);
        assert!((&g * &x - &b).amax() < 1e-13);
    }

    #[test]
    fn cholesky_reports_deficient_direction() {
        // third row/column is the sum of the first two
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = &v * v.transpose();
        match PivotedCholesky::factor(&g, 1e-12) {
            Err(CholeskyFailure::Deficient(d)) => assert_eq!(d.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_identity() {
        let a = DMatrix::<f64>::identity(4, 4);
        let y = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let ls = LeastSquares::new(&a).unwrap();
        assert!((ls.solve(&y) - &y).amax() < 1e-15);
    }

    #[test]
    fn least_squares_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        match LeastSquares::new(&a) {
            Err(SparkleError::RankDeficient { nullity, .. }) => assert_eq!(nullity, 1),
            other => panic!("unexpected {other:?}"),
        }
        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(matches!(
            LeastSquares::new(&wide),
            Err(SparkleError::RankDeficient { nullity: 1, .. })
        ));
    }

    #[test]
    fn singular_values_of_diag() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let sv = singular_values(&a);
        assert!((sv[0] - 2.0).abs() < 1e-14 && (sv[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nnls_clips_negative_direction() {
        let a = DMatrix::<f64>::identity(3, 3);
        let y = DVector::from_vec(vec![0.5, -0.3, 0.2]);
        let s = nnls(&a, &y).unwrap();
        assert_eq!(s.x.as_slice(), &[0.5, 0.0, 0.2]);
        assert!(s.kkt_residual < 1e-12);
    }
}
