#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Exhaustive non-negative least squares: the best unconstrained fit over
/// every column subset whose solution is strictly positive.
pub fn brute_force_nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut best = DVector::zeros(n);
    let mut best_res = y.norm_squared();
    for subset in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|&j| subset & (1 << j) != 0).collect();
        let sub = a.select_columns(&idx);
        let Some(inv) = (sub.transpose() * &sub).try_inverse() else {
            continue;
        };
        let s = inv * sub.transpose() * y;
        if s.iter().any(|&v| v <= 0.0) {
            continue;
        }
        let res = (y - &sub * &s).norm_squared();
        if res < best_res {
            best_res = res;
            best = DVector::zeros(n);
            for (k, &j) in idx.iter().enumerate() {
                best[j] = s[k];
            }
        }
    }
    best
}

/// Sum of absolute forward differences, written as explicit loops over a
/// row-major `width x height` plane per channel.
pub fn tv_reference(data: &[f64], width: usize, height: usize, channels: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..channels {
        let at = |r: usize, col: usize| data[c * width * height + r * width + col];
        for r in 0..height {
            for col in 0..width {
                if col + 1 < width {
                    total += (at(r, col + 1) - at(r, col)).abs();
                }
                if r + 1 < height {
                    total += (at(r + 1, col) - at(r, col)).abs();
                }
            }
        }
    }
    total
}

pub fn ssd_reference(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

pub fn rmse_reference(a: &[f64], b: &[f64]) -> f64 {
    (ssd_reference(a, b) / a.len() as f64).sqrt()
}

/// Minimises `sum (I_k - s t_k)^2` over in-window samples by bisection on
/// the sign of the derivative.
pub fn bisection_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Option<f64> {
    let kept: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > window.0 && v < window.1)
        .map(|(&t, &v)| (t, v))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let slope = |s: f64| {
        kept.iter()
            .map(|&(t, v)| -2.0 * t * (v - s * t))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (
        0.0,
        kept.iter().map(|&(t, v)| v / t).fold(0.0, f64::max) * 2.0 + 1.0,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
