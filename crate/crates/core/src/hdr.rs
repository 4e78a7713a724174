//! Exposure fusion and background removal.
//!
//! Per pixel, samples outside the sensor's linear window are dropped and the
//! remaining `(t_k, I_k)` pairs are fitted by a line through the origin:
//! `s = sum(t_k I_k) / sum(t_k^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};
use crate::image::{Grid, SensorImage};

pub const DEFAULT_WINDOW: (f64, f64) = (0.1, 0.7);

#[derive(Debug, Clone, PartialEq)]
pub struct Exposure {
    /// Exposure time in seconds.
    pub time: f64,
    pub image: Grid,
}

/// Registered exposures of one scene, ordered by increasing exposure time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureStack {
    entries: Vec<Exposure>,
    /// Open interval of trusted intensities `(low, high)`.
    window: (f64, f64),
}

impl ExposureStack {
    pub fn new(entries: Vec<Exposure>) -> Result<Self> {
        ExposureStack::with_window(entries, DEFAULT_WINDOW)
    }

    pub fn with_window(entries: Vec<Exposure>, window: (f64, f64)) -> Result<Self> {
        let first = entries
            .first()
            .ok_or(SparkleError::Empty("exposure stack"))?;
        let (low, high) = window;
        if !(0.0 <= low && low < high && high <= 1.0) {
            return Err(SparkleError::param(
                "window",
                format!("need 0 <= low < high <= 1, got ({low}, {high})"),
            ));
        }
        for e in &entries {
            first.image.check_shape(&e.image)?;
            if !(e.time > 0.0) || !e.time.is_finite() {
                return Err(SparkleError::param(
                    "exposure_time",
                    format!("{} is not positive", e.time),
                ));
            }
        }
        if entries.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(SparkleError::param(
                "exposure_time",
                "times must be strictly increasing",
            ));
        }
        Ok(ExposureStack { entries, window })
    }

    pub fn entries(&self) -> &[Exposure] {
        &self.entries
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }
}

/// Merged radiance image plus the pixels that had no usable sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    pub image: SensorImage,
    /// Flattened indices where every sample fell outside the window.
    pub fallback_pixels: Vec<usize>,
}

/// Fits one pixel. Returns the estimate and whether the fallback was used.
pub fn merge_pixel(times: &[f64], values: &[f64], window: (f64, f64)) -> (f64, bool) {
    let (low, high) = window;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        if v > low && v < high {
            num += t * v;
            den += t * t;
        }
    }
    if den > 0.0 {
        return (num / den, false);
    }
    // No trusted sample: a saturated short exposure means a bright pixel, so
    // use the shortest exposure; otherwise everything is in the noise floor
    // and the longest exposure is the least noisy estimate.
    let last = times.len() - 1;
    if values[0] >= high {
        (values[0] / times[0], true)
    } else {
        (values[last] / times[last], true)
    }
}

pub fn hdr_merge(stack: &ExposureStack) -> Result<HdrImage> {
    let first = &stack.entries[0].image;
    let times: Vec<f64> = stack.entries.iter().map(|e| e.time).collect();
    let mut out = Grid::zeros(first.width, first.height, first.channels);
    let mut fallback_pixels = Vec::new();
    let mut samples = vec![0.0; times.len()];
    for p in 0..first.len() {
        for (s, e) in samples.iter_mut().zip(&stack.entries) {
            *s = e.image.data[p];
        }
        let (v, fell_back) = merge_pixel(&times, &samples, stack.window);
        out.data[p] = v;
        if fell_back {
            fallback_pixels.push(p);
        }
    }
    Ok(HdrImage {
        image: SensorImage::new(out),
        fallback_pixels,
    })
}

/// Averaged dark frame `y_0`, shot with every light source off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundFrame {
    pub image: Grid,
    pub count: usize,
}

pub fn average_backgrounds(frames: &[Grid]) -> Result<BackgroundFrame> {
    let first = frames
        .first()
        .ok_or(SparkleError::Empty("background frames"))?;
    let mut acc = Grid::zeros(first.width, first.height, first.channels);
    for f in frames {
        first.check_shape(f)?;
        for (a, v) in acc.data.iter_mut().zip(&f.data) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    acc.data.iter_mut().for_each(|a| *a /= n);
    Ok(BackgroundFrame {
        image: acc,
        count: frames.len(),
    })
}

/// `max(y - y_0, 0)` pixelwise. Any mask on `y` is kept.
pub fn subtract_background(y: &SensorImage, bg: &BackgroundFrame) -> Result<SensorImage> {
    y.grid.check_shape(&bg.image)?;
    let mut out = y.clone();
    for (o, b) in out.grid.data.iter_mut().zip(&bg.image.data) {
        *o = (*o - b).max(0.0);
    }
    Ok(out)
}
