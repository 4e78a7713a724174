//! Float image grids shared by the screen (lightmaps) and the camera
//! (sensor images).
//!
//! Pixels are flattened row-major within a channel, channels stacked one
//! after another: `index = c * width * height + row * width + col`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Grid {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(SparkleError::param(
                "channels",
                format!("must be 1 or 3, got {channels}"),
            ));
        }
        if data.len() != width * height * channels {
            return Err(SparkleError::dims(width * height * channels, data.len()));
        }
        Ok(Grid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        channel * self.plane_len() + row * self.width + col
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn check_shape(&self, other: &Grid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SparkleError::dims(
                self.shape_string(),
                other.shape_string(),
            ))
        }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }
}

/// The image shown on the screen: the unknown illumination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lightmap(pub Grid);

impl Lightmap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Lightmap(Grid::zeros(width, height, channels))
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let g = Grid::from_vec(width, height, channels, data)?;
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(SparkleError::param("lightmap", "non-finite value"));
        }
        Ok(Lightmap(g))
    }

    /// Impulse `e_index` over a `width x height x channels` screen.
    pub fn impulse(width: usize, height: usize, channels: usize, index: usize) -> Self {
        let mut g = Grid::zeros(width, height, channels);
        g.data[index] = 1.0;
        Lightmap(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn channels(&self) -> usize {
        self.0.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorted set of retained indices into a flattened sensor image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask(Vec<usize>);

impl PixelMask {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        PixelMask(indices)
    }

    pub fn full(len: usize) -> Self {
        PixelMask((0..len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, values: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&i| values[i]).collect()
    }
}

/// Camera output, optionally restricted to a pixel mask.
///
/// The full grid is always kept; the mask only controls which entries
/// [`SensorImage::observation`] returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorImage {
    pub grid: Grid,
    pub mask: Option<PixelMask>,
}

impl SensorImage {
    pub fn new(grid: Grid) -> Self {
        SensorImage { grid, mask: None }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        SensorImage::new(Grid::zeros(width, height, channels))
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Ok(SensorImage::new(Grid::from_vec(
            width, height, channels, data,
        )?))
    }

    pub fn with_mask(mut self, mask: PixelMask) -> Result<Self> {
        if let Some(&last) = mask.indices().last() {
            if last >= self.grid.len() {
                return Err(SparkleError::MaskMismatch(format!(
                    "mask index {last} out of range for {} pixels",
                    self.grid.len()
                )));
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.grid.data
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// The observed vector: masked entries if a mask is set, otherwise all.
    pub fn observation(&self) -> DVector<f64> {
        match &self.mask {
            Some(m) => DVector::from_vec(m.select(&self.grid.data)),
            None => self.grid.to_dvector(),
        }
    }
}
