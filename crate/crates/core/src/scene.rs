//! Scene geometry: the emitting screen, the pinhole camera and the plane of
//! mirror microfacets.
//!
//! World frame is right-handed. The facet base plane lies in its local
//! `z = 0` plane with outward normal `+z`; its pose places that frame in
//! the world. The screen's local `x` runs along columns, local `y` along
//! rows and local `+z` is the emitting side.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparkleError};
use crate::rng::{self, Stream};

/// Rigid transform: `world = rotation * local + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Frame centred at `center` whose local `+z` is `normal` and whose local
    /// `y` is as close to `up` as possible.
    pub fn facing(center: [f64; 3], normal: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let z = Vector3::from(normal);
        let z = z
            .try_normalize(1e-12)
            .ok_or_else(|| SparkleError::param("pose.normal", "zero vector"))?;
        let x = Vector3::from(up)
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| SparkleError::param("pose.up", "parallel to normal"))?;
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        Ok(Pose::from_parts(&m, &Vector3::from(center)))
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rotation[(i, j)];
            }
        }
        Pose {
            rotation: r,
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn apply_point(&self, local: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * local.coords + self.translation_vector())
    }

    pub fn apply_vector(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * local
    }

    /// 12 values: row-major rotation then translation.
    pub fn to_array(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            out[3 * i..3 * i + 3].copy_from_slice(&self.rotation[i]);
        }
        out[9..].copy_from_slice(&self.translation);
        out
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        Pose {
            rotation: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
            translation: [a[9], a[10], a[11]],
        }
    }

    pub(crate) fn validate(&self, name: &'static str) -> Result<()> {
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(SparkleError::param(name, "rotation is not orthonormal"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(SparkleError::param(name, "non-finite translation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenModel {
    pub width_pixels: usize,
    pub height_pixels: usize,
    /// Side length of one (square) screen pixel.
    pub pixel_width: f64,
    pub pose: Pose,
}

impl ScreenModel {
    pub fn validate(&self) -> Result<()> {
        if self.width_pixels == 0 || self.height_pixels == 0 {
            return Err(SparkleError::param(
                "screen",
                "resolution must be at least 1x1",
            ));
        }
        if !(self.pixel_width > 0.0) || !self.pixel_width.is_finite() {
            return Err(SparkleError::param(
                "screen.pixel_width",
                "must be positive",
            ));
        }
        self.pose.validate("screen.pose")
    }

    pub fn pixel_count(&self) -> usize {
        self.width_pixels * self.height_pixels
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.pose.apply_vector(&Vector3::z())
    }

    /// World position of the centre of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> Point3<f64> {
        let u = (col as f64 + 0.5 - self.width_pixels as f64 / 2.0) * self.pixel_width;
        let v = (row as f64 + 0.5 - self.height_pixels as f64 / 2.0) * self.pixel_width;
        self.pose.apply_point(&Point3::new(u, v, 0.0))
    }

    /// Maps a world point on the screen plane to a flattened pixel index.
    pub fn pixel_at(&self, world: &Point3<f64>) -> Option<usize> {
        let local = self.pose.rotation_matrix().transpose()
            * (world.coords - self.pose.translation_vector());
        let c = local.x / self.pixel_width + self.width_pixels as f64 / 2.0;
        let r = local.y / self.pixel_width + self.height_pixels as f64 / 2.0;
        if !(c >= 0.0 && r >= 0.0) {
            return None;
        }
        let (c, r) = (c.floor() as usize, r.floor() as usize);
        (c < self.width_pixels && r < self.height_pixels).then(|| r * self.width_pixels + c)
    }
}

/// Pinhole camera. Sensor pixel `(row, col)` images facet `(row, col)`, so
/// the sensor resolution equals the facet grid; `supersample` sets the
/// number of rays per facet along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub position: [f64; 3],
    pub sensor_width: usize,
    pub sensor_height: usize,
    #[serde(default = "one")]
    pub supersample: usize,
}

fn one() -> usize {
    1
}

impl CameraModel {
    pub fn pinhole(&self) -> Point3<f64> {
        Point3::from(self.position)
    }

    pub fn pixel_count(&self) -> usize {
        self.sensor_width * self.sensor_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationDistribution {
    /// Scale of the half-Gaussian slant density, in radians.
    pub sigma_theta: f64,
}

impl OrientationDistribution {
    pub fn new(sigma_theta: f64) -> Result<Self> {
        if !(sigma_theta >= 0.0) || !sigma_theta.is_finite() {
            return Err(SparkleError::param(
                "sigma_theta",
                "must be finite and >= 0",
            ));
        }
        Ok(OrientationDistribution { sigma_theta })
    }

    /// Half-Gaussian slant density `2/(sqrt(2 pi) s) exp(-t^2 / 2 s^2)`.
    pub fn slant_density(&self, theta: f64) -> f64 {
        let s = self.sigma_theta;
        if theta < 0.0 || s <= 0.0 {
            return 0.0;
        }
        2.0 / ((2.0 * PI).sqrt() * s) * (-theta * theta / (2.0 * s * s)).exp()
    }
}

/// Draws one slant angle; draws at or beyond `pi/2` are rejected.
pub fn sample_slant<R: Rng + ?Sized>(dist: &OrientationDistribution, rng: &mut R) -> f64 {
    if dist.sigma_theta == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, dist.sigma_theta).expect("sigma validated");
    loop {
        let theta: f64 = normal.sample(rng).abs();
        if theta < FRAC_PI_2 {
            return theta;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    pub cols: usize,
    pub rows: usize,
    /// Physical extent of the facet rectangle along local x.
    pub width: f64,
    /// Physical extent along local y.
    pub height: f64,
    #[serde(default)]
    pub pose: Pose,
}

impl SurfaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 || self.rows == 0 {
            return Err(SparkleError::param(
                "surface",
                "resolution must be at least 1x1",
            ));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(SparkleError::param("surface", "extent must be positive"));
        }
        self.pose.validate("surface.pose")
    }

    pub fn facet_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.width / self.cols as f64,
            self.height / self.rows as f64,
        )
    }

    /// Local coordinates of a point inside facet `(row, col)`; `(fu, fv)` in
    /// `[0, 1)` address the cell, `(0.5, 0.5)` being its centre.
    pub fn local_point(&self, row: usize, col: usize, fu: f64, fv: f64) -> Point3<f64> {
        let (cw, ch) = self.cell_size();
        Point3::new(
            -self.width / 2.0 + (col as f64 + fu) * cw,
            -self.height / 2.0 + (row as f64 + fv) * ch,
            0.0,
        )
    }

    pub fn facet_center(&self, row: usize, col: usize) -> Point3<f64> {
        self.pose.apply_point(&self.local_point(row, col, 0.5, 0.5))
    }

    pub fn base_normal(&self) -> Vector3<f64> {
        self.pose.apply_vector(&Vector3::z())
    }
}

/// A plane of flat mirror facets, one per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetSurface {
    pub config: SurfaceConfig,
    pub distribution: OrientationDistribution,
    pub seed: u64,
    /// Unit normals in the surface's local frame, row-major over the grid.
    pub normals: Vec<Vector3<f64>>,
}

impl FacetSurface {
    pub fn from_normals(
        config: SurfaceConfig,
        distribution: OrientationDistribution,
        seed: u64,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        if normals.len() != config.facet_count() {
            return Err(SparkleError::dims(config.facet_count(), normals.len()));
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-12 {
                return Err(SparkleError::param(
                    "normals",
                    format!("normal {i} is not unit length"),
                ));
            }
            if n.z <= 0.0 {
                return Err(SparkleError::param(
                    "normals",
                    format!("normal {i} faces away from the base plane"),
                ));
            }
        }
        Ok(FacetSurface {
            config,
            distribution,
            seed,
            normals,
        })
    }

    pub fn world_normal(&self, index: usize) -> Vector3<f64> {
        self.config.pose.apply_vector(&self.normals[index])
    }

    pub fn slant(&self, index: usize) -> f64 {
        self.normals[index].z.clamp(-1.0, 1.0).acos()
    }

    pub fn tilt(&self, index: usize) -> f64 {
        let n = &self.normals[index];
        n.y.atan2(n.x).rem_euclid(2.0 * PI)
    }
}

pub fn normal_from_angles(slant: f64, tilt: f64) -> Vector3<f64> {
    let (st, ct) = slant.sin_cos();
    let (sp, cp) = tilt.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Samples independent facet orientations for every grid cell.
pub fn sample_surface(
    config: &SurfaceConfig,
    dist: &OrientationDistribution,
    seed: u64,
) -> Result<FacetSurface> {
    config.validate()?;
    OrientationDistribution::new(dist.sigma_theta)?;
    let mut rng = rng::stream(seed, "surface", 0);
    let normals = (0..config.facet_count())
        .map(|_| sample_normal(dist, &mut rng))
        .collect();
    Ok(FacetSurface {
        config: *config,
        distribution: *dist,
        seed,
        normals,
    })
}

fn sample_normal(dist: &OrientationDistribution, rng: &mut Stream) -> Vector3<f64> {
    let slant = sample_slant(dist, rng);
    let tilt = rng.random_range(0.0..2.0 * PI);
    if slant == 0.0 {
        return Vector3::z();
    }
    normal_from_angles(slant, tilt)
}

/// A validated screen / camera / facet-surface triple.
#[derive(Debug, Clone)]
pub struct Scene {
    pub screen: ScreenModel,
    pub camera: CameraModel,
    pub surface: FacetSurface,
}

impl Scene {
    pub fn new(screen: ScreenModel, camera: CameraModel, surface: FacetSurface) -> Result<Self> {
        screen.validate()?;
        let cfg = &surface.config;
        if camera.sensor_width != cfg.cols || camera.sensor_height != cfg.rows {
            return Err(SparkleError::dims(
                format!("sensor {}x{}", cfg.cols, cfg.rows),
                format!("sensor {}x{}", camera.sensor_width, camera.sensor_height),
            ));
        }
        if camera.supersample == 0 {
            return Err(SparkleError::param("camera.supersample", "must be >= 1"));
        }
        let height = (camera.pinhole() - Point3::from(cfg.pose.translation_vector()))
            .dot(&cfg.base_normal());
        if !(height > 0.0) {
            return Err(SparkleError::param(
                "camera.position",
                "camera must lie strictly on the outward side of the facet plane",
            ));
        }
        Ok(Scene {
            screen,
            camera,
            surface,
        })
    }

    pub fn screen_pixels(&self) -> usize {
        self.screen.pixel_count()
    }

    pub fn sensor_pixels(&self) -> usize {
        self.camera.pixel_count()
    }
}

/// Declarative scene description; [`SceneConfig::build`] samples the facet
/// orientations from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub screen: ScreenModel,
    pub camera: CameraModel,
    pub surface: SurfaceConfig,
    pub distribution: OrientationDistribution,
}

impl SceneConfig {
    /// Square of facets of side `surface_size` at the origin, camera at `(0, -1, 2)` and the
    /// screen centred on the flat-mirror reflection of the camera's central
    /// ray, facing back towards the facets. The screen keeps a fixed
    /// physical size of `screen_size` regardless of its resolution.
    pub fn standard(
        screen_res: usize,
        facet_res: usize,
        sigma_theta: f64,
        screen_size: f64,
        surface_size: f64,
        supersample: usize,
    ) -> Self {
        let center = [0.0, 1.0, 2.0];
        let screen = ScreenModel {
            width_pixels: screen_res,
            height_pixels: screen_res,
            pixel_width: screen_size / screen_res as f64,
            pose: Pose::facing(center, [0.0, -1.0, -2.0], [0.0, 1.0, 0.0])
                .expect("fixed pose is valid"),
        };
        SceneConfig {
            screen,
            camera: CameraModel {
                position: [0.0, -1.0, 2.0],
                sensor_width: facet_res,
                sensor_height: facet_res,
                supersample,
            },
            surface: SurfaceConfig {
                cols: facet_res,
                rows: facet_res,
                width: surface_size,
                height: surface_size,
                pose: Pose::identity(),
            },
            distribution: OrientationDistribution { sigma_theta },
        }
    }

    /// Scene used by the experiment sweeps: 10x10 screen, 120x120 facets,
    /// slant scale 0.3 rad, 4x4 rays per facet.
    pub fn default_sweep() -> Self {
        SceneConfig::standard(10, 120, 0.3, DEFAULT_SCREEN_SIZE, DEFAULT_SURFACE_SIZE, 4)
    }

    pub fn build(&self, seed: u64) -> Result<Scene> {
        let surface = sample_surface(&self.surface, &self.distribution, seed)?;
        Scene::new(self.screen, self.camera, surface)
    }
}

pub const DEFAULT_SCREEN_SIZE: f64 = 1.5;
pub const DEFAULT_SURFACE_SIZE: f64 = 0.2;
