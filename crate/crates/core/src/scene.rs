//! Camera and the assembled renderable scene.

use serde::{Deserialize, Serialize};

use crate::accel::SceneGeometry;
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::light::{build_light_cdf, EnvironmentMap, Light, LightTable, Rgb};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "vertical_fov must lie in (0, 180), got {}",
                self.vertical_fov
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        let forward = self.look_at - self.position;
        if forward.length() == 0.0 || forward.cross(self.up).length() == 0.0 {
            return Err(Error::InvalidArgument(
                "camera forward and up must be nonzero and not parallel".into(),
            ));
        }
        Ok(())
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    /// Ray through pixel `(x, y)` offset by `jitter` in `[0, 1)²`; `y = 0` is
    /// the top row.
    pub fn generate_ray(&self, x: usize, y: usize, jitter: (f64, f64)) -> Ray {
        let w = (self.look_at - self.position).normalized();
        let right = w.cross(self.up).normalized();
        let up = right.cross(w);
        let tan_half = (self.vertical_fov.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (x as f64 + jitter.0) / self.width as f64 - 1.0) * tan_half * aspect;
        let sy = (1.0 - 2.0 * (y as f64 + jitter.1) / self.height as f64) * tan_half;
        Ray::new(self.position, w + right * sx + up * sy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectInfo {
    pub name: String,
    pub albedo: Rgb,
    pub nif_enabled: bool,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub geometry: SceneGeometry,
    pub objects: Vec<ObjectInfo>,
    pub lights: Vec<Light>,
    pub environment: Option<EnvironmentMap>,
    pub camera: Camera,
    pub seed: u64,
    /// `None` when the scene has no emitters at all.
    pub light_table: Option<LightTable>,
}

impl Scene {
    pub fn new(
        geometry: SceneGeometry,
        objects: Vec<ObjectInfo>,
        lights: Vec<Light>,
        environment: Option<EnvironmentMap>,
        camera: Camera,
        seed: u64,
    ) -> Result<Self> {
        if objects.len() != geometry.objects.len() {
            return Err(Error::DimensionMismatch {
                expected: geometry.objects.len(),
                actual: objects.len(),
            });
        }
        camera.validate()?;
        let environment = environment.filter(|e| !e.is_black());
        let light_table = if lights.is_empty() && environment.is_none() {
            None
        } else {
            Some(build_light_cdf(&lights, environment.as_ref(), 0.5 * geometry.diagonal())?)
        };
        Ok(Self {
            geometry,
            objects,
            lights,
            environment,
            camera,
            seed,
            light_table,
        })
    }

    /// Objects whose visibility goes through the network for the given
    /// triangle threshold (`None` routes every enabled object).
    pub fn nif_routing(&self, threshold: Option<usize>) -> Vec<bool> {
        self.objects
            .iter()
            .zip(&self.geometry.objects)
            .map(|(info, mesh)| {
                info.nif_enabled && threshold.map_or(true, |t| mesh.triangle_count() >= t)
            })
            .collect()
    }

    pub fn with_camera(mut self, camera: Camera) -> Result<Self> {
        camera.validate()?;
        self.camera = camera;
        Ok(self)
    }
}
