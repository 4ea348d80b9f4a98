use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accel::{MeshObject, SceneGeometry};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::light::Light;
use crate::scene::{Camera, ObjectInfo, Scene};

use super::image_io::load_environment;
use super::obj::load_obj;

fn default_scale() -> f64 {
    1.0
}

fn default_albedo() -> [f64; 3] {
    [0.8, 0.8, 0.8]
}

fn default_true() -> bool {
    true
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Relative paths resolve against the scene file's directory.
    pub mesh_path: PathBuf,
    #[serde(default)]
    pub translate: [f64; 3],
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_albedo")]
    pub albedo: [f64; 3],
    #[serde(default = "default_true")]
    pub nif_enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LightSpec {
    Point { position: [f64; 3], intensity: [f64; 3] },
    /// Corners in order around the quad.
    Area { corners: [[f64; 3]; 4], radiance: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

/// TOML scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    #[serde(default)]
    pub seed: u64,
    /// Lat-long PFM, +y up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<PathBuf>,
    pub camera: CameraSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub lights: Vec<LightSpec>,
}

impl SceneDescription {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Scene(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Loads every referenced asset and builds the acceleration structures.
    pub fn build(&self, base_dir: &Path) -> Result<Scene> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let mut meshes = Vec::with_capacity(self.objects.len());
        let mut infos = Vec::with_capacity(self.objects.len());
        for spec in &self.objects {
            if !(spec.scale > 0.0 && spec.scale.is_finite()) {
                return Err(Error::Scene(format!(
                    "{}: scale must be positive",
                    spec.mesh_path.display()
                )));
            }
            if spec.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::Scene(format!(
                    "{}: albedo must lie in [0, 1]",
                    spec.mesh_path.display()
                )));
            }
            let path = resolve(&spec.mesh_path);
            let mesh = load_obj(&path)?;
            if mesh.triangles.is_empty() {
                return Err(Error::Scene(format!("{}: no usable triangles", path.display())));
            }
            let translate = Vec3::from(spec.translate);
            let tris = mesh
                .triangles
                .iter()
                .map(|t| t.transformed(translate, spec.scale))
                .collect();
            meshes.push(MeshObject::new(tris)?);
            infos.push(ObjectInfo {
                name: spec
                    .mesh_path
                    .file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                albedo: spec.albedo.into(),
                nif_enabled: spec.nif_enabled,
            });
        }
        let mut lights = Vec::with_capacity(self.lights.len());
        for l in &self.lights {
            let light = match l {
                LightSpec::Point { position, intensity } => Light::Point {
                    position: (*position).into(),
                    intensity: (*intensity).into(),
                },
                LightSpec::Area { corners, radiance } => {
                    Light::area_from_corners(corners.map(Vec3::from), (*radiance).into())
                }
            };
            let emission = match &light {
                Light::Point { intensity, .. } => *intensity,
                Light::Area { radiance, .. } => *radiance,
            };
            if !emission.is_finite() || emission.x < 0.0 || emission.y < 0.0 || emission.z < 0.0 {
                return Err(Error::Scene("light emission must be finite and nonnegative".into()));
            }
            lights.push(light);
        }
        let environment = match &self.environment {
            Some(p) => Some(load_environment(resolve(p))?),
            None => None,
        };
        let c = &self.camera;
        let camera = Camera {
            position: c.position.into(),
            look_at: c.look_at.into(),
            up: c.up.into(),
            vertical_fov: c.vertical_fov,
            width: c.width,
            height: c.height,
        };
        Scene::new(SceneGeometry::new(meshes)?, infos, lights, environment, camera, self.seed)
    }
}

/// Reads a scene file and everything it references.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let desc = SceneDescription::load(path)?;
    desc.build(path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::write_obj;
    use crate::shapes;

    const SCENE: &str = r#"
seed = 4

[camera]
position = [0.0, 1.0, 5.0]
look_at = [0.0, 0.0, 0.0]
vertical_fov = 40.0
width = 16
height = 8

[[objects]]
mesh_path = "ball.obj"
translate = [1.0, 0.0, 0.0]
scale = 2.0
albedo = [0.5, 0.6, 0.7]

[[objects]]
mesh_path = "ball.obj"
nif_enabled = false

[[lights]]
type = "point"
position = [0.0, 4.0, 0.0]
intensity = [3.0, 3.0, 3.0]

[[lights]]
type = "area"
corners = [[-1.0, 3.0, -1.0], [1.0, 3.0, -1.0], [1.0, 3.0, 1.0], [-1.0, 3.0, 1.0]]
radiance = [1.0, 1.0, 1.0]
"#;

    #[test]
    fn loads_a_scene_file() {
        let dir = tempfile::tempdir().unwrap();
        write_obj(dir.path().join("ball.obj"), &shapes::icosphere(1, Vec3::ZERO, 1.0)).unwrap();
        let p = dir.path().join("s.toml");
        fs::write(&p, SCENE).unwrap();
        let scene = load_scene(&p).unwrap();
        assert_eq!(scene.objects.len(), 2);
        assert_eq!(scene.seed, 4);
        assert_eq!(scene.objects[0].albedo, Vec3::new(0.5, 0.6, 0.7));
        assert!(scene.objects[0].nif_enabled && !scene.objects[1].nif_enabled);
        assert_eq!(scene.objects[0].name, "ball");
        let b = scene.geometry.objects[0].bounds;
        assert!((b.center() - Vec3::new(1.0, 0.0, 0.0)).length() < 1e-6);
        assert!((b.extent().x - 4.0).abs() < 1e-3);
        assert_eq!(scene.lights.len(), 2);
        assert_eq!(scene.camera.width, 16);
        assert_eq!(scene.camera.up, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn description_round_trips_through_toml() {
        let d = SceneDescription::from_toml(SCENE).unwrap();
        let again = SceneDescription::from_toml(&d.to_toml().unwrap()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_obj(dir.path().join("ball.obj"), &shapes::icosphere(0, Vec3::ZERO, 1.0)).unwrap();
        let bad_scale = SCENE.replace("scale = 2.0", "scale = -1.0");
        let d = SceneDescription::from_toml(&bad_scale).unwrap();
        assert!(d.build(dir.path()).is_err());
        assert!(SceneDescription::from_toml(&SCENE.replace("seed = 4", "sed = 4")).is_err());
        let missing = SceneDescription::from_toml(&SCENE.replace("ball.obj", "nope.obj")).unwrap();
        assert!(missing.build(dir.path()).is_err());
        let dark = SCENE.replace("[3.0, 3.0, 3.0]", "[0.0, 0.0, 0.0]").replace("radiance = [1.0, 1.0, 1.0]", "radiance = [0.0, 0.0, 0.0]");
        assert!(SceneDescription::from_toml(&dark).unwrap().build(dir.path()).is_err());
    }
}
