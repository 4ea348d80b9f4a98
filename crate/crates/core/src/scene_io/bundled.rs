//! The small procedural scenes shipped in `scenes/`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Triangle, Vec3};
use crate::shapes;

use super::obj::write_obj;
use super::scene_file::{CameraSpec, LightSpec, ObjectSpec, SceneDescription};

pub struct BundledScene {
    pub name: &'static str,
    pub description: SceneDescription,
    /// Mesh files referenced by `description`, relative to the scene file.
    pub meshes: Vec<(String, Vec<Triangle>)>,
}

fn object(mesh: &str, albedo: f64, nif_enabled: bool) -> ObjectSpec {
    ObjectSpec {
        mesh_path: mesh.into(),
        translate: [0.0; 3],
        scale: 1.0,
        albedo: [albedo; 3],
        nif_enabled,
    }
}

fn camera(position: [f64; 3], look_at: [f64; 3], vertical_fov: f64, width: usize, height: usize) -> CameraSpec {
    CameraSpec {
        position,
        look_at,
        up: [0.0, 1.0, 0.0],
        vertical_fov,
        width,
        height,
    }
}

fn ground(half: f64) -> Vec<Triangle> {
    shapes::quad(
        Vec3::new(-half, 0.0, half),
        Vec3::new(2.0 * half, 0.0, 0.0),
        Vec3::new(0.0, 0.0, -2.0 * half),
    )
}

fn area_light(center: [f64; 3], half: f64, radiance: f64) -> LightSpec {
    let [x, y, z] = center;
    LightSpec::Area {
        corners: [
            [x - half, y, z - half],
            [x + half, y, z - half],
            [x + half, y, z + half],
            [x - half, y, z + half],
        ],
        radiance: [radiance; 3],
    }
}

pub fn bundled_scenes() -> Vec<BundledScene> {
    let sphere = BundledScene {
        name: "sphere",
        description: SceneDescription {
            seed: 1,
            environment: None,
            camera: camera([0.0, 2.5, 6.0], [0.0, 0.8, 0.0], 40.0, 512, 288),
            objects: vec![object("sphere.obj", 0.8, true), object("ground.obj", 0.7, false)],
            lights: vec![LightSpec::Point {
                position: [2.0, 5.0, 2.0],
                intensity: [30.0; 3],
            }],
        },
        meshes: vec![
            ("sphere.obj".into(), shapes::icosphere(3, Vec3::new(0.0, 1.0, 0.0), 1.0)),
            ("ground.obj".into(), ground(4.0)),
        ],
    };
    let sphere_torus = BundledScene {
        name: "sphere_torus",
        description: SceneDescription {
            seed: 2,
            environment: None,
            camera: camera([0.0, 3.5, 6.5], [0.0, 0.6, 0.0], 45.0, 256, 256),
            objects: vec![
                object("icosphere.obj", 0.8, true),
                object("torus.obj", 0.75, true),
                object("ground.obj", 0.7, false),
            ],
            lights: vec![area_light([0.5, 5.0, 1.0], 0.75, 12.0)],
        },
        meshes: vec![
            ("icosphere.obj".into(), shapes::icosphere(3, Vec3::new(-1.2, 1.0, 0.0), 1.0)),
            ("torus.obj".into(), shapes::torus(Vec3::new(1.3, 0.35, 0.2), 0.9, 0.35, 48, 24)),
            ("ground.obj".into(), ground(4.0)),
        ],
    };
    // A flat ring floating over a ball: only the two meshes, no ground.
    let pair = BundledScene {
        name: "pair",
        description: SceneDescription {
            seed: 3,
            environment: None,
            camera: camera([0.0, 3.0, 5.0], [0.0, 0.9, 0.0], 40.0, 256, 256),
            objects: vec![object("ball.obj", 0.8, true), object("ring.obj", 0.8, true)],
            lights: vec![area_light([0.3, 5.0, 0.3], 0.5, 20.0)],
        },
        meshes: vec![
            ("ball.obj".into(), shapes::icosphere(3, Vec3::new(0.0, 0.0, 0.0), 1.0)),
            ("ring.obj".into(), shapes::torus(Vec3::new(0.0, 1.7, 0.0), 1.0, 0.3, 48, 24)),
        ],
    };
    // The ball sits inside the torus hole, so the two boxes overlap.
    let overlap = BundledScene {
        name: "overlap",
        description: SceneDescription {
            seed: 4,
            environment: None,
            camera: camera([0.0, 3.5, 5.5], [0.0, 0.5, 0.0], 45.0, 256, 256),
            objects: vec![
                object("ball.obj", 0.8, true),
                object("ring.obj", 0.75, true),
                object("ground.obj", 0.7, false),
            ],
            lights: vec![area_light([1.5, 5.0, 1.0], 0.75, 12.0)],
        },
        meshes: vec![
            ("ball.obj".into(), shapes::icosphere(3, Vec3::new(0.0, 0.9, 0.0), 0.9)),
            ("ring.obj".into(), shapes::torus(Vec3::new(0.0, 0.4, 0.0), 1.2, 0.4, 48, 24)),
            ("ground.obj".into(), ground(4.0)),
        ],
    };
    let icosphere = BundledScene {
        name: "icosphere",
        description: SceneDescription {
            seed: 5,
            environment: None,
            camera: camera([0.0, 1.5, 4.0], [0.0, 0.0, 0.0], 40.0, 128, 128),
            objects: vec![object("icosphere.obj", 0.8, true)],
            lights: vec![LightSpec::Point {
                position: [3.0, 4.0, 3.0],
                intensity: [30.0; 3],
            }],
        },
        meshes: vec![("icosphere.obj".into(), shapes::icosphere(3, Vec3::ZERO, 1.0))],
    };
    vec![sphere, sphere_torus, pair, overlap, icosphere]
}

/// Writes every bundled scene as `<dir>/<name>.toml` with its meshes under
/// `<dir>/<name>/`.
pub fn write_bundled_scenes(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for mut s in bundled_scenes() {
        let mesh_dir = dir.join(s.name);
        fs::create_dir_all(&mesh_dir).map_err(|e| Error::io(&mesh_dir, e))?;
        for (file, tris) in &s.meshes {
            write_obj(mesh_dir.join(file), tris)?;
        }
        for o in &mut s.description.objects {
            o.mesh_path = Path::new(s.name).join(&o.mesh_path);
        }
        let path = dir.join(format!("{}.toml", s.name));
        s.description.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
