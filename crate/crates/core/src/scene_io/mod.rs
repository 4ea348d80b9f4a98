//! Files in and out: meshes, scene descriptions, images, model checkpoints
//! and benchmark reports.

mod bench;
mod bundled;
mod checkpoint;
mod image_io;
mod obj;
mod scene_file;

pub use bench::{read_bench_csv, write_bench_csv, write_loss_curve, BenchRow};
pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use image_io::{load_environment, load_image, load_pfm, save_image, save_pfm, save_png, ImageFormat};
pub use obj::{load_obj, parse_obj, write_obj, ObjMesh};
pub use scene_file::{load_scene, CameraSpec, LightSpec, ObjectSpec, SceneDescription};
pub use bundled::{bundled_scenes, write_bundled_scenes, BundledScene};
