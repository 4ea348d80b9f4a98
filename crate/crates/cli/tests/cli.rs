use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nif_core::nif::{collect_samples, NifConfig, NifModel, Sampler};
use nif_core::scene_io::{load_checkpoint, load_scene, read_bench_csv};

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn nif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nif")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nif(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn render_bvh_sphere_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("sphere.toml");
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    for out in [&a, &b] {
        let text = ok(&["render", "--scene", s(&scene), "--spp", "2", "--res", "64x36", "--out", s(out), "--seed", "9"]);
        assert!(text.contains("bvh occlusion"));
    }
    assert!(a.is_file());
    let pa = std::fs::read(a.with_extension("pfm")).unwrap();
    let pb = std::fs::read(b.with_extension("pfm")).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn nif_without_model_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("sphere.toml");
    let out = nif(&["render", "--scene", s(&scene), "--backend", "nif", "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("--model"));

    let out = nif(&["render", "--scene", "missing.toml", "--out", "x"]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim_end().lines().count(), 1);
    let out = nif(&["render", "--scene", s(&scene), "--out", "x", "--res", "12"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim_end().lines().count(), 1);
}

#[test]
fn train_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("sphere.toml");
    let m = dir.path().join("m.nif");
    ok(&["train", "--scene", s(&scene), "--train-spp", "4", "--epochs", "2", "--grid-res", "16", "--res", "64x36", "--out", s(&m)]);
    let model = load_checkpoint(&m).unwrap();
    assert_eq!(model.object_count(), 2);
    let curve = std::fs::read_to_string(dir.path().join("m.nif.loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let img = dir.path().join("n.png");
    let text = ok(&["render", "--scene", s(&scene), "--backend", "nif", "--model", s(&m), "--spp", "1", "--res", "64x36", "--out", s(&img)]);
    assert!(text.contains("outer inference"));
    assert!(img.with_extension("pfm").is_file());
}

#[test]
fn zero_epochs_writes_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = scenes().join("sphere.toml");
    let m = dir.path().join("m.nif");
    ok(&["train", "--scene", s(&scene_path), "--epochs", "0", "--grid-res", "8", "--res", "32x18", "--seed", "5", "--out", s(&m)]);
    let loaded = load_checkpoint(&m).unwrap();
    let mut config = NifConfig::default().with_grid_resolution(8);
    config.epochs = 0;
    config.seed = 5;
    let fresh = NifModel::<f32>::new(config, 2).unwrap();
    assert!(loaded == fresh);
}

#[test]
fn importance_sampling_favours_the_lit_object() {
    let scene = load_scene(scenes().join("sphere.toml")).unwrap();
    let scene = scene.clone().with_camera(scene.camera.with_resolution(96, 54)).unwrap();
    let routing = scene.nif_routing(None);
    for seed in 0..5 {
        let (_, imp) = collect_samples(&scene, 4, Sampler::Importance, seed, &routing).unwrap();
        let (_, uni) = collect_samples(&scene, 4, Sampler::Uniform, seed, &routing).unwrap();
        assert!(imp.outer_per_object[0] >= uni.outer_per_object[0], "seed {seed}");
    }
}

#[test]
fn eval_reports_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("sphere.toml");
    let a = dir.path().join("a.pfm");
    let b = dir.path().join("b.pfm");
    ok(&["render", "--scene", s(&scene), "--spp", "1", "--res", "32x18", "--out", s(&a)]);
    ok(&["render", "--scene", s(&scene), "--spp", "1", "--res", "32x18", "--seed", "77", "--out", s(&b)]);
    assert!(ok(&["eval", "--a", s(&a), "--b", s(&a)]).contains("PSNR: inf dB"));
    let diff = dir.path().join("d");
    let text = ok(&["eval", "--a", s(&a), "--b", s(&b), "--out-diff", s(&diff), "--amplify", "3"]);
    let p: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(p.is_finite() && p > 0.0);
    assert!(diff.with_extension("png").is_file() && diff.with_extension("pfm").is_file());
    assert!(!nif(&["eval", "--a", s(&a), "--b", "nope.pfm"]).status.success());
}

#[test]
fn bench_has_one_row_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    let list = format!("{},{}", s(&scenes().join("sphere.toml")), s(&scenes().join("pair.toml")));
    let out = dir.path().join("b.csv");
    ok(&["bench", "--scenes", &list, "--res", "32x32", "--repeats", "3", "--out", s(&out)]);
    let rows = read_bench_csv(&out).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let sum = r.nif_ray_cast_us + r.outer_grid_us + r.outer_inference_us + r.inner_grid_us + r.inner_inference_us;
        assert!((r.nif_total_us - sum).abs() <= 0.01 * sum);
        assert!(r.shadow_rays > 0);
    }
}

#[test]
fn sweep_rows_and_finite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("sphere.toml");
    let out = dir.path().join("s.csv");
    ok(&["sweep", "--param", "R", "--values", "16,64", "--scene", s(&scene), "--res", "48x27", "--epochs", "2", "--spp", "2", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let p: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(p.is_finite());
    }
}

#[test]
fn geometry_model_renders_normals() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scenes().join("icosphere.toml");
    let m = dir.path().join("g.nif");
    ok(&["train", "--scene", s(&scene), "--head", "geometry", "--epochs", "2", "--grid-res", "16", "--res", "32x32", "--out", s(&m)]);
    let out = dir.path().join("g.png");
    let text = ok(&["render", "--scene", s(&scene), "--backend", "nif", "--model", s(&m), "--res", "32x32", "--out", s(&out)]);
    assert!(text.contains("normal error"));
    assert!(dir.path().join("g_depth.pfm").is_file());
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_nif"))
        .env("NIF_THREADS", "many")
        .args(["eval", "--a", "x.pfm", "--b", "y.pfm"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("NIF_THREADS"));
}
