use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};

use nif_core::image::{error_image, psnr, HdrImage};
use nif_core::nif::{collect_geometry_samples, collect_samples, render_geometry, Head, NifConfig, NifModel, Sampler, SampleSet, Sharing};
use nif_core::render::{frame_shadow_rays, occluded_bvh, render, shade_pass_nif, RenderConfig, RenderStats, StageTimings, VisibilityBackend};
use nif_core::scene::Scene;
use nif_core::scene_io::{load_checkpoint, load_image, load_scene, save_checkpoint, save_pfm, save_png, write_bench_csv, write_loss_curve, BenchRow};

use crate::args::*;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Render(a) => cmd_render(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn open_scene(path: &Path, res: Option<Resolution>) -> Result<Scene> {
    let scene = load_scene(path).with_context(|| format!("loading scene {}", path.display()))?;
    match res {
        Some(r) => {
            let camera = scene.camera.with_resolution(r.width, r.height);
            Ok(scene.with_camera(camera)?)
        }
        None => Ok(scene),
    }
}

/// `.png` and `.pfm` siblings of `out`.
fn image_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("png"), out.with_extension("pfm"))
}

fn save_both(img: &HdrImage, out: &Path) -> Result<()> {
    let (png, pfm) = image_paths(out);
    save_png(img, &png)?;
    save_pfm(img, &pfm)?;
    println!("wrote {} and {}", png.display(), pfm.display());
    Ok(())
}

fn sampler(s: SamplerArg) -> Sampler {
    match s {
        SamplerArg::Importance => Sampler::Importance,
        SamplerArg::Uniform => Sampler::Uniform,
    }
}

fn model_config(m: &ModelArgs, head: Head, epochs: usize, seed: u64) -> Result<NifConfig> {
    let mut c = NifConfig::default();
    if let Some(r) = m.grid_res {
        c = c.with_grid_resolution(r);
    }
    if let Some(n) = m.latent_dim {
        c = c.with_latent_dim(n);
    }
    c.sharing = match m.sharing {
        SharingArg::Shared => Sharing::Shared,
        SharingArg::PerObject => Sharing::PerObject,
    };
    c.head = head;
    c.epochs = epochs;
    c.seed = seed;
    c.validate()?;
    Ok(c)
}

fn load_model_for(path: &Path, scene: &Scene) -> Result<NifModel> {
    let model = load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))?;
    ensure!(
        model.object_count() == scene.objects.len(),
        "model {} has {} objects but the scene has {}",
        path.display(),
        model.object_count(),
        scene.objects.len()
    );
    Ok(model)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn print_stats(s: &RenderStats) {
    println!("shadow rays      {}", s.shadow_rays);
    println!("outer queries    {}", s.outer_queries);
    println!("inner queries    {}", s.inner_queries);
    println!("primary          {:10.3} ms", ms(s.primary));
    println!("bvh occlusion    {:10.3} ms", ms(s.bvh_occlusion));
    println!("ray cast         {:10.3} ms", ms(s.nif.ray_cast));
    println!("outer grid       {:10.3} ms", ms(s.nif.outer_grid));
    println!("outer inference  {:10.3} ms", ms(s.nif.outer_inference));
    println!("inner grid       {:10.3} ms", ms(s.nif.inner_grid));
    println!("inner inference  {:10.3} ms", ms(s.nif.inner_inference));
    println!("nif total        {:10.3} ms", ms(s.nif.total()));
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    ensure!(a.spp > 0, "--spp must be positive");
    let backend = match a.backend {
        BackendArg::Bvh => VisibilityBackend::Bvh,
        BackendArg::Nif => VisibilityBackend::Nif,
        BackendArg::Hybrid => VisibilityBackend::Hybrid { threshold: a.threshold },
    };
    if backend.uses_network() && a.model.is_none() {
        bail!("the {backend} backend requires --model");
    }
    if let Some(m) = &a.model {
        ensure!(m.is_file(), "model file {} not found", m.display());
        if !backend.uses_network() {
            warn!("--model is ignored by the bvh backend");
        }
    }
    let scene = open_scene(&a.scene, a.res)?;
    let seed = a.seed.unwrap_or(scene.seed);
    let model = match &a.model {
        Some(p) if backend.uses_network() => Some(load_model_for(p, &scene)?),
        _ => None,
    };

    if let Some(m) = model.as_ref().filter(|m| m.config().head == Head::Geometry) {
        let start = Instant::now();
        let g = render_geometry(&scene, m, &backend.routing(&scene))?;
        println!("geometry render {}x{} in {:.3} ms", scene.camera.width, scene.camera.height, ms(start.elapsed()));
        println!("pixels compared  {}", g.compared);
        println!("normal error     {:.4} deg", g.mean_angle_error_deg);
        println!("depth error      {:.6} of scene diagonal", g.mean_depth_error);
        save_both(&g.normals, &a.out)?;
        let stem = a.out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
        save_both(&g.depth, &a.out.with_file_name(format!("{stem}_depth")))?;
        return Ok(());
    }

    let cfg = RenderConfig {
        spp: a.spp,
        first_sample: 0,
        seed,
    };
    let start = Instant::now();
    let predictor = model.as_ref().map(|m| m as &dyn nif_core::render::OcclusionPredictor);
    let (img, stats) = render(&scene, &cfg, backend, predictor)?;
    println!(
        "rendered {}x{} at {} spp with {backend} in {:.3} ms",
        scene.camera.width,
        scene.camera.height,
        a.spp,
        ms(start.elapsed())
    );
    print_stats(&stats);
    save_both(&img, &a.out)
}

fn collect(scene: &Scene, head: Head, spp: u32, s: SamplerArg, seed: u64) -> Result<SampleSet> {
    let routing = scene.nif_routing(None);
    ensure!(routing.iter().any(|&r| r), "no object in the scene is nif_enabled");
    let set = match head {
        Head::Occlusion => {
            let (set, stats) = collect_samples(scene, spp, sampler(s), seed, &routing)?;
            info!("{} shadow rays", stats.shadow_rays);
            set
        }
        Head::Geometry => collect_geometry_samples(scene, spp, seed, &routing)?,
    };
    Ok(set)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    ensure!(a.train_spp > 0, "--train-spp must be positive");
    let head = match a.head {
        HeadArg::Occlusion => Head::Occlusion,
        HeadArg::Geometry => Head::Geometry,
    };
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let scene = open_scene(&a.scene, a.res)?;
    let seed = a.seed.unwrap_or(scene.seed);
    let config = model_config(&a.model, head, a.epochs, seed)?;
    if head == Head::Geometry && a.sampler != SamplerArg::Importance {
        warn!("--sampler is ignored by the geometry head");
    }

    let start = Instant::now();
    let set = collect(&scene, head, a.train_spp, a.sampler, seed)?;
    println!(
        "collected {} outer and {} inner samples in {:.3} s",
        set.outer.len(),
        set.inner.len(),
        start.elapsed().as_secs_f64()
    );
    let mut model = NifModel::<f32>::new(config, scene.objects.len())?;
    let start = Instant::now();
    let curve = if a.epochs > 0 { model.train(&set, a.epochs)? } else { Vec::new() };
    println!("trained {} epochs in {:.3} s", a.epochs, start.elapsed().as_secs_f64());
    if let Some(l) = curve.last() {
        println!("final loss       {l:.6}");
    }
    save_checkpoint(&model, &a.out)?;
    write_loss_curve(&curve, &loss_path)?;
    println!("wrote {} and {}", a.out.display(), loss_path.display());
    Ok(())
}

fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p:.4}")
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    ensure!(a.amplify >= 0.0 && a.amplify.is_finite(), "--amplify must be finite and nonnegative");
    let img_a = load_image(&a.a)?;
    let img_b = load_image(&a.b)?;
    let p = psnr(&img_a, &img_b)?;
    println!("PSNR: {} dB", format_psnr(p));
    if let Some(out) = &a.out_diff {
        save_both(&error_image(&img_a, &img_b, a.amplify)?, out)?;
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_scene(path: &Path, a: &BenchArgs) -> Result<BenchRow> {
    let scene = open_scene(path, a.res)?;
    let seed = a.seed.unwrap_or(scene.seed);
    let stem = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let model = match a.model_dir.as_ref().map(|d| d.join(format!("{stem}.nif"))) {
        Some(p) if p.is_file() => load_model_for(&p, &scene)?,
        _ => {
            info!("{stem}: no checkpoint, timing an untrained model");
            NifModel::new(NifConfig::default(), scene.objects.len())?
        }
    };
    ensure!(model.config().head == Head::Occlusion, "{stem}: bench needs an occlusion-head model");
    let routing = scene.nif_routing(None);
    let rays = frame_shadow_rays(&scene, a.spp, seed);

    let mut bvh = Vec::with_capacity(a.repeats);
    let mut stages: Vec<StageTimings> = Vec::with_capacity(a.repeats);
    let mut counts = (0, 0);
    for i in 0..a.warmup + a.repeats {
        let start = Instant::now();
        let reference = occluded_bvh(&scene, &rays);
        let t = start.elapsed();
        let pass = shade_pass_nif(&scene, &rays, &routing, &model)?;
        if i >= a.warmup {
            bvh.push(us(t));
            stages.push(pass.timings);
        }
        counts = (pass.outer_queries, pass.inner_queries);
        std::hint::black_box(reference);
    }
    let stage = |f: fn(&StageTimings) -> Duration| median(stages.iter().map(|s| us(f(s))).collect());
    Ok(BenchRow {
        scene: stem,
        triangles: scene.geometry.triangle_count() as u64,
        shadow_rays: rays.len() as u64,
        outer_rays: counts.0 as u64,
        inner_rays: counts.1 as u64,
        bvh_ray_cast_us: median(bvh),
        nif_ray_cast_us: stage(|s| s.ray_cast),
        outer_grid_us: stage(|s| s.outer_grid),
        outer_inference_us: stage(|s| s.outer_inference),
        inner_grid_us: stage(|s| s.inner_grid),
        inner_inference_us: stage(|s| s.inner_inference),
        nif_total_us: 0.0,
        speedup: 0.0,
    }
    .finish())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    ensure!(a.spp > 0, "--spp must be positive");
    ensure!(a.repeats > 0, "--repeats must be positive");
    for s in &a.scenes {
        ensure!(s.is_file(), "scene file {} not found", s.display());
    }
    let mut rows = Vec::with_capacity(a.scenes.len());
    for s in &a.scenes {
        let r = bench_scene(s, a)?;
        println!(
            "{:<16} {:>9} tris {:>9} rays  bvh {:>12.1} us  nif {:>12.1} us  speedup {:.3}",
            r.scene, r.triangles, r.shadow_rays, r.bvh_ray_cast_us, r.nif_total_us, r.speedup
        );
        rows.push(r);
    }
    write_bench_csv(&rows, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    ensure!(a.spp > 0 && a.train_spp > 0, "--spp and --train-spp must be positive");
    ensure!(a.values.iter().all(|&v| v > 0), "sweep values must be positive");
    let scene = open_scene(&a.scene, a.res)?;
    let seed = a.seed.unwrap_or(scene.seed);
    let configs = a
        .values
        .iter()
        .map(|&v| {
            let mut m = a.model.clone();
            match a.param {
                SweepParam::R => m.grid_res = Some(v),
                SweepParam::N => m.latent_dim = Some(v),
            }
            model_config(&m, Head::Occlusion, a.epochs, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let set = collect(&scene, Head::Occlusion, a.train_spp, a.sampler, seed)?;
    let cfg = RenderConfig {
        spp: a.spp,
        first_sample: 0,
        seed,
    };
    let (reference, _) = render(&scene, &cfg, VisibilityBackend::Bvh, None)?;
    let name = match a.param {
        SweepParam::R => "R",
        SweepParam::N => "N",
    };
    let mut csv = String::from("param,value,psnr,train_seconds,render_seconds\n");
    for (&value, config) in a.values.iter().zip(configs) {
        let mut model = NifModel::<f32>::new(config, scene.objects.len())?;
        let start = Instant::now();
        model.train(&set, a.epochs)?;
        let train_s = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let (img, _) = render(&scene, &cfg, VisibilityBackend::Nif, Some(&model))?;
        let render_s = start.elapsed().as_secs_f64();
        let p = psnr(&img, &reference)?;
        println!("{name}={value}: PSNR {} dB, train {train_s:.2} s, render {render_s:.2} s", format_psnr(p));
        csv.push_str(&format!("{name},{value},{},{train_s},{render_s}\n", format_psnr(p)));
    }
    let mut f = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    f.write_all(csv.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn sibling_image_paths() {
        let (png, pfm) = image_paths(Path::new("out/frame.png"));
        assert_eq!(png, Path::new("out/frame.png"));
        assert_eq!(pfm, Path::new("out/frame.pfm"));
        let (png, _) = image_paths(Path::new("frame"));
        assert_eq!(png, Path::new("frame.png"));
    }

    #[test]
    fn psnr_formatting() {
        assert_eq!(format_psnr(f64::INFINITY), "inf");
        assert_eq!(format_psnr(48.1308), "48.1308");
    }
}
