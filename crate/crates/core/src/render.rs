//! Progressive direct-illumination renderer with pluggable shadow-ray
//! visibility: the reference BVH, or a two-stage pipeline that first gathers
//! network queries from the top-level hierarchy and then answers them in
//! batches.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::accel::HitRecord;
use crate::error::{Error, Result};
use crate::geometry::{outer_from_entry, transform_inner, InnerQuery, OuterQuery, Ray, Vec3};
use crate::image::HdrImage;
use crate::light::{sample_light_dir, Rgb};
use crate::rng::{stream_rng, RENDER_STREAM};
use crate::scene::Scene;

/// Number of rays handled per parallel work item.
const RAY_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisibilityBackend {
    Bvh,
    Nif,
    /// Network only for objects with at least `threshold` triangles.
    Hybrid { threshold: usize },
}

impl VisibilityBackend {
    pub const DEFAULT_HYBRID_THRESHOLD: usize = 10_000;

    pub fn uses_network(&self) -> bool {
        !matches!(self, VisibilityBackend::Bvh)
    }

    pub fn routing(&self, scene: &Scene) -> Vec<bool> {
        match *self {
            VisibilityBackend::Bvh => vec![false; scene.objects.len()],
            VisibilityBackend::Nif => scene.nif_routing(None),
            VisibilityBackend::Hybrid { threshold } => scene.nif_routing(Some(threshold)),
        }
    }
}

impl fmt::Display for VisibilityBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VisibilityBackend::Bvh => write!(f, "bvh"),
            VisibilityBackend::Nif => write!(f, "nif"),
            VisibilityBackend::Hybrid { threshold } => write!(f, "hybrid({threshold})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub spp: u32,
    /// Index of the first pixel sample; continuing a render from `n` reuses
    /// exactly the streams a longer render would have used.
    pub first_sample: u32,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadowRay {
    pub ray: Ray,
    pub t_max: f64,
}

/// A network query tagged with the shadow ray that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryRecord<Q> {
    pub ray_index: usize,
    pub query: Q,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub ray_cast: Duration,
    pub outer_grid: Duration,
    pub outer_inference: Duration,
    pub inner_grid: Duration,
    pub inner_inference: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.ray_cast + self.outer_grid + self.outer_inference + self.inner_grid + self.inner_inference
    }

    pub fn add(&mut self, o: &StageTimings) {
        self.ray_cast += o.ray_cast;
        self.outer_grid += o.outer_grid;
        self.outer_inference += o.outer_inference;
        self.inner_grid += o.inner_grid;
        self.inner_inference += o.inner_inference;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderStats {
    pub primary: Duration,
    /// Shadow-ray time of the BVH backend.
    pub bvh_occlusion: Duration,
    /// Shadow-ray stages of the network backends.
    pub nif: StageTimings,
    pub shadow_rays: u64,
    pub outer_queries: u64,
    pub inner_queries: u64,
}

/// Answers batched occlusion queries (`true` = occluded).
pub trait OcclusionPredictor: Sync {
    fn occluded_outer(
        &self,
        records: &[QueryRecord<OuterQuery>],
        rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>>;

    fn occluded_inner(
        &self,
        records: &[QueryRecord<InnerQuery>],
        rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>>;
}

/// Predictor that answers every query with the exact per-object BVH test.
pub struct OracleVisibility<'a> {
    pub scene: &'a Scene,
}

impl OracleVisibility<'_> {
    fn answer(&self, ray_index: usize, object_id: usize, rays: &[ShadowRay]) -> bool {
        let r = &rays[ray_index];
        self.scene.geometry.trace_occluded_by_object(&r.ray, object_id, r.t_max)
    }
}

impl OcclusionPredictor for OracleVisibility<'_> {
    fn occluded_outer(
        &self,
        records: &[QueryRecord<OuterQuery>],
        rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>> {
        let start = Instant::now();
        let out = records
            .par_iter()
            .map(|q| self.answer(q.ray_index, q.query.object_id, rays))
            .collect();
        timings.outer_inference += start.elapsed();
        Ok(out)
    }

    fn occluded_inner(
        &self,
        records: &[QueryRecord<InnerQuery>],
        rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>> {
        let start = Instant::now();
        let out = records
            .par_iter()
            .map(|q| self.answer(q.ray_index, q.query.object_id, rays))
            .collect();
        timings.inner_inference += start.elapsed();
        Ok(out)
    }
}

/// Camera ray and its closest hit for one pixel sample.
pub(crate) fn camera_sample(scene: &Scene, x: usize, y: usize, rng: &mut ChaCha8Rng) -> (Ray, Option<HitRecord>) {
    let jitter = (rng.gen::<f64>(), rng.gen::<f64>());
    let ray = scene.camera.generate_ray(x, y, jitter);
    let hit = scene.geometry.trace_closest(&ray);
    (ray, hit)
}

/// Shading and geometric normals flipped toward the incoming ray.
pub(crate) fn facing_normals(hit: &HitRecord, ray: &Ray) -> (Vec3, Vec3) {
    let (mut ns, mut ng) = (hit.shading_normal, hit.geometric_normal);
    if ng.dot(ray.direction) > 0.0 {
        ng = -ng;
    }
    if ns.dot(ng) < 0.0 {
        ns = -ns;
    }
    (ns, ng)
}

/// One light-sampled shadow ray from a surface point with its unoccluded
/// contribution `albedo/π · Le · cos / (pdf · pmf)`.
pub(crate) fn direct_light_sample(
    scene: &Scene,
    hit: &HitRecord,
    ns: Vec3,
    ng: Vec3,
    rng: &mut ChaCha8Rng,
) -> Option<(ShadowRay, Rgb)> {
    let table = scene.light_table.as_ref()?;
    let idx = table.cdf.sample(rng.gen());
    let pmf = table.cdf.pmf(idx);
    let u = (rng.gen::<f64>(), rng.gen::<f64>());
    let ls = sample_light_dir(hit.hit_point, table.entries[idx], &scene.lights, scene.environment.as_ref(), u)?;
    let cos = ns.dot(ls.direction);
    if cos <= 0.0 || ng.dot(ls.direction) <= 0.0 || pmf <= 0.0 {
        return None;
    }
    let albedo = scene.objects[hit.object_id].albedo;
    let weight = albedo.mul_elem(ls.radiance) * (cos / (PI * ls.pdf * pmf));
    Some((
        ShadowRay {
            ray: Ray {
                origin: hit.hit_point,
                direction: ls.direction,
            },
            t_max: ls.t_max,
        },
        weight,
    ))
}

struct PixelSample {
    base: Rgb,
    shadow: Option<(ShadowRay, Rgb)>,
}

fn pixel_sample(scene: &Scene, index: usize, sample: u32, seed: u64) -> PixelSample {
    let w = scene.camera.width;
    let mut rng = stream_rng(seed, index as u64, sample as u64, RENDER_STREAM);
    let (ray, hit) = camera_sample(scene, index % w, index / w, &mut rng);
    match hit {
        None => PixelSample {
            base: scene
                .environment
                .as_ref()
                .map_or(Rgb::ZERO, |e| e.radiance(ray.direction)),
            shadow: None,
        },
        Some(hit) => {
            let (ns, ng) = facing_normals(&hit, &ray);
            PixelSample {
                base: Rgb::ZERO,
                shadow: direct_light_sample(scene, &hit, ns, ng, &mut rng),
            }
        }
    }
}

/// Renders `config.spp` samples per pixel into a fresh image.
pub fn render(
    scene: &Scene,
    config: &RenderConfig,
    backend: VisibilityBackend,
    predictor: Option<&dyn OcclusionPredictor>,
) -> Result<(HdrImage, RenderStats)> {
    let mut image = HdrImage::new(scene.camera.width, scene.camera.height);
    let mut stats = RenderStats::default();
    render_into(scene, &mut image, config, backend, predictor, &mut stats)?;
    Ok((image, stats))
}

/// Adds samples `first_sample .. first_sample + spp` to `image`. Samples are
/// processed one index at a time over the whole frame, so each pixel's sum is
/// accumulated in sample order regardless of thread count.
pub fn render_into(
    scene: &Scene,
    image: &mut HdrImage,
    config: &RenderConfig,
    backend: VisibilityBackend,
    predictor: Option<&dyn OcclusionPredictor>,
    stats: &mut RenderStats,
) -> Result<()> {
    if image.width != scene.camera.width || image.height != scene.camera.height {
        return Err(Error::InvalidArgument("image size differs from the camera".into()));
    }
    if backend.uses_network() && predictor.is_none() {
        return Err(Error::InvalidArgument(format!(
            "the {backend} backend requires a trained model"
        )));
    }
    let routing = backend.routing(scene);
    let n = image.len();
    for s in config.first_sample..config.first_sample + config.spp {
        let start = Instant::now();
        let samples: Vec<PixelSample> = (0..n)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| pixel_sample(scene, i, s, config.seed))
            .collect();
        stats.primary += start.elapsed();

        let (owners, rays): (Vec<usize>, Vec<ShadowRay>) = samples
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.shadow.map(|(r, _)| (i, r)))
            .unzip();
        stats.shadow_rays += rays.len() as u64;

        let occluded = match predictor {
            Some(p) if backend.uses_network() => {
                let pass = shade_pass_nif(scene, &rays, &routing, p)?;
                stats.nif.add(&pass.timings);
                stats.outer_queries += pass.outer_queries as u64;
                stats.inner_queries += pass.inner_queries as u64;
                pass.occluded
            }
            _ => {
                let start = Instant::now();
                let o = occluded_bvh(scene, &rays);
                stats.bvh_occlusion += start.elapsed();
                o
            }
        };

        let mut visible = vec![false; n];
        for (&i, &o) in owners.iter().zip(&occluded) {
            visible[i] = !o;
        }
        for (i, p) in samples.iter().enumerate() {
            let mut value = p.base;
            if let Some((_, w)) = p.shadow {
                if visible[i] {
                    value += w;
                }
            }
            image.add_sample(i, value);
        }
    }
    Ok(())
}

/// The shadow rays a render of samples `0..spp` would cast, in sample then
/// pixel order.
pub fn frame_shadow_rays(scene: &Scene, spp: u32, seed: u64) -> Vec<ShadowRay> {
    let n = scene.camera.width * scene.camera.height;
    (0..spp)
        .flat_map(|s| {
            (0..n)
                .into_par_iter()
                .with_min_len(256)
                .filter_map(|i| pixel_sample(scene, i, s, seed).shadow.map(|(r, _)| r))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Reference shadow-ray visibility.
pub fn occluded_bvh(scene: &Scene, rays: &[ShadowRay]) -> Vec<bool> {
    rays.par_iter()
        .with_min_len(RAY_CHUNK)
        .map(|r| scene.geometry.trace_occluded(&r.ray, r.t_max))
        .collect()
}

/// Queries emitted for a batch of shadow rays by top-level traversal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GatheredQueries {
    pub outer: Vec<QueryRecord<OuterQuery>>,
    pub inner: Vec<QueryRecord<InnerQuery>>,
    /// Rays already known to be blocked by a BVH-routed object.
    pub bvh_occluded: Vec<bool>,
}

fn gather_one(scene: &Scene, routing: &[bool], index: usize, sr: &ShadowRay, out: &mut GatheredQueries) -> bool {
    let geo = &scene.geometry;
    let ray = &sr.ray;
    let outer_mark = out.outer.len();
    let inner_mark = out.inner.len();
    let mut blocked = false;
    geo.for_each_overlapping_object(ray, sr.t_max, |o, (t_enter, _)| {
        let bounds = &geo.objects[o].bounds;
        if !routing[o] {
            if geo.trace_occluded_by_object(ray, o, sr.t_max) {
                blocked = true;
                return false;
            }
        } else if t_enter > 0.0 {
            out.outer.push(QueryRecord {
                ray_index: index,
                query: outer_from_entry(ray, ray.at(t_enter), bounds, o),
            });
        } else {
            out.inner.push(QueryRecord {
                ray_index: index,
                query: transform_inner(ray.origin, ray.direction, bounds, o),
            });
        }
        true
    });
    if blocked {
        out.outer.truncate(outer_mark);
        out.inner.truncate(inner_mark);
    }
    blocked
}

/// Phase one of the network pipeline: traverse only the top-level
/// hierarchy and record one outer query per box entered from outside and one
/// inner query per box containing the ray origin. BVH-routed objects are
/// tested directly.
pub fn gather_queries(scene: &Scene, rays: &[ShadowRay], routing: &[bool]) -> GatheredQueries {
    let parts: Vec<GatheredQueries> = rays
        .par_chunks(RAY_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = GatheredQueries::default();
            for (k, sr) in chunk.iter().enumerate() {
                let blocked = gather_one(scene, routing, c * RAY_CHUNK + k, sr, &mut g);
                g.bvh_occluded.push(blocked);
            }
            g
        })
        .collect();
    let mut all = GatheredQueries::default();
    for p in parts {
        all.outer.extend(p.outer);
        all.inner.extend(p.inner);
        all.bvh_occluded.extend(p.bvh_occluded);
    }
    all
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShadePass {
    pub occluded: Vec<bool>,
    pub timings: StageTimings,
    pub outer_queries: usize,
    pub inner_queries: usize,
}

/// Two-stage shadow-ray visibility: gather, then batched outer inference
/// followed by batched inner inference. A ray is shadowed when any query on
/// it reports occlusion.
pub fn shade_pass_nif(
    scene: &Scene,
    rays: &[ShadowRay],
    routing: &[bool],
    predictor: &dyn OcclusionPredictor,
) -> Result<ShadePass> {
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let gathered = gather_queries(scene, rays, routing);
    timings.ray_cast = start.elapsed();

    let mut occluded = gathered.bvh_occluded;
    if !gathered.outer.is_empty() {
        let res = predictor.occluded_outer(&gathered.outer, rays, &mut timings)?;
        for (q, o) in gathered.outer.iter().zip(res) {
            occluded[q.ray_index] |= o;
        }
    }
    if !gathered.inner.is_empty() {
        let res = predictor.occluded_inner(&gathered.inner, rays, &mut timings)?;
        for (q, o) in gathered.inner.iter().zip(res) {
            occluded[q.ray_index] |= o;
        }
    }
    Ok(ShadePass {
        occluded,
        timings,
        outer_queries: gathered.outer.len(),
        inner_queries: gathered.inner.len(),
    })
}
