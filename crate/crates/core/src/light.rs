//! Light sources, the flux-proportional light table, and direction sampling.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

/// Linear RGB.
pub type Rgb = Vec3;

pub fn luminance(c: Rgb) -> f64 {
    0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
}

#[derive(Clone, Debug, PartialEq)]
pub enum Light {
    /// Isotropic point light; `intensity` is radiant intensity (W/sr).
    Point { position: Vec3, intensity: Rgb },
    /// Two-sided parallelogram `corner + s*edge_u + t*edge_v`.
    Area {
        corner: Vec3,
        edge_u: Vec3,
        edge_v: Vec3,
        radiance: Rgb,
    },
}

impl Light {
    /// Area light from four corners given in order around the quad.
    pub fn area_from_corners(corners: [Vec3; 4], radiance: Rgb) -> Self {
        Light::Area {
            corner: corners[0],
            edge_u: corners[1] - corners[0],
            edge_v: corners[3] - corners[0],
            radiance,
        }
    }

    /// Scalar radiant flux used for importance weights.
    pub fn power(&self) -> f64 {
        match self {
            Light::Point { intensity, .. } => 4.0 * PI * luminance(*intensity),
            Light::Area {
                edge_u,
                edge_v,
                radiance,
                ..
            } => {
                // Two-sided emitter.
                2.0 * PI * luminance(*radiance) * edge_u.cross(*edge_v).length()
            }
        }
    }
}

/// Lat-long environment map with +y up. Row 0 is the zenith.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<Rgb>,
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, texels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || texels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "environment map {width}x{height} with {} texels",
                texels.len()
            )));
        }
        if texels.iter().any(|t| !t.is_finite() || t.x < 0.0 || t.y < 0.0 || t.z < 0.0) {
            return Err(Error::InvalidArgument(
                "environment radiance must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            texels,
        })
    }

    pub fn constant(width: usize, height: usize, radiance: Rgb) -> Self {
        Self {
            width,
            height,
            texels: vec![radiance; width * height],
        }
    }

    pub fn is_black(&self) -> bool {
        self.texels.iter().all(|t| t.max_component() <= 0.0)
    }

    fn uv(dir: Vec3) -> (f64, f64) {
        let phi = if dir.x == 0.0 && dir.z == 0.0 {
            0.0
        } else {
            dir.z.atan2(dir.x)
        };
        let mut u = (phi + PI) / (2.0 * PI);
        u -= u.floor();
        let v = dir.y.clamp(-1.0, 1.0).acos() / PI;
        (u, v)
    }

    fn dir_from_uv(u: f64, v: f64) -> Vec3 {
        let phi = 2.0 * PI * u - PI;
        let theta = PI * v;
        Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin())
    }

    fn texel_index(&self, u: f64, v: f64) -> usize {
        let x = ((u * self.width as f64) as usize).min(self.width - 1);
        let y = ((v * self.height as f64) as usize).min(self.height - 1);
        y * self.width + x
    }

    pub fn radiance(&self, dir: Vec3) -> Rgb {
        let (u, v) = Self::uv(dir);
        self.texels[self.texel_index(u, v)]
    }
}

/// Normalized cumulative table sampled by binary search.
#[derive(Clone, Debug, PartialEq)]
pub struct TabledCdf {
    pub cumulative: Vec<f64>,
}

impl TabledCdf {
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "CDF weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("total light flux is zero".into()));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        // Pin the tail so that every u in [0, 1) finds an entry.
        let last = cumulative.len() - 1;
        cumulative[last] = 1.0;
        for i in (0..last).rev() {
            if cumulative[i] > 1.0 {
                cumulative[i] = 1.0;
            }
        }
        Ok(Self { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Smallest index whose cumulative value exceeds `u`.
    pub fn sample(&self, u: f64) -> usize {
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    pub fn pmf(&self, i: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - prev
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightEntry {
    Light(usize),
    EnvTexel(usize),
}

/// Every emitter in the scene (individual lights and environment texels)
/// with a flux-proportional selection table.
#[derive(Clone, Debug, PartialEq)]
pub struct LightTable {
    pub entries: Vec<LightEntry>,
    pub cdf: TabledCdf,
}

/// Builds the selection table. Environment texels are weighted by
/// `π r² · luminance · 4π / texel_count`, i.e. their flux if each covered
/// the average texel solid angle, where `r` is the scene bounding radius.
pub fn build_light_cdf(
    lights: &[Light],
    environment: Option<&EnvironmentMap>,
    scene_radius: f64,
) -> Result<LightTable> {
    let mut entries = Vec::new();
    let mut weights = Vec::new();
    for (i, l) in lights.iter().enumerate() {
        entries.push(LightEntry::Light(i));
        weights.push(l.power());
    }
    if let Some(env) = environment {
        let texel_solid_angle = 4.0 * PI / env.texels.len() as f64;
        let r2 = scene_radius * scene_radius;
        for (i, t) in env.texels.iter().enumerate() {
            entries.push(LightEntry::EnvTexel(i));
            weights.push(PI * r2 * luminance(*t) * texel_solid_angle);
        }
    }
    let cdf = TabledCdf::from_weights(&weights)?;
    Ok(LightTable { entries, cdf })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightSample {
    pub direction: Vec3,
    /// Distance to the emitter; infinite for the environment.
    pub t_max: f64,
    /// Solid-angle density of `direction` given the chosen entry (1 for a
    /// point light).
    pub pdf: f64,
    /// Radiance arriving at the shading point (already divided by the squared
    /// distance for point lights).
    pub radiance: Rgb,
}

/// Samples a direction toward `entry` from `point`. `u` is a pair of uniform
/// numbers in `[0, 1)`. Returns `None` when the sample carries no energy.
pub fn sample_light_dir(
    point: Vec3,
    entry: LightEntry,
    lights: &[Light],
    environment: Option<&EnvironmentMap>,
    u: (f64, f64),
) -> Option<LightSample> {
    match entry {
        LightEntry::Light(i) => match &lights[i] {
            Light::Point {
                position,
                intensity,
            } => {
                let to = *position - point;
                let d2 = to.length_squared();
                if d2 <= 0.0 {
                    return None;
                }
                let dist = d2.sqrt();
                Some(LightSample {
                    direction: to / dist,
                    t_max: dist,
                    pdf: 1.0,
                    radiance: *intensity / d2,
                })
            }
            Light::Area {
                corner,
                edge_u,
                edge_v,
                radiance,
            } => {
                let p = *corner + *edge_u * u.0 + *edge_v * u.1;
                let to = p - point;
                let d2 = to.length_squared();
                if d2 <= 0.0 {
                    return None;
                }
                let dist = d2.sqrt();
                let dir = to / dist;
                let cross = edge_u.cross(*edge_v);
                let area = cross.length();
                let cos_light = (cross / area).dot(-dir).abs();
                if cos_light <= 0.0 {
                    return None;
                }
                Some(LightSample {
                    direction: dir,
                    t_max: dist,
                    pdf: d2 / (area * cos_light),
                    radiance: *radiance,
                })
            }
        },
        LightEntry::EnvTexel(i) => {
            let env = environment?;
            let (x, y) = (i % env.width, i / env.width);
            let uu = (x as f64 + u.0) / env.width as f64;
            let vv = (y as f64 + u.1) / env.height as f64;
            let sin_theta = (PI * vv).sin();
            if sin_theta <= 0.0 {
                return None;
            }
            let dir = EnvironmentMap::dir_from_uv(uu, vv);
            let texel_area = (2.0 * PI / env.width as f64) * (PI / env.height as f64);
            Some(LightSample {
                direction: dir,
                t_max: f64::INFINITY,
                pdf: 1.0 / (texel_area * sin_theta),
                radiance: env.texels[i],
            })
        }
    }
}

/// Solid-angle density with which [`sample_light_dir`] would produce `dir`
/// from `point` for an area light; zero when the ray misses the quad.
pub fn area_light_pdf(point: Vec3, light: &Light, dir: Vec3) -> f64 {
    let Light::Area {
        corner,
        edge_u,
        edge_v,
        ..
    } = light
    else {
        return 0.0;
    };
    let n = edge_u.cross(*edge_v);
    let area = n.length();
    let n = n / area;
    let denom = n.dot(dir);
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    let t = n.dot(*corner - point) / denom;
    if t <= 0.0 {
        return 0.0;
    }
    let hit = Ray { origin: point, direction: dir }.at(t);
    let rel = hit - *corner;
    // Solve rel = s*edge_u + t*edge_v in the quad plane.
    let uu = edge_u.dot(*edge_u);
    let uv = edge_u.dot(*edge_v);
    let vv = edge_v.dot(*edge_v);
    let ru = rel.dot(*edge_u);
    let rv = rel.dot(*edge_v);
    let det = uu * vv - uv * uv;
    let s = (ru * vv - rv * uv) / det;
    let q = (rv * uu - ru * uv) / det;
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&q) {
        return 0.0;
    }
    t * t / (area * denom.abs())
}

/// Uniform direction on the unit sphere with density `1 / 4π`.
pub fn sample_uniform_dir<R: Rng + ?Sized>(rng: &mut R) -> (Vec3, f64) {
    let z: f64 = 1.0 - 2.0 * rng.gen::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.gen::<f64>();
    (Vec3::new(r * phi.cos(), r * phi.sin(), z), 1.0 / (4.0 * PI))
}
