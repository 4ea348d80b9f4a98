//! Trainable latent-vector grids.
//!
//! Cells are addressed cell-centered: a normalized coordinate `u` maps to the
//! continuous index `u * R - 0.5`. The first axis of a 2D grid may wrap
//! (spherical azimuth); every other axis clamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_update, AdamParams};
use crate::error::{Error, Result};
use crate::geometry::SphericalCoord;
use crate::real::Real;

/// Latent initialization bound: cells start in `U(-1e-4, 1e-4)`.
pub const INIT_RANGE: f64 = 1e-4;

/// Cell indices and interpolation weights for one axis.
#[inline]
fn axis_weights(coord: f64, resolution: usize, wrap: bool) -> [(usize, f64); 2] {
    if resolution == 1 {
        return [(0, 1.0), (0, 0.0)];
    }
    let x = coord * resolution as f64 - 0.5;
    if wrap {
        let i0 = x.floor();
        let frac = x - i0;
        let r = resolution as i64;
        let a = (i0 as i64).rem_euclid(r) as usize;
        let b = (i0 as i64 + 1).rem_euclid(r) as usize;
        [(a, 1.0 - frac), (b, frac)]
    } else {
        let x = x.clamp(0.0, (resolution - 1) as f64);
        let i0 = (x.floor() as usize).min(resolution - 2);
        let frac = x - i0 as f64;
        [(i0, 1.0 - frac), (i0 + 1, frac)]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GridStorage<T> {
    latents: Vec<T>,
    grad: Vec<T>,
    adam_m: Vec<T>,
    adam_v: Vec<T>,
}

impl<T: Real> GridStorage<T> {
    fn init(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latents = (0..len)
            .map(|_| T::from_f64_lossy(rng.gen_range(-INIT_RANGE..=INIT_RANGE)))
            .collect();
        Self {
            latents,
            grad: vec![T::zero(); len],
            adam_m: vec![T::zero(); len],
            adam_v: vec![T::zero(); len],
        }
    }

    fn adam_step(&mut self, params: &mut AdamParams) {
        let c = params.advance();
        adam_update(
            &mut self.latents,
            &mut self.grad,
            &mut self.adam_m,
            &mut self.adam_v,
            params,
            c,
        );
    }
}

/// `R × R` cells of `N`-dimensional latents, stored row-major with `u` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid2D<T> {
    pub resolution: usize,
    pub latent_dim: usize,
    pub wrap_u: bool,
    store: GridStorage<T>,
}

impl<T: Real> FeatureGrid2D<T> {
    pub fn new(resolution: usize, latent_dim: usize, wrap_u: bool, seed: u64) -> Result<Self> {
        if resolution == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution and latent dim must be positive (got R={resolution}, N={latent_dim})"
            )));
        }
        Ok(Self {
            resolution,
            latent_dim,
            wrap_u,
            store: GridStorage::init(resolution * resolution * latent_dim, seed),
        })
    }

    pub fn latents(&self) -> &[T] {
        &self.store.latents
    }

    pub fn latents_mut(&mut self) -> &mut [T] {
        &mut self.store.latents
    }

    pub fn grad(&self) -> &[T] {
        &self.store.grad
    }

    pub fn cell(&self, iu: usize, iv: usize) -> &[T] {
        let start = (iv * self.resolution + iu) * self.latent_dim;
        &self.store.latents[start..start + self.latent_dim]
    }

    /// The four touched cells (flat cell index) and their bilinear weights.
    /// Weights sum to one.
    #[inline]
    pub fn weights(&self, coord: SphericalCoord) -> [(usize, f64); 4] {
        let wu = axis_weights(coord.u, self.resolution, self.wrap_u);
        let wv = axis_weights(coord.v, self.resolution, false);
        let r = self.resolution;
        [
            (wv[0].0 * r + wu[0].0, wv[0].1 * wu[0].1),
            (wv[0].0 * r + wu[1].0, wv[0].1 * wu[1].1),
            (wv[1].0 * r + wu[0].0, wv[1].1 * wu[0].1),
            (wv[1].0 * r + wu[1].0, wv[1].1 * wu[1].1),
        ]
    }

    /// Writes the interpolated latent into `out[..latent_dim]`.
    #[inline]
    pub fn lookup_into(&self, coord: SphericalCoord, out: &mut [T]) {
        let n = self.latent_dim;
        out[..n].iter_mut().for_each(|o| *o = T::zero());
        for (cell, w) in self.weights(coord) {
            let w = T::from_f64_lossy(w);
            let src = &self.store.latents[cell * n..(cell + 1) * n];
            for (o, &s) in out[..n].iter_mut().zip(src) {
                *o = *o + w * s;
            }
        }
    }

    pub fn lookup(&self, coord: SphericalCoord) -> Vec<T> {
        let mut out = vec![T::zero(); self.latent_dim];
        self.lookup_into(coord, &mut out);
        out
    }

    /// Scatters `upstream` into the touched cells' gradients.
    #[inline]
    pub fn accumulate_grad(&mut self, coord: SphericalCoord, upstream: &[T]) {
        let n = self.latent_dim;
        for (cell, w) in self.weights(coord) {
            let w = T::from_f64_lossy(w);
            let dst = &mut self.store.grad[cell * n..(cell + 1) * n];
            for (d, &g) in dst.iter_mut().zip(&upstream[..n]) {
                *d = *d + w * g;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.store.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn adam_step(&mut self, params: &mut AdamParams) {
        self.store.adam_step(params);
    }

    /// Bytes actually allocated for latents, gradients and both moments.
    pub fn allocated_bytes(&self) -> usize {
        4 * self.store.latents.len() * std::mem::size_of::<T>()
    }
}

/// `R` cells of `N`-dimensional latents over `[0, 1]`, clamped at both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid1D<T> {
    pub resolution: usize,
    pub latent_dim: usize,
    store: GridStorage<T>,
}

impl<T: Real> FeatureGrid1D<T> {
    pub fn new(resolution: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if resolution == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution and latent dim must be positive (got R={resolution}, N={latent_dim})"
            )));
        }
        Ok(Self {
            resolution,
            latent_dim,
            store: GridStorage::init(resolution * latent_dim, seed),
        })
    }

    pub fn latents(&self) -> &[T] {
        &self.store.latents
    }

    pub fn latents_mut(&mut self) -> &mut [T] {
        &mut self.store.latents
    }

    pub fn grad(&self) -> &[T] {
        &self.store.grad
    }

    #[inline]
    pub fn weights(&self, r: f64) -> [(usize, f64); 2] {
        axis_weights(r, self.resolution, false)
    }

    #[inline]
    pub fn lookup_into(&self, r: f64, out: &mut [T]) {
        let n = self.latent_dim;
        out[..n].iter_mut().for_each(|o| *o = T::zero());
        for (cell, w) in self.weights(r) {
            let w = T::from_f64_lossy(w);
            let src = &self.store.latents[cell * n..(cell + 1) * n];
            for (o, &s) in out[..n].iter_mut().zip(src) {
                *o = *o + w * s;
            }
        }
    }

    pub fn lookup(&self, r: f64) -> Vec<T> {
        let mut out = vec![T::zero(); self.latent_dim];
        self.lookup_into(r, &mut out);
        out
    }

    #[inline]
    pub fn accumulate_grad(&mut self, r: f64, upstream: &[T]) {
        let n = self.latent_dim;
        for (cell, w) in self.weights(r) {
            let w = T::from_f64_lossy(w);
            let dst = &mut self.store.grad[cell * n..(cell + 1) * n];
            for (d, &g) in dst.iter_mut().zip(&upstream[..n]) {
                *d = *d + w * g;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.store.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn adam_step(&mut self, params: &mut AdamParams) {
        self.store.adam_step(params);
    }

    pub fn allocated_bytes(&self) -> usize {
        4 * self.store.latents.len() * std::mem::size_of::<T>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridDims {
    One,
    Two,
}

/// Reported footprint of one grid: half-precision latents (2 bytes) for
/// runtime, plus a 4-byte gradient and two 4-byte Adam moments when
/// training, per cell with the latent width folded in. A 2D grid therefore
/// reports `14 R²` bytes for training and `2 R²` for runtime.
pub fn grid_bytes(resolution: u64, dims: GridDims, training: bool) -> u64 {
    let cells = match dims {
        GridDims::One => resolution,
        GridDims::Two => resolution * resolution,
    };
    let per_cell = if training { 2 + 4 + 4 + 4 } else { 2 };
    cells * per_cell
}

/// Position and direction grids of the outer network: `28 R²` training, `4 R²` runtime.
pub fn outer_grid_set_bytes(resolution: u64, training: bool) -> u64 {
    2 * grid_bytes(resolution, GridDims::Two, training)
}

/// Position, direction and distance grids of the inner network:
/// `28 R² + 14 R` training, `4 R² + 2 R` runtime.
pub fn inner_grid_set_bytes(resolution_2d: u64, resolution_1d: u64, training: bool) -> u64 {
    2 * grid_bytes(resolution_2d, GridDims::Two, training) + grid_bytes(resolution_1d, GridDims::One, training)
}

/// Whole kibibytes needed to hold `bytes`, rounded up.
pub fn kilobytes(bytes: u64) -> u64 {
    bytes.div_ceil(1024)
}
