//! Neural intersection functions: per-object feature grids feeding an outer
//! network (rays entering a box) and an inner network (rays starting inside
//! one), with sample collection, joint training and batched inference.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::adam::AdamParams;
use crate::error::{Error, Result};
use crate::geometry::{outer_from_entry, ray_aabb_intersect, transform_inner, InnerQuery, OuterQuery, Ray, Vec3};
use crate::grid::{FeatureGrid1D, FeatureGrid2D};
use crate::image::HdrImage;
use crate::light::sample_uniform_dir;
use crate::mlp::{l2_loss, Matrix, Mlp, OutputActivation};
use crate::real::Real;
use crate::render::{camera_sample, direct_light_sample, facing_normals, OcclusionPredictor, QueryRecord, ShadowRay, StageTimings};
use crate::rng::{mix_seed, stream_rng, TRAINING_STREAM};
use crate::scene::Scene;

const INFER_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OuterConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub grid_resolution: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InnerConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub grid_resolution: usize,
    pub latent_dim: usize,
    pub dist_resolution: usize,
    pub dist_latent_dim: usize,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sharing {
    /// One outer and one inner network for all objects; grids stay per object.
    Shared,
    PerObject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Visibility probability through a sigmoid.
    Occlusion,
    /// Shading normal and normalized camera depth through an identity output.
    Geometry,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Occlusion => 1,
            Head::Geometry => 4,
        }
    }

    fn activation(self) -> OutputActivation {
        match self {
            Head::Occlusion => OutputActivation::Sigmoid,
            Head::Geometry => OutputActivation::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NifConfig {
    pub outer: OuterConfig,
    pub inner: InnerConfig,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub sharing: Sharing,
    pub head: Head,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NifConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        Self {
            outer: OuterConfig {
                hidden_layers: 2,
                hidden_width: 64,
                grid_resolution: 256,
                latent_dim: 3,
                batch_size: 1 << 11,
            },
            inner: InnerConfig {
                hidden_layers: 3,
                hidden_width: 48,
                grid_resolution: 128,
                latent_dim: 5,
                dist_resolution: 128,
                dist_latent_dim: 3,
                batch_size: 1 << 12,
            },
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            sharing: Sharing::Shared,
            head: Head::Occlusion,
            epochs: 30,
            seed: 0,
        }
    }
}

impl NifConfig {
    /// Sets every grid resolution (outer, inner and distance) to `r`.
    pub fn with_grid_resolution(mut self, r: usize) -> Self {
        self.outer.grid_resolution = r;
        self.inner.grid_resolution = r;
        self.inner.dist_resolution = r;
        self
    }

    /// Sets every latent dimension to `n`.
    pub fn with_latent_dim(mut self, n: usize) -> Self {
        self.outer.latent_dim = n;
        self.inner.latent_dim = n;
        self.inner.dist_latent_dim = n;
        self
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            learning_rate: self.learning_rate,
            step_count: 0,
        }
    }

    pub fn outer_input_dim(&self) -> usize {
        2 * self.outer.latent_dim
    }

    pub fn inner_input_dim(&self) -> usize {
        2 * self.inner.latent_dim + self.inner.dist_latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.outer;
        let i = &self.inner;
        let sizes = [
            o.hidden_width,
            o.grid_resolution,
            o.latent_dim,
            o.batch_size,
            i.hidden_width,
            i.grid_resolution,
            i.latent_dim,
            i.dist_resolution,
            i.dist_latent_dim,
            i.batch_size,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "network widths, grid sizes and batch sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_epsilon >= 0.0)
        {
            return Err(Error::InvalidArgument("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    /// 1 = visible, 0 = occluded.
    Visibility(f32),
    /// Unit shading normal and camera depth divided by the scene diagonal.
    Geometry { normal: Vec3, depth: f64 },
}

impl Label {
    fn write_target<T: Real>(&self, head: Head, out: &mut [T]) -> Result<()> {
        match (self, head) {
            (Label::Visibility(v), Head::Occlusion) => out[0] = T::from_f64_lossy(*v as f64),
            (Label::Geometry { normal, depth }, Head::Geometry) => {
                out[0] = T::from_f64_lossy(normal.x);
                out[1] = T::from_f64_lossy(normal.y);
                out[2] = T::from_f64_lossy(normal.z);
                out[3] = T::from_f64_lossy(*depth);
            }
            _ => return Err(Error::InvalidArgument("label kind does not match the model head".into())),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample<Q> {
    pub query: Q,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub outer: Vec<TrainingSample<OuterQuery>>,
    pub inner: Vec<TrainingSample<InnerQuery>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.outer.len() + self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend(&mut self, other: SampleSet) {
        self.outer.extend(other.outer);
        self.inner.extend(other.inner);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// Shadow rays toward lights chosen by flux.
    Importance,
    /// Directions uniform over the sphere, unbounded.
    Uniform,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CollectStats {
    pub shadow_rays: usize,
    /// Shadow rays whose segment enters each object's box from outside.
    pub rays_entering: Vec<usize>,
    pub outer_per_object: Vec<usize>,
    pub inner_per_object: Vec<usize>,
}

/// Per-object outer grids with their optimizer counters.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterGrids<T> {
    pub pos: FeatureGrid2D<T>,
    pub dir: FeatureGrid2D<T>,
    adam: [AdamParams; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerGrids<T> {
    pub pos: FeatureGrid2D<T>,
    pub dir: FeatureGrid2D<T>,
    pub dist: FeatureGrid1D<T>,
    adam: [AdamParams; 3],
}

impl<T: Real> OuterGrids<T> {
    fn step(&mut self) {
        self.pos.adam_step(&mut self.adam[0]);
        self.dir.adam_step(&mut self.adam[1]);
    }
}

impl<T: Real> InnerGrids<T> {
    fn step(&mut self) {
        self.pos.adam_step(&mut self.adam[0]);
        self.dir.adam_step(&mut self.adam[1]);
        self.dist.adam_step(&mut self.adam[2]);
    }
}

#[derive(Clone, Debug)]
pub struct NifModel<T = f32> {
    config: NifConfig,
    pub(crate) outer_grids: Vec<OuterGrids<T>>,
    pub(crate) inner_grids: Vec<InnerGrids<T>>,
    /// One network when shared, one per object otherwise.
    pub(crate) outer_mlps: Vec<Mlp<T>>,
    pub(crate) inner_mlps: Vec<Mlp<T>>,
    outer_adam: Vec<AdamParams>,
    inner_adam: Vec<AdamParams>,
}

impl<T: Real> PartialEq for NifModel<T> {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.outer_grids == o.outer_grids
            && self.inner_grids == o.inner_grids
            && self.outer_mlps == o.outer_mlps
            && self.inner_mlps == o.inner_mlps
    }
}

fn chunked_infer<T: Real>(mlp: &Mlp<T>, input: &Matrix<T>) -> Result<Matrix<T>> {
    let out_dim = mlp.output_dim();
    let mut out = Matrix::zeros(input.rows, out_dim);
    if input.rows == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(INFER_CHUNK * out_dim)
        .zip(input.data.par_chunks(INFER_CHUNK * input.cols))
        .try_for_each(|(o, i)| -> Result<()> {
            let m = Matrix::from_vec(i.len() / input.cols, input.cols, i.to_vec())?;
            o.copy_from_slice(&mlp.infer(&m)?.data);
            Ok(())
        })?;
    Ok(out)
}

/// Runs each row through the network chosen by `nets[row]`.
fn grouped_infer<T: Real>(mlps: &[Mlp<T>], input: &Matrix<T>, nets: &[usize]) -> Result<Matrix<T>> {
    if mlps.len() == 1 {
        return chunked_infer(&mlps[0], input);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &n) in nets.iter().enumerate() {
        groups.entry(n).or_default().push(r);
    }
    let out_dim = mlps[0].output_dim();
    let mut out = Matrix::zeros(input.rows, out_dim);
    for (net, rows) in groups {
        let mut sub = Matrix::zeros(rows.len(), input.cols);
        for (k, &r) in rows.iter().enumerate() {
            sub.row_mut(k).copy_from_slice(input.row(r));
        }
        let res = chunked_infer(&mlps[net], &sub)?;
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(res.row(k));
        }
    }
    Ok(out)
}

fn fill_rows<T: Real, Q: Sync>(
    queries: &[Q],
    cols: usize,
    encode: impl Fn(&Q, &mut [T]) + Sync,
) -> Matrix<T> {
    let mut m = Matrix::zeros(queries.len(), cols);
    if cols > 0 {
        m.data
            .par_chunks_mut(cols)
            .with_min_len(256)
            .zip(queries.par_iter())
            .for_each(|(row, q)| encode(q, row));
    }
    m
}

impl<T: Real> NifModel<T> {
    /// Fresh model: grids uniform in `±1e-4`, Xavier-initialized networks.
    pub fn new(config: NifConfig, object_count: usize) -> Result<Self> {
        config.validate()?;
        if object_count == 0 {
            return Err(Error::InvalidArgument("a model needs at least one object".into()));
        }
        let o = config.outer;
        let i = config.inner;
        let seed = config.seed;
        let adam = config.adam();
        let mut outer_grids = Vec::with_capacity(object_count);
        let mut inner_grids = Vec::with_capacity(object_count);
        for obj in 0..object_count as u64 {
            outer_grids.push(OuterGrids {
                pos: FeatureGrid2D::new(o.grid_resolution, o.latent_dim, true, mix_seed(&[seed, obj, 0]))?,
                dir: FeatureGrid2D::new(o.grid_resolution, o.latent_dim, true, mix_seed(&[seed, obj, 1]))?,
                adam: [adam; 2],
            });
            inner_grids.push(InnerGrids {
                pos: FeatureGrid2D::new(i.grid_resolution, i.latent_dim, true, mix_seed(&[seed, obj, 2]))?,
                dir: FeatureGrid2D::new(i.grid_resolution, i.latent_dim, true, mix_seed(&[seed, obj, 3]))?,
                dist: FeatureGrid1D::new(i.dist_resolution, i.dist_latent_dim, mix_seed(&[seed, obj, 4]))?,
                adam: [adam; 3],
            });
        }
        let nets = match config.sharing {
            Sharing::Shared => 1,
            Sharing::PerObject => object_count,
        };
        let head = config.head;
        let mut outer_mlps = Vec::with_capacity(nets);
        let mut inner_mlps = Vec::with_capacity(nets);
        for n in 0..nets as u64 {
            let mut m = Mlp::new(config.outer_input_dim(), o.hidden_width, o.hidden_layers, head.output_dim(), head.activation())?;
            m.xavier_init(mix_seed(&[seed, n, 10]));
            outer_mlps.push(m);
            let mut m = Mlp::new(config.inner_input_dim(), i.hidden_width, i.hidden_layers, head.output_dim(), head.activation())?;
            m.xavier_init(mix_seed(&[seed, n, 11]));
            inner_mlps.push(m);
        }
        Ok(Self {
            config,
            outer_grids,
            inner_grids,
            outer_mlps,
            inner_mlps,
            outer_adam: vec![adam; nets],
            inner_adam: vec![adam; nets],
        })
    }

    pub fn config(&self) -> &NifConfig {
        &self.config
    }

    pub fn object_count(&self) -> usize {
        self.outer_grids.len()
    }

    pub fn outer_grids(&self, object: usize) -> Option<&OuterGrids<T>> {
        self.outer_grids.get(object)
    }

    pub fn inner_grids(&self, object: usize) -> Option<&InnerGrids<T>> {
        self.inner_grids.get(object)
    }

    pub fn outer_grids_mut(&mut self, object: usize) -> Option<&mut OuterGrids<T>> {
        self.outer_grids.get_mut(object)
    }

    pub fn inner_grids_mut(&mut self, object: usize) -> Option<&mut InnerGrids<T>> {
        self.inner_grids.get_mut(object)
    }

    pub fn outer_mlps(&self) -> &[Mlp<T>] {
        &self.outer_mlps
    }

    pub fn inner_mlps(&self) -> &[Mlp<T>] {
        &self.inner_mlps
    }

    pub fn outer_mlps_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.outer_mlps
    }

    pub fn inner_mlps_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.inner_mlps
    }

    /// Network index serving `object`.
    pub fn network_for(&self, object: usize) -> usize {
        match self.config.sharing {
            Sharing::Shared => 0,
            Sharing::PerObject => object,
        }
    }

    fn check_object(&self, object: usize) -> Result<()> {
        if object >= self.object_count() {
            return Err(Error::UnknownObject(object));
        }
        Ok(())
    }

    fn encode_outer_unchecked(&self, q: &OuterQuery, out: &mut [T]) {
        let n = self.config.outer.latent_dim;
        let g = &self.outer_grids[q.object_id];
        g.pos.lookup_into(q.p_prime, &mut out[..n]);
        g.dir.lookup_into(q.d_prime, &mut out[n..2 * n]);
    }

    fn encode_inner_unchecked(&self, q: &InnerQuery, out: &mut [T]) {
        let n = self.config.inner.latent_dim;
        let g = &self.inner_grids[q.object_id];
        g.pos.lookup_into(q.p_prime, &mut out[..n]);
        g.dir.lookup_into(q.d_prime, &mut out[n..2 * n]);
        g.dist.lookup_into(q.r_prime, &mut out[2 * n..]);
    }

    /// Concatenated position and direction latents.
    pub fn encode_outer(&self, q: &OuterQuery) -> Result<Vec<T>> {
        self.check_object(q.object_id)?;
        let mut v = vec![T::zero(); self.config.outer_input_dim()];
        self.encode_outer_unchecked(q, &mut v);
        Ok(v)
    }

    /// Concatenated position, direction and distance latents.
    pub fn encode_inner(&self, q: &InnerQuery) -> Result<Vec<T>> {
        self.check_object(q.object_id)?;
        let mut v = vec![T::zero(); self.config.inner_input_dim()];
        self.encode_inner_unchecked(q, &mut v);
        Ok(v)
    }

    pub fn encode_outer_batch(&self, queries: &[OuterQuery]) -> Result<Matrix<T>> {
        for q in queries {
            self.check_object(q.object_id)?;
        }
        Ok(fill_rows(queries, self.config.outer_input_dim(), |q, row| {
            self.encode_outer_unchecked(q, row)
        }))
    }

    pub fn encode_inner_batch(&self, queries: &[InnerQuery]) -> Result<Matrix<T>> {
        for q in queries {
            self.check_object(q.object_id)?;
        }
        Ok(fill_rows(queries, self.config.inner_input_dim(), |q, row| {
            self.encode_inner_unchecked(q, row)
        }))
    }

    /// Outer-network outputs for already encoded rows.
    pub fn run_outer(&self, encoded: &Matrix<T>, objects: &[usize]) -> Result<Matrix<T>> {
        let nets: Vec<usize> = objects.iter().map(|&o| self.network_for(o)).collect();
        grouped_infer(&self.outer_mlps, encoded, &nets)
    }

    pub fn run_inner(&self, encoded: &Matrix<T>, objects: &[usize]) -> Result<Matrix<T>> {
        let nets: Vec<usize> = objects.iter().map(|&o| self.network_for(o)).collect();
        grouped_infer(&self.inner_mlps, encoded, &nets)
    }

    pub fn predict_outer(&self, queries: &[OuterQuery]) -> Result<Matrix<T>> {
        let enc = self.encode_outer_batch(queries)?;
        let objects: Vec<usize> = queries.iter().map(|q| q.object_id).collect();
        self.run_outer(&enc, &objects)
    }

    pub fn predict_inner(&self, queries: &[InnerQuery]) -> Result<Matrix<T>> {
        let enc = self.encode_inner_batch(queries)?;
        let objects: Vec<usize> = queries.iter().map(|q| q.object_id).collect();
        self.run_inner(&enc, &objects)
    }

    fn require_head(&self, head: Head) -> Result<()> {
        if self.config.head != head {
            return Err(Error::InvalidArgument(format!(
                "model has a {:?} head, {head:?} required",
                self.config.head
            )));
        }
        Ok(())
    }

    /// Occlusion decisions (`true` = occluded, i.e. p < 0.5), outer batch
    /// first, then inner batch.
    pub fn infer_occlusion(&self, outer: &[OuterQuery], inner: &[InnerQuery]) -> Result<(Vec<bool>, Vec<bool>)> {
        self.require_head(Head::Occlusion)?;
        let half = T::from_f64_lossy(0.5);
        let o = self.predict_outer(outer)?.data.iter().map(|&p| p < half).collect();
        let i = self.predict_inner(inner)?.data.iter().map(|&p| p < half).collect();
        Ok((o, i))
    }

    /// Unit shading normal and camera depth in scene units.
    pub fn infer_geometry(&self, queries: &[OuterQuery], scene_diagonal: f64) -> Result<Vec<(Vec3, f64)>> {
        self.require_head(Head::Geometry)?;
        let out = self.predict_outer(queries)?;
        Ok((0..out.rows)
            .map(|r| {
                let row = out.row(r);
                let n = Vec3::new(row[0].as_f64(), row[1].as_f64(), row[2].as_f64());
                let len = n.length();
                let normal = if len > 0.0 && len.is_finite() {
                    n / len
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                };
                (normal, row[3].as_f64() * scene_diagonal)
            })
            .collect())
    }

    /// Forward and backward pass of one outer batch served by network `net`;
    /// gradients accumulate into that network and the touched grids.
    /// Returns the loss and which objects' grids were touched.
    fn outer_gradients(&mut self, samples: &[TrainingSample<OuterQuery>], idx: &[usize], net: usize) -> Result<(f64, Vec<bool>)> {
        let n = self.config.outer.latent_dim;
        let head = self.config.head;
        let mut input = Matrix::zeros(idx.len(), 2 * n);
        let mut target = Matrix::zeros(idx.len(), head.output_dim());
        for (r, &i) in idx.iter().enumerate() {
            let s = &samples[i];
            self.encode_outer_unchecked(&s.query, input.row_mut(r));
            s.label.write_target(head, target.row_mut(r))?;
        }
        let mlp = &mut self.outer_mlps[net];
        let pred = mlp.forward(&input)?;
        let (loss, grad) = l2_loss(&pred, &target)?;
        let dx = mlp.backward(&grad)?;
        let mut touched = vec![false; self.outer_grids.len()];
        for (r, &i) in idx.iter().enumerate() {
            let q = &samples[i].query;
            let g = &mut self.outer_grids[q.object_id];
            let row = dx.row(r);
            g.pos.accumulate_grad(q.p_prime, &row[..n]);
            g.dir.accumulate_grad(q.d_prime, &row[n..]);
            touched[q.object_id] = true;
        }
        Ok((loss.as_f64(), touched))
    }

    fn inner_gradients(&mut self, samples: &[TrainingSample<InnerQuery>], idx: &[usize], net: usize) -> Result<(f64, Vec<bool>)> {
        let n = self.config.inner.latent_dim;
        let head = self.config.head;
        let mut input = Matrix::zeros(idx.len(), self.config.inner_input_dim());
        let mut target = Matrix::zeros(idx.len(), head.output_dim());
        for (r, &i) in idx.iter().enumerate() {
            let s = &samples[i];
            self.encode_inner_unchecked(&s.query, input.row_mut(r));
            s.label.write_target(head, target.row_mut(r))?;
        }
        let mlp = &mut self.inner_mlps[net];
        let pred = mlp.forward(&input)?;
        let (loss, grad) = l2_loss(&pred, &target)?;
        let dx = mlp.backward(&grad)?;
        let mut touched = vec![false; self.inner_grids.len()];
        for (r, &i) in idx.iter().enumerate() {
            let q = &samples[i].query;
            let g = &mut self.inner_grids[q.object_id];
            let row = dx.row(r);
            g.pos.accumulate_grad(q.p_prime, &row[..n]);
            g.dir.accumulate_grad(q.d_prime, &row[n..2 * n]);
            g.dist.accumulate_grad(q.r_prime, &row[2 * n..]);
            touched[q.object_id] = true;
        }
        Ok((loss.as_f64(), touched))
    }

    fn outer_batch_step(&mut self, samples: &[TrainingSample<OuterQuery>], idx: &[usize], net: usize) -> Result<f64> {
        let (loss, touched) = self.outer_gradients(samples, idx, net)?;
        self.outer_mlps[net].adam_step(&mut self.outer_adam[net]);
        for (g, t) in self.outer_grids.iter_mut().zip(touched) {
            if t {
                g.step();
            }
        }
        Ok(loss)
    }

    fn inner_batch_step(&mut self, samples: &[TrainingSample<InnerQuery>], idx: &[usize], net: usize) -> Result<f64> {
        let (loss, touched) = self.inner_gradients(samples, idx, net)?;
        self.inner_mlps[net].adam_step(&mut self.inner_adam[net]);
        for (g, t) in self.inner_grids.iter_mut().zip(touched) {
            if t {
                g.step();
            }
        }
        Ok(loss)
    }

    fn single_network(&self, objects: impl Iterator<Item = usize>) -> Result<usize> {
        let mut net = None;
        for o in objects {
            self.check_object(o)?;
            let n = self.network_for(o);
            if net.map_or(false, |m| m != n) {
                return Err(Error::InvalidArgument("batch spans several networks".into()));
            }
            net = Some(n);
        }
        Ok(net.unwrap_or(0))
    }

    /// Loss of `samples` as one outer batch, accumulating (not applying)
    /// gradients for the network and grids. All samples must share a network.
    pub fn accumulate_outer_gradients(&mut self, samples: &[TrainingSample<OuterQuery>]) -> Result<f64> {
        let net = self.single_network(samples.iter().map(|s| s.query.object_id))?;
        let idx: Vec<usize> = (0..samples.len()).collect();
        Ok(self.outer_gradients(samples, &idx, net)?.0)
    }

    pub fn accumulate_inner_gradients(&mut self, samples: &[TrainingSample<InnerQuery>]) -> Result<f64> {
        let net = self.single_network(samples.iter().map(|s| s.query.object_id))?;
        let idx: Vec<usize> = (0..samples.len()).collect();
        Ok(self.inner_gradients(samples, &idx, net)?.0)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.outer_grids {
            g.pos.zero_grad();
            g.dir.zero_grad();
        }
        for g in &mut self.inner_grids {
            g.pos.zero_grad();
            g.dir.zero_grad();
            g.dist.zero_grad();
        }
        for m in self.outer_mlps.iter_mut().chain(self.inner_mlps.iter_mut()) {
            m.zero_grad();
        }
    }

    /// Index groups, one per network that has samples.
    fn groups(&self, objects: impl Iterator<Item = usize>) -> Vec<(usize, Vec<usize>)> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, o) in objects.enumerate() {
            map.entry(self.network_for(o)).or_default().push(i);
        }
        map.into_iter().collect()
    }

    /// Joint Adam training of networks and grids over shuffled mini-batches.
    /// Returns the sample-weighted mean loss of each epoch.
    pub fn train(&mut self, samples: &SampleSet, epochs: usize) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        for q in samples.outer.iter().map(|s| s.query.object_id).chain(samples.inner.iter().map(|s| s.query.object_id)) {
            self.check_object(q)?;
        }
        let outer_groups = self.groups(samples.outer.iter().map(|s| s.query.object_id));
        let inner_groups = self.groups(samples.inner.iter().map(|s| s.query.object_id));
        let mut curve = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, epoch as u64, 20]));
            let mut total = 0.0;
            for (net, idx) in &outer_groups {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                for batch in idx.chunks(self.config.outer.batch_size) {
                    total += self.outer_batch_step(&samples.outer, batch, *net)? * batch.len() as f64;
                }
            }
            for (net, idx) in &inner_groups {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                for batch in idx.chunks(self.config.inner.batch_size) {
                    total += self.inner_batch_step(&samples.inner, batch, *net)? * batch.len() as f64;
                }
            }
            let mean = total / samples.len() as f64;
            log::debug!("epoch {epoch}: loss {mean:.6}");
            curve.push(mean);
        }
        Ok(curve)
    }

    /// Bytes held by the grids and networks of this model as allocated.
    pub fn allocated_bytes(&self) -> usize {
        let grids: usize = self
            .outer_grids
            .iter()
            .map(|g| g.pos.allocated_bytes() + g.dir.allocated_bytes())
            .chain(
                self.inner_grids
                    .iter()
                    .map(|g| g.pos.allocated_bytes() + g.dir.allocated_bytes() + g.dist.allocated_bytes()),
            )
            .sum();
        let params: usize = self
            .outer_mlps
            .iter()
            .chain(&self.inner_mlps)
            .map(|m| m.param_count())
            .sum();
        grids + 4 * params * std::mem::size_of::<T>()
    }
}

impl<T: Real> OcclusionPredictor for NifModel<T> {
    fn occluded_outer(
        &self,
        records: &[QueryRecord<OuterQuery>],
        _rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>> {
        self.require_head(Head::Occlusion)?;
        let queries: Vec<OuterQuery> = records.iter().map(|r| r.query).collect();
        let start = Instant::now();
        let enc = self.encode_outer_batch(&queries)?;
        timings.outer_grid += start.elapsed();
        let start = Instant::now();
        let objects: Vec<usize> = queries.iter().map(|q| q.object_id).collect();
        let out = self.run_outer(&enc, &objects)?;
        let half = T::from_f64_lossy(0.5);
        let res = out.data.iter().map(|&p| p < half).collect();
        timings.outer_inference += start.elapsed();
        Ok(res)
    }

    fn occluded_inner(
        &self,
        records: &[QueryRecord<InnerQuery>],
        _rays: &[ShadowRay],
        timings: &mut StageTimings,
    ) -> Result<Vec<bool>> {
        self.require_head(Head::Occlusion)?;
        let queries: Vec<InnerQuery> = records.iter().map(|r| r.query).collect();
        let start = Instant::now();
        let enc = self.encode_inner_batch(&queries)?;
        timings.inner_grid += start.elapsed();
        let start = Instant::now();
        let objects: Vec<usize> = queries.iter().map(|q| q.object_id).collect();
        let out = self.run_inner(&enc, &objects)?;
        let half = T::from_f64_lossy(0.5);
        let res = out.data.iter().map(|&p| p < half).collect();
        timings.inner_inference += start.elapsed();
        Ok(res)
    }
}

/// Samples from one shadow ray: one outer sample per routed box the segment
/// enters from outside, one inner sample per routed box containing the
/// origin, each labeled by the object's own hierarchy.
pub fn samples_for_ray(scene: &Scene, sr: &ShadowRay, routing: &[bool], out: &mut SampleSet, stats: &mut CollectStats) {
    let geo = &scene.geometry;
    let ray = &sr.ray;
    geo.for_each_overlapping_object(ray, sr.t_max, |o, (t_enter, _)| {
        if !routing[o] {
            return true;
        }
        let bounds = &geo.objects[o].bounds;
        let visible = !geo.trace_occluded_by_object(ray, o, sr.t_max);
        let label = Label::Visibility(if visible { 1.0 } else { 0.0 });
        if t_enter > 0.0 {
            stats.rays_entering[o] += 1;
            stats.outer_per_object[o] += 1;
            out.outer.push(TrainingSample {
                query: outer_from_entry(ray, ray.at(t_enter), bounds, o),
                label,
            });
        } else {
            stats.inner_per_object[o] += 1;
            out.inner.push(TrainingSample {
                query: transform_inner(ray.origin, ray.direction, bounds, o),
                label,
            });
        }
        true
    });
}

fn shadow_ray_for_sample(scene: &Scene, index: usize, sample: u32, seed: u64, sampler: Sampler) -> Option<ShadowRay> {
    let w = scene.camera.width;
    let mut rng = stream_rng(seed, index as u64, sample as u64, TRAINING_STREAM);
    let (ray, hit) = camera_sample(scene, index % w, index / w, &mut rng);
    let hit = hit?;
    match sampler {
        Sampler::Importance => {
            let (ns, ng) = facing_normals(&hit, &ray);
            direct_light_sample(scene, &hit, ns, ng, &mut rng).map(|(sr, _)| sr)
        }
        Sampler::Uniform => {
            let (d, _) = sample_uniform_dir(&mut rng);
            Some(ShadowRay {
                ray: Ray {
                    origin: hit.hit_point,
                    direction: d,
                },
                t_max: f64::INFINITY,
            })
        }
    }
}

fn merge_stats(a: &mut CollectStats, b: &CollectStats) {
    a.shadow_rays += b.shadow_rays;
    for (x, y) in a.rays_entering.iter_mut().zip(&b.rays_entering) {
        *x += y;
    }
    for (x, y) in a.outer_per_object.iter_mut().zip(&b.outer_per_object) {
        *x += y;
    }
    for (x, y) in a.inner_per_object.iter_mut().zip(&b.inner_per_object) {
        *x += y;
    }
}

fn empty_stats(objects: usize) -> CollectStats {
    CollectStats {
        shadow_rays: 0,
        rays_entering: vec![0; objects],
        outer_per_object: vec![0; objects],
        inner_per_object: vec![0; objects],
    }
}

/// Traces `spp` camera samples per pixel, draws one shadow ray per surface
/// hit with `sampler`, and turns every ray into labeled samples. Results are
/// ordered by pixel, then sample index.
pub fn collect_samples(
    scene: &Scene,
    spp: u32,
    sampler: Sampler,
    seed: u64,
    routing: &[bool],
) -> Result<(SampleSet, CollectStats)> {
    if scene.light_table.is_none() {
        return Err(Error::Scene("the scene has no lights".into()));
    }
    if routing.len() != scene.objects.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.objects.len(),
            actual: routing.len(),
        });
    }
    let w = scene.camera.width;
    let objects = scene.objects.len();
    let rows: Vec<(SampleSet, CollectStats)> = (0..scene.camera.height)
        .into_par_iter()
        .map(|y| {
            let mut set = SampleSet::default();
            let mut stats = empty_stats(objects);
            for x in 0..w {
                for s in 0..spp {
                    if let Some(sr) = shadow_ray_for_sample(scene, y * w + x, s, seed, sampler) {
                        stats.shadow_rays += 1;
                        samples_for_ray(scene, &sr, routing, &mut set, &mut stats);
                    }
                }
            }
            (set, stats)
        })
        .collect();
    let mut set = SampleSet::default();
    let mut stats = empty_stats(objects);
    for (s, st) in rows {
        set.extend(s);
        merge_stats(&mut stats, &st);
    }
    Ok((set, stats))
}

/// Geometry-head samples from camera rays: for every routed object whose box
/// the ray enters from outside and whose surface it hits, the outer query is
/// labeled with the facing shading normal and the hit distance from the
/// camera over the scene diagonal.
pub fn collect_geometry_samples(scene: &Scene, spp: u32, seed: u64, routing: &[bool]) -> Result<SampleSet> {
    if routing.len() != scene.objects.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.objects.len(),
            actual: routing.len(),
        });
    }
    let w = scene.camera.width;
    let diag = scene.geometry.diagonal();
    let geo = &scene.geometry;
    let rows: Vec<SampleSet> = (0..scene.camera.height)
        .into_par_iter()
        .map(|y| {
            let mut set = SampleSet::default();
            for x in 0..w {
                for s in 0..spp {
                    let mut rng = stream_rng(seed, (y * w + x) as u64, s as u64, TRAINING_STREAM);
                    let jitter = (rng.gen::<f64>(), rng.gen::<f64>());
                    let ray = scene.camera.generate_ray(x, y, jitter);
                    for (o, obj) in geo.objects.iter().enumerate() {
                        if !routing[o] {
                            continue;
                        }
                        let Some((t0, _)) = ray_aabb_intersect(&ray, &obj.bounds) else { continue };
                        if t0 <= 0.0 {
                            continue;
                        }
                        if let Some(label) = geometry_label(scene, &ray, o, diag) {
                            set.outer.push(TrainingSample {
                                query: outer_from_entry(&ray, ray.at(t0), &obj.bounds, o),
                                label,
                            });
                        }
                    }
                }
            }
            set
        })
        .collect();
    let mut set = SampleSet::default();
    for r in rows {
        set.extend(r);
    }
    Ok(set)
}

/// Ground-truth geometry label of `ray` against a single object.
pub fn geometry_label(scene: &Scene, ray: &Ray, object: usize, diagonal: f64) -> Option<Label> {
    let obj = &scene.geometry.objects[object];
    let (t, tri, (b1, b2)) = obj.trace_closest(ray, scene.geometry.epsilon_t, f64::INFINITY)?;
    let tri = &obj.triangles[tri];
    let mut n = tri.shading_normal(b1, b2);
    if tri.geometric_normal().dot(ray.direction) > 0.0 {
        n = -n;
    }
    Some(Label::Geometry {
        normal: n,
        depth: t / diagonal,
    })
}

/// Normal and depth images predicted by a geometry-head model, with errors
/// against the exact first hit.
#[derive(Clone, Debug)]
pub struct GeometryRender {
    /// Normals mapped to `(n + 1) / 2`; black where nothing was predicted.
    pub normals: HdrImage,
    /// Depth over the scene diagonal.
    pub depth: HdrImage,
    pub mean_angle_error_deg: f64,
    /// Mean absolute depth error over the scene diagonal.
    pub mean_depth_error: f64,
    /// Pixels that entered the comparison.
    pub compared: usize,
}

/// One ray through each pixel center. A pixel's prediction is the nearest
/// predicted depth over the routed boxes its ray enters from outside; errors
/// cover pixels whose exact first hit is on a routed object.
pub fn render_geometry<T: Real>(scene: &Scene, model: &NifModel<T>, routing: &[bool]) -> Result<GeometryRender> {
    model.require_head(Head::Geometry)?;
    if routing.len() != scene.objects.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.objects.len(),
            actual: routing.len(),
        });
    }
    let cam = &scene.camera;
    let diag = scene.geometry.diagonal();
    let n = cam.width * cam.height;
    let mut queries = Vec::new();
    let mut owners = Vec::new();
    let mut reference = Vec::with_capacity(n);
    for i in 0..n {
        let ray = cam.generate_ray(i % cam.width, i / cam.width, (0.5, 0.5));
        for (o, obj) in scene.geometry.objects.iter().enumerate() {
            if !routing[o] {
                continue;
            }
            if let Some((t0, _)) = ray_aabb_intersect(&ray, &obj.bounds) {
                if t0 > 0.0 {
                    queries.push(outer_from_entry(&ray, ray.at(t0), &obj.bounds, o));
                    owners.push(i);
                }
            }
        }
        reference.push(scene.geometry.trace_closest(&ray).filter(|h| routing[h.object_id]).map(|h| {
            let n = if h.geometric_normal.dot(ray.direction) > 0.0 {
                -h.shading_normal
            } else {
                h.shading_normal
            };
            (n, h.t)
        }));
    }
    let predicted = model.infer_geometry(&queries, diag)?;
    let mut best: Vec<Option<(Vec3, f64)>> = vec![None; n];
    for (&i, &(normal, depth)) in owners.iter().zip(&predicted) {
        if best[i].map_or(true, |(_, d)| depth < d) {
            best[i] = Some((normal, depth));
        }
    }
    let mut normals = HdrImage::new(cam.width, cam.height);
    let mut depth = HdrImage::new(cam.width, cam.height);
    let (mut angle_sum, mut depth_sum, mut compared) = (0.0, 0.0, 0usize);
    for i in 0..n {
        match best[i] {
            Some((nrm, d)) => {
                normals.add_sample(i, (nrm + Vec3::splat(1.0)) * 0.5);
                depth.add_sample(i, Vec3::splat((d / diag).max(0.0)));
                if let Some((rn, rt)) = reference[i] {
                    angle_sum += nrm.dot(rn).clamp(-1.0, 1.0).acos().to_degrees();
                    depth_sum += (d - rt).abs() / diag;
                    compared += 1;
                }
            }
            None => {
                normals.add_sample(i, Vec3::ZERO);
                depth.add_sample(i, Vec3::ZERO);
            }
        }
    }
    let mean = |s: f64| if compared > 0 { s / compared as f64 } else { 0.0 };
    Ok(GeometryRender {
        normals,
        depth,
        mean_angle_error_deg: mean(angle_sum),
        mean_depth_error: mean(depth_sum),
        compared,
    })
}
