//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `NIF1`, `u32` version, the configuration,
//! `u64` object count, then tensors. Each tensor is a `u32` rank, `u64`
//! dimensions, and `f32` values. Tensor order: per object the outer position
//! and direction grids, then the inner position, direction and distance
//! grids; then every outer network's layers (weights, bias), then every
//! inner network's.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::nif::{Head, InnerConfig, NifConfig, NifModel, OuterConfig, Sharing};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NIF1";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, shape: &[usize], data: &[f32]) {
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        for &v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Vec<f32>> {
        let rank = self.u32()? as usize;
        let mut got = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            got.push(self.usize()?);
        }
        if got != shape {
            return Err(Error::Checkpoint(format!("{what}: shape {got:?}, expected {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

fn write_config(w: &mut Writer, c: &NifConfig) {
    let o = &c.outer;
    for v in [o.hidden_layers, o.hidden_width, o.grid_resolution, o.latent_dim, o.batch_size] {
        w.u64(v as u64);
    }
    let i = &c.inner;
    for v in [
        i.hidden_layers,
        i.hidden_width,
        i.grid_resolution,
        i.latent_dim,
        i.dist_resolution,
        i.dist_latent_dim,
        i.batch_size,
    ] {
        w.u64(v as u64);
    }
    for v in [c.learning_rate, c.beta1, c.beta2, c.adam_epsilon] {
        w.f64(v);
    }
    w.u32(match c.sharing {
        Sharing::Shared => 0,
        Sharing::PerObject => 1,
    });
    w.u32(match c.head {
        Head::Occlusion => 0,
        Head::Geometry => 1,
    });
    w.u64(c.epochs as u64);
    w.u64(c.seed);
}

fn read_config(r: &mut Reader) -> Result<NifConfig> {
    let outer = OuterConfig {
        hidden_layers: r.usize()?,
        hidden_width: r.usize()?,
        grid_resolution: r.usize()?,
        latent_dim: r.usize()?,
        batch_size: r.usize()?,
    };
    let inner = InnerConfig {
        hidden_layers: r.usize()?,
        hidden_width: r.usize()?,
        grid_resolution: r.usize()?,
        latent_dim: r.usize()?,
        dist_resolution: r.usize()?,
        dist_latent_dim: r.usize()?,
        batch_size: r.usize()?,
    };
    let (learning_rate, beta1, beta2, adam_epsilon) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let sharing = match r.u32()? {
        0 => Sharing::Shared,
        1 => Sharing::PerObject,
        v => return Err(Error::Checkpoint(format!("unknown sharing mode {v}"))),
    };
    let head = match r.u32()? {
        0 => Head::Occlusion,
        1 => Head::Geometry,
        v => return Err(Error::Checkpoint(format!("unknown head {v}"))),
    };
    let epochs = r.usize()?;
    let seed = r.u64()?;
    let c = NifConfig {
        outer,
        inner,
        learning_rate,
        beta1,
        beta2,
        adam_epsilon,
        sharing,
        head,
        epochs,
        seed,
    };
    c.validate().map_err(|e| Error::Checkpoint(format!("invalid configuration: {e}")))?;
    Ok(c)
}

fn write_mlp(w: &mut Writer, m: &Mlp<f32>) {
    for l in m.layers() {
        w.tensor(&[l.out_dim, l.in_dim], l.weights());
        w.tensor(&[l.out_dim], l.bias());
    }
}

fn read_mlp(r: &mut Reader, m: &mut Mlp<f32>, what: &str) -> Result<()> {
    for li in 0..m.layers().len() {
        let (o, i) = (m.layers()[li].out_dim, m.layers()[li].in_dim);
        let weights = r.tensor(&[o, i], what)?;
        let bias = r.tensor(&[o], what)?;
        m.layer_mut(li).set_params(&weights, &bias)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &NifModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let c = model.config();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    write_config(&mut w, c);
    w.u64(model.object_count() as u64);
    let (ro, no) = (c.outer.grid_resolution, c.outer.latent_dim);
    let (ri, ni) = (c.inner.grid_resolution, c.inner.latent_dim);
    let (rd, nd) = (c.inner.dist_resolution, c.inner.dist_latent_dim);
    for (og, ig) in model.outer_grids.iter().zip(&model.inner_grids) {
        w.tensor(&[ro, ro, no], og.pos.latents());
        w.tensor(&[ro, ro, no], og.dir.latents());
        w.tensor(&[ri, ri, ni], ig.pos.latents());
        w.tensor(&[ri, ri, ni], ig.dir.latents());
        w.tensor(&[rd, nd], ig.dist.latents());
    }
    for m in model.outer_mlps.iter().chain(&model.inner_mlps) {
        write_mlp(&mut w, m);
    }
    fs::write(path, w.0).map_err(|e| Error::io(path, e))
}

fn read_header(data: &[u8]) -> Result<(Reader<'_>, NifConfig, usize)> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let objects = r.usize()?;
    Ok((r, config, objects))
}

fn read_payload(r: &mut Reader, model: &mut NifModel<f32>) -> Result<()> {
    let c = *model.config();
    let (ro, no) = (c.outer.grid_resolution, c.outer.latent_dim);
    let (ri, ni) = (c.inner.grid_resolution, c.inner.latent_dim);
    let (rd, nd) = (c.inner.dist_resolution, c.inner.dist_latent_dim);
    for obj in 0..model.object_count() {
        let og = &mut model.outer_grids[obj];
        og.pos.latents_mut().copy_from_slice(&r.tensor(&[ro, ro, no], "outer position grid")?);
        og.dir.latents_mut().copy_from_slice(&r.tensor(&[ro, ro, no], "outer direction grid")?);
        let ig = &mut model.inner_grids[obj];
        ig.pos.latents_mut().copy_from_slice(&r.tensor(&[ri, ri, ni], "inner position grid")?);
        ig.dir.latents_mut().copy_from_slice(&r.tensor(&[ri, ri, ni], "inner direction grid")?);
        ig.dist.latents_mut().copy_from_slice(&r.tensor(&[rd, nd], "inner distance grid")?);
    }
    for m in model.outer_mlps.iter_mut() {
        read_mlp(r, m, "outer network")?;
    }
    for m in model.inner_mlps.iter_mut() {
        read_mlp(r, m, "inner network")?;
    }
    if r.pos != r.data.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NifModel<f32>> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, config, objects) = read_header(&data)?;
    let mut model = NifModel::new(config, objects)?;
    read_payload(&mut r, &mut model)?;
    Ok(model)
}

/// Loads weights into an existing model whose configuration and object
/// count must match the file.
pub fn load_checkpoint_into(model: &mut NifModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, config, objects) = read_header(&data)?;
    if config != *model.config() || objects != model.object_count() {
        return Err(Error::Checkpoint("configuration does not match the model".into()));
    }
    let mut fresh = model.clone();
    read_payload(&mut r, &mut fresh)?;
    *model = fresh;
    Ok(())
}
