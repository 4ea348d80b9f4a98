//! HDR accumulation buffer, tonemapping, and image comparison.

use crate::error::{Error, Result};
use crate::light::Rgb;

const GAMMA: f64 = 1.0 / 2.2;

/// Progressive radiance accumulator. Pixel `(x, y)` has `y = 0` at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage {
    pub width: usize,
    pub height: usize,
    sums: Vec<[f64; 3]>,
    counts: Vec<u32>,
}

impl HdrImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sums: vec![[0.0; 3]; width * height],
            counts: vec![0; width * height],
        }
    }

    /// Image whose every pixel holds exactly one sample equal to `pixels[i]`.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            sums: pixels.iter().map(|p| p.to_array()).collect(),
            counts: vec![1; width * height],
        })
    }

    pub fn add_sample(&mut self, index: usize, value: Rgb) {
        let s = &mut self.sums[index];
        s[0] += value.x;
        s[1] += value.y;
        s[2] += value.z;
        self.counts[index] += 1;
    }

    pub fn sample_count(&self, index: usize) -> u32 {
        self.counts[index]
    }

    /// Mean radiance of a pixel; black when no samples have been added.
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixel_at(y * self.width + x)
    }

    pub fn pixel_at(&self, index: usize) -> Rgb {
        let n = self.counts[index];
        if n == 0 {
            return Rgb::ZERO;
        }
        let s = self.sums[index];
        Rgb::new(s[0], s[1], s[2]) / n as f64
    }

    pub fn pixels(&self) -> Vec<Rgb> {
        (0..self.width * self.height).map(|i| self.pixel_at(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear value to an 8-bit gamma-encoded byte.
pub fn tonemap_channel(c: f64) -> u8 {
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
    (255.0 * c.powf(GAMMA)).round() as u8
}

/// Interleaved 8-bit RGB, top row first.
pub fn tonemap(img: &HdrImage) -> Vec<u8> {
    img.pixels()
        .into_iter()
        .flat_map(|p| [tonemap_channel(p.x), tonemap_channel(p.y), tonemap_channel(p.z)])
        .collect()
}

/// PSNR of two 8-bit buffers; `f64::INFINITY` when they are identical.
pub fn psnr_bytes(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let se: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR in dB over the tonemapped 8-bit encodings of both images.
pub fn psnr(a: &HdrImage, b: &HdrImage) -> Result<f64> {
    check_dims(a, b)?;
    psnr_bytes(&tonemap(a), &tonemap(b))
}

/// Per-channel `|a - b| * k` clamped to `[0, 1]`, as linear radiance.
pub fn error_image(a: &HdrImage, b: &HdrImage, k: f64) -> Result<HdrImage> {
    check_dims(a, b)?;
    let pixels = a
        .pixels()
        .into_iter()
        .zip(b.pixels())
        .map(|(p, q)| {
            let d = (p - q).abs() * k;
            Rgb::new(d.x.clamp(0.0, 1.0), d.y.clamp(0.0, 1.0), d.z.clamp(0.0, 1.0))
        })
        .collect();
    HdrImage::from_pixels(a.width, a.height, pixels)
}

fn check_dims(a: &HdrImage, b: &HdrImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}
