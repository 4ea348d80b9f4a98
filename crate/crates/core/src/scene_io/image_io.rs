use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{tonemap, HdrImage};
use crate::light::{EnvironmentMap, Rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// Tonemapped 8-bit sRGB.
    Png8,
    /// Raw linear 32-bit floats.
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(ImageFormat::Png8),
            "pfm" => Some(ImageFormat::Pfm),
            _ => None,
        }
    }
}

pub fn save_image(img: &HdrImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    match format {
        ImageFormat::Png8 => save_png(img, path),
        ImageFormat::Pfm => save_pfm(img, path),
    }
}

pub fn save_png(img: &HdrImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = tonemap(img);
    image::save_buffer(path.as_ref(), &bytes, img.width as u32, img.height as u32, image::ColorType::Rgb8)?;
    Ok(())
}

/// Color PFM, little-endian, bottom row first.
pub fn save_pfm(img: &HdrImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut data = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    data.reserve(img.len() * 12);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let p = img.pixel(x, y);
            for c in [p.x, p.y, p.z] {
                data.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&data).map_err(|e| Error::io(path, e))
}

fn header_token<'a>(data: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < data.len() && data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos]).ok().filter(|s| !s.is_empty())
}

/// Reads color (`PF`) or grayscale (`Pf`) PFM in either byte order.
pub fn load_pfm(path: impl AsRef<Path>) -> Result<HdrImage> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    let mut pos = 0;
    let channels = match header_token(&data, &mut pos) {
        Some("PF") => 3,
        Some("Pf") => 1,
        _ => return Err(bad("not a PFM file")),
    };
    let mut num = |what: &str| -> Result<f64> {
        header_token(&data, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let scale = num("scale")?;
    if width < 1.0 || height < 1.0 || width.fract() != 0.0 || height.fract() != 0.0 || scale == 0.0 {
        return Err(bad("bad PFM header"));
    }
    let (width, height) = (width as usize, height as usize);
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let count = width * height * channels;
    if data.len() < pos + 4 * count {
        return Err(bad("truncated raster"));
    }
    let little = scale < 0.0;
    let floats: Vec<f32> = data[pos..pos + 4 * count]
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut pixels = vec![Rgb::ZERO; width * height];
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let i = (row * width + x) * channels;
            pixels[y * width + x] = if channels == 3 {
                Rgb::new(floats[i] as f64, floats[i + 1] as f64, floats[i + 2] as f64)
            } else {
                Rgb::splat(floats[i] as f64)
            };
        }
    }
    HdrImage::from_pixels(width, height, pixels)
}

/// PFM as linear radiance, or PNG decoded back through the inverse gamma.
pub fn load_image(path: impl AsRef<Path>) -> Result<HdrImage> {
    let path = path.as_ref();
    match ImageFormat::from_path(path) {
        Some(ImageFormat::Pfm) => load_pfm(path),
        Some(ImageFormat::Png8) => {
            let img = image::open(path)?.to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let lin = |b: u8| (b as f64 / 255.0).powf(2.2);
            let pixels = img.pixels().map(|p| Rgb::new(lin(p[0]), lin(p[1]), lin(p[2]))).collect();
            HdrImage::from_pixels(w, h, pixels)
        }
        None => Err(Error::InvalidArgument(format!(
            "unsupported image extension: {}",
            path.display()
        ))),
    }
}

/// Lat-long environment map stored as PFM.
pub fn load_environment(path: impl AsRef<Path>) -> Result<EnvironmentMap> {
    let img = load_pfm(path)?;
    EnvironmentMap::new(img.width, img.height, img.pixels())
}
