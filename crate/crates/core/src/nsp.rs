//! Nested-scatter-plot images: 2-D density of one channel against the other,
//! three densities stacked as RGB.

use std::path::Path;

use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NspConfig {
    pub grid: usize,
    /// Values are clipped to `[-clip, clip]` before binning.
    pub clip: f64,
    pub intensity: Intensity,
}

impl Default for NspConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            clip: 3.0,
            intensity: Intensity::Log,
        }
    }
}

impl NspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(invalid(format!("nsp grid {} < 8", self.grid)));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(invalid(format!("nsp clip {} must be positive", self.clip)));
        }
        Ok(())
    }

    /// Bin of `v` along one axis after clipping.
    pub fn bin(&self, v: f64) -> usize {
        let c = self.clip;
        let u = (v.clamp(-c, c) + c) / (2.0 * c);
        ((u * self.grid as f64).floor() as usize).min(self.grid - 1)
    }
}

/// Raw counts, row-major with the vertical-channel bin as row.
pub fn bin_counts(horizontal: &[f64], vertical: &[f64], cfg: &NspConfig) -> Vec<u64> {
    let g = cfg.grid;
    let mut counts = vec![0u64; g * g];
    for (&x, &y) in horizontal.iter().zip(vertical) {
        counts[cfg.bin(y) * g + cfg.bin(x)] += 1;
    }
    counts
}

/// Normalised `grid × grid` density of one two-channel feature.
pub fn to_nested_clusters(horizontal: &[f64], vertical: &[f64], cfg: &NspConfig) -> Vec<f64> {
    let counts = bin_counts(horizontal, vertical, cfg);
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; counts.len()];
    }
    match cfg.intensity {
        Intensity::Linear => counts.iter().map(|&c| c as f64 / max as f64).collect(),
        Intensity::Log => {
            let denom = (max as f64).ln_1p();
            counts.iter().map(|&c| (c as f64).ln_1p() / denom).collect()
        }
    }
}

/// Three stacked densities: red, green, blue.
#[derive(Clone, Debug, PartialEq)]
pub struct NspImage {
    pub grid: usize,
    pub channels: [Vec<f64>; 3],
}

impl NspImage {
    /// Channel-major `[3, grid, grid]` values.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels.iter().flatten().copied()
    }

    pub fn pixel(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.channels[channel][y * self.grid + x]
    }
}

pub fn merge_rgb(d3: Vec<f64>, d4: Vec<f64>, d5: Vec<f64>) -> Result<NspImage> {
    let n = d3.len();
    if d4.len() != n || d5.len() != n {
        return Err(invalid(format!(
            "merge_rgb: density sizes {}, {}, {} differ",
            n,
            d4.len(),
            d5.len()
        )));
    }
    let grid = (n as f64).sqrt().round() as usize;
    if grid * grid != n {
        return Err(invalid(format!("merge_rgb: {n} values is not a square grid")));
    }
    Ok(NspImage {
        grid,
        channels: [d3, d4, d5],
    })
}

/// Pixel value of an intensity in `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// 8-bit RGB raster with bin row 0 at the bottom.
pub fn to_rgb(image: &NspImage) -> RgbImage {
    let g = image.grid as u32;
    RgbImage::from_fn(g, g, |col, row| {
        let (x, y) = (col as usize, (g - 1 - row) as usize);
        Rgb([0, 1, 2].map(|c| quantize(image.pixel(c, x, y))))
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(buf)
}

pub fn render_png(image: &NspImage, path: &Path) -> Result<()> {
    let bytes = encode_png(&to_rgb(image))?;
    std::fs::write(path, bytes).map_err(io_err(path))
}
