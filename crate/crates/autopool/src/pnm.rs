//! Minimal binary PGM (P5) / PPM (P6) output plus montage helpers for
//! cluster visualization.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit image, grayscale (1 channel) or RGB (3 channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn gray(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: 1,
            pixels: vec![0; width * height],
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => {
                return Err(Error::InvalidConfig(format!(
                    "{c} channels not representable as PGM/PPM"
                )))
            }
        };
        let mut out = Vec::with_capacity(self.pixels.len() + 32);
        out.extend_from_slice(format!("{magic}\n{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.pixels);
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Map an arbitrary real tile to 8-bit gray by min/max normalization.
pub fn normalize_tile(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect()
}

/// Heatmap for pooling weights: 0 renders mid-gray, the row maximum renders
/// white. `values` must be non-negative.
pub fn heatmap_tile(values: &[f64], max: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                128u8.saturating_add(((v / max) * 127.0).round() as u8)
            } else {
                128
            }
        })
        .collect()
}

/// Lay out equally sized grayscale tiles left to right with a 1px dark
/// separator; wraps after `per_row` tiles.
pub fn montage(
    tiles: &[Vec<u8>],
    tile_w: usize,
    tile_h: usize,
    per_row: usize,
) -> Result<RasterImage> {
    if tiles.is_empty() || per_row == 0 {
        return Err(Error::EmptyInput);
    }
    for t in tiles {
        if t.len() != tile_w * tile_h {
            return Err(Error::DimensionMismatch {
                expected: tile_w * tile_h,
                got: t.len(),
            });
        }
    }
    let cols = per_row.min(tiles.len());
    let rows = tiles.len().div_ceil(per_row);
    let width = cols * (tile_w + 1) + 1;
    let height = rows * (tile_h + 1) + 1;
    let mut img = RasterImage::gray(width, height);
    img.pixels.fill(16);
    for (i, tile) in tiles.iter().enumerate() {
        let tr = i / per_row;
        let tc = i % per_row;
        let y0 = tr * (tile_h + 1) + 1;
        let x0 = tc * (tile_w + 1) + 1;
        for r in 0..tile_h {
            let dst = (y0 + r) * width + x0;
            img.pixels[dst..dst + tile_w].copy_from_slice(&tile[r * tile_w..(r + 1) * tile_w]);
        }
    }
    Ok(img)
}
