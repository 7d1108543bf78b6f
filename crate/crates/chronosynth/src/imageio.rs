//! 8-bit RGB PNG rasters.

use std::path::Path;

use chronosynth_core::data::{RasterImage, ValueRange};
use image::{ImageBuffer, Rgb};

use crate::error::{Error, IoContext, Result};

/// Unit-range value to an 8-bit level.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an RGB PNG into a unit-range raster (`k / 255`).
pub fn read_png(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (y, x, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + x as usize) * w + y as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(RasterImage::new(3, h, w, data, ValueRange::Unit)?)
}

/// Writes a three-channel raster, converting signed rasters to unit range first.
pub fn write_png(path: &Path, img: &RasterImage) -> Result<()> {
    let img = if img.range() == ValueRange::Signed { img.to_unit() } else { img.clone() };
    let (c, h, w) = img.dims();
    if c != 3 {
        return Err(Error::Format(format!("PNG output needs 3 channels, got {c}")));
    }
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |y, x| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|ch| quantize(img.get(ch, x, y))))
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// The raster as it reads back after a PNG round trip.
pub fn quantized(img: &RasterImage) -> RasterImage {
    let unit = if img.range() == ValueRange::Signed { img.to_unit() } else { img.clone() };
    let (c, h, w) = unit.dims();
    let data = unit.data().iter().map(|&v| quantize(v) as f32 / 255.0).collect();
    RasterImage::new(c, h, w, data, ValueRange::Unit).expect("quantized values stay in range")
}

/// Raw `f32` dump (`C*H*W` little-endian values) for metric pipelines.
pub fn write_f32(path: &Path, img: &RasterImage) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).at(path)
}
