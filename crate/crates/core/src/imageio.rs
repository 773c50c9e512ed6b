//! Conversions between tensors and 8-bit raster images.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decodes any supported raster file into `H×W×3` values in `[0, 1]`
/// (byte / 255). Grayscale sources are replicated across channels.
pub fn read_rgb<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    if !path.exists() {
        return Err(Error::Data(format!("image not found: {}", path.display())));
    }
    let img = image::open(path)?;
    Ok(from_dynamic(&img))
}

pub fn from_dynamic<S: Scalar>(img: &DynamicImage) -> Tensor<S> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let scale = S::of(255.0);
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| S::of(b as f64) / scale)
        .collect();
    Tensor::new([h as usize, w as usize, 3], data).expect("decoded buffer matches dimensions")
}

/// Quantizes `H×W×C` (C = 1 or 3) values, clamped to `[0, 1]`, to 8 bits.
pub fn to_bytes<S: Scalar>(image: &Tensor<S>) -> Result<(u32, u32, usize, Vec<u8>)> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] if c == 1 || c == 3 => (h, w, c),
        _ => {
            return Err(Error::invalid(format!(
                "cannot encode image of shape {:?}",
                image.shape()
            )))
        }
    };
    let bytes = image
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((w as u32, h as u32, c, bytes))
}

pub fn write_png<S: Scalar>(image: &Tensor<S>, path: &Path) -> Result<()> {
    let (w, h, c, bytes) = to_bytes(image)?;
    if c == 1 {
        GrayImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path)?;
    } else {
        RgbImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path)?;
    }
    Ok(())
}
