//! PNG and landmark-sidecar I/O.
//!
//! Images are stored as 8-bit grayscale or RGB PNG; intensities map linearly
//! between `[0, 255]` and `[0, 1]`. Landmarks live in one JSON file per image
//! with `left_eye` / `right_eye` keys, each `[row, col]` in pixel units.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array3;

use super::{DomainTag, Image, ImagingError, Landmarks};

/// Reads an 8-bit PNG, tagging the result with the given domain. Grayscale
/// sources become single-channel images; everything else is read as RGB.
pub fn read_png(path: &Path, domain: DomainTag) -> Result<Image, ImagingError> {
    let dynimg = image::open(path).map_err(|e| ImagingError::Codec(e.to_string()))?;
    let img = match dynimg {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let mut pixels = Array3::zeros((1, h as usize, w as usize));
            for (x, y, p) in g.enumerate_pixels() {
                pixels[[0, y as usize, x as usize]] = p.0[0] as f64 / 255.0;
            }
            pixels
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let mut pixels = Array3::zeros((3, h as usize, w as usize));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    pixels[[c, y as usize, x as usize]] = p.0[c] as f64 / 255.0;
                }
            }
            pixels
        }
    };
    Image::new(img, domain)
}

/// Writes an image as 8-bit PNG (grayscale for one channel, RGB for three).
pub fn write_png(image: &Image, path: &Path) -> Result<(), ImagingError> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = if c == 1 {
        let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([quant(image.pixels()[[0, y as usize, x as usize]])])
        });
        buf.save(path)
    } else {
        let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Rgb([
                quant(image.pixels()[[0, y as usize, x as usize]]),
                quant(image.pixels()[[1, y as usize, x as usize]]),
                quant(image.pixels()[[2, y as usize, x as usize]]),
            ])
        });
        buf.save(path)
    };
    result.map_err(|e| ImagingError::Codec(e.to_string()))
}

/// Reads a landmark sidecar file.
pub fn read_landmarks(path: &Path) -> Result<Landmarks, ImagingError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ImagingError::LandmarkFormat(e.to_string()))
}
