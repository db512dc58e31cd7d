//! In-memory raster types and their PNG codecs.
//!
//! Depth images follow the 16-bit convention of the KITTI depth-completion
//! benchmark: stored value `v` encodes `v / 256.0` meters, `v = 0` marks an
//! invalid pixel.

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};

/// 8-bit-per-channel RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` bytes.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> RgbImage {
        RgbImage {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn rgb_at(&self, col: usize, row: usize) -> [u8; 3] {
        let base = (row * self.width + col) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let base = (row * self.width + col) * 3;
        self.pixels[base..base + 3].copy_from_slice(&rgb);
    }
}

/// Per-pixel metric depth with a validity mask. Invalid pixels carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> DepthImage {
        DepthImage {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, depth: f64) {
        let i = row * self.width + col;
        self.depth[i] = depth;
        self.valid[i] = depth > 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Decode any PNG/areas the `image` crate supports into 8-bit RGB.
pub fn read_rgb_image(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    Ok(RgbImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

pub fn write_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::Format("pixel buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decode a 16-bit single-channel PNG into metric depth.
pub fn read_depth_png(bytes: &[u8]) -> Result<DepthImage> {
    let img = image::load_from_memory(bytes)?;
    let gray16 = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::Format(format!(
                "depth PNG must be 16-bit single-channel, got {:?}",
                other.color()
            )))
        }
    };
    let width = gray16.width() as usize;
    let height = gray16.height() as usize;
    let mut out = DepthImage::new(width, height);
    for (i, Luma([v])) in gray16.pixels().enumerate() {
        if *v > 0 {
            out.depth[i] = *v as f64 / 256.0;
            out.valid[i] = true;
        }
    }
    Ok(out)
}

/// Encode metric depth as a 16-bit single-channel PNG. Depths are quantized
/// to 1/256 m; invalid pixels store 0. Values that would quantize past
/// u16::MAX saturate.
pub fn write_depth_png(depth: &DepthImage) -> Result<Vec<u8>> {
    if depth.depth.len() != depth.width * depth.height {
        return Err(Error::Format("depth buffer does not match dimensions".into()));
    }
    let samples: Vec<u16> = depth
        .depth
        .iter()
        .zip(&depth.valid)
        .map(|(&d, &ok)| {
            if !ok || d <= 0.0 {
                0u16
            } else {
                (d * 256.0).round().min(u16::MAX as f64) as u16
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, samples)
            .ok_or_else(|| Error::Format("depth buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Encode an 8-bit grayscale PNG from raw bytes (used for uncertainty maps).
pub fn write_gray8_png(width: usize, height: usize, samples: &[u8]) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, samples.to_vec())
            .ok_or_else(|| Error::Format("gray buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
