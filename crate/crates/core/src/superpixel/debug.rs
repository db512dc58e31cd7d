//! Debug renderings for the `segment` CLI command: label maps and a
//! centroid/edge overlay.

use crate::error::Result;
use crate::io::{write_rgb_png, RgbImage};

use super::{FourNeighborGraph, SuperpixelSegmentation};

/// Indexed (paletted) PNG of the label map. Labels wrap modulo the palette
/// size, so this is a visual aid; see [`render_label_png16`] for exact ids.
pub fn render_label_png(seg: &SuperpixelSegmentation) -> Result<Vec<u8>> {
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        // Spread hues with a multiplicative hash so neighbors contrast.
        let h = i.wrapping_mul(2654435761);
        palette.extend_from_slice(&[
            (h >> 16) as u8 | 0x20,
            (h >> 8) as u8 | 0x20,
            h as u8 | 0x20,
        ]);
    }
    let indices: Vec<u8> = seg.labels.iter().map(|&l| (l % 256) as u8).collect();

    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, seg.width as u32, seg.height as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(palette);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&indices).map_err(png_err)?;
    }
    Ok(out)
}

/// 16-bit grayscale PNG storing the exact label id per pixel (labels above
/// u16::MAX saturate, far beyond any practical segment count).
pub fn render_label_png16(seg: &SuperpixelSegmentation) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(seg.labels.len() * 2);
    for &l in &seg.labels {
        data.extend_from_slice(&(l.min(u16::MAX as u32) as u16).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, seg.width as u32, seg.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
    }
    Ok(out)
}

fn png_err(e: png::EncodingError) -> crate::error::Error {
    crate::error::Error::Format(format!("png encoding: {e}"))
}

/// The input image with segment boundaries, centroid dots, and (optionally)
/// the selected four-neighbor edges drawn on top.
pub fn render_overlay_png(
    image: &RgbImage,
    seg: &SuperpixelSegmentation,
    graph: Option<&FourNeighborGraph>,
) -> Result<Vec<u8>> {
    let mut canvas = image.clone();
    let (w, h) = (seg.width, seg.height);
    for row in 0..h {
        for col in 0..w {
            let l = seg.label_at(col, row);
            let boundary = (col + 1 < w && seg.label_at(col + 1, row) != l)
                || (row + 1 < h && seg.label_at(col, row + 1) != l);
            if boundary {
                canvas.set_rgb(col, row, [255, 60, 60]);
            }
        }
    }
    if let Some(graph) = graph {
        for &(a, b) in &graph.edges {
            let (r0, c0) = seg.centroids[a as usize];
            let (r1, c1) = seg.centroids[b as usize];
            draw_line(&mut canvas, c0, r0, c1, r1, [40, 200, 40]);
        }
    }
    for &(row, col) in &seg.centroids {
        let (r, c) = (row.round() as isize, col.round() as isize);
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && (rr as usize) < h && cc >= 0 && (cc as usize) < w {
                    canvas.set_rgb(cc as usize, rr as usize, [255, 230, 40]);
                }
            }
        }
    }
    write_rgb_png(&canvas)
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as isize;
        let y = (y0 + t * (y1 - y0)).round() as isize;
        if x >= 0 && (x as usize) < img.width && y >= 0 && (y as usize) < img.height {
            img.set_rgb(x as usize, y as usize, rgb);
        }
    }
}
