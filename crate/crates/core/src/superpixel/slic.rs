//! SLIC: k-means in combined CIELAB-colour + spatial space with grid
//! initialization, a fixed iteration count, and connectivity enforcement.

use crate::error::{Error, Result};
use crate::io::RgbImage;

use super::SuperpixelSegmentation;

const ITERATIONS: usize = 10;

/// Segment `image` into roughly `n_superpixels` segments.
///
/// Cluster distance is `sqrt(d_lab^2 + (d_xy / s)^2 * m^2)` with
/// `s = sqrt(width * height / n)` and `m = compactness`. Ties go to the
/// lowest candidate label, so the result is deterministic.
pub fn slic_segment(
    image: &RgbImage,
    n_superpixels: usize,
    compactness: f64,
) -> Result<SuperpixelSegmentation> {
    let (w, h) = (image.width, image.height);
    if w < 2 || h < 2 {
        return Err(Error::Validation(format!(
            "image must be at least 2x2 pixels, got {w}x{h}"
        )));
    }
    if n_superpixels < 2 {
        return Err(Error::Validation(format!(
            "n_superpixels must be at least 2, got {n_superpixels}"
        )));
    }
    if n_superpixels > w * h / 4 {
        return Err(Error::Validation(format!(
            "n_superpixels = {n_superpixels} exceeds width*height/4 = {}",
            w * h / 4
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::Validation("compactness must be positive".into()));
    }

    let lab = rgb_to_lab_image(image);
    let spacing = ((w * h) as f64 / n_superpixels as f64).sqrt();

    // Seed grid: pick counts whose product approximates n while matching the
    // image aspect, so small n still yields the requested segment count.
    let grid_y = ((n_superpixels as f64 * h as f64 / w as f64).sqrt())
        .round()
        .max(1.0) as usize;
    let grid_x = ((n_superpixels as f64 / grid_y as f64).round().max(1.0)) as usize;

    #[derive(Clone)]
    struct Cluster {
        l: f64,
        a: f64,
        b: f64,
        row: f64,
        col: f64,
    }

    let mut clusters = Vec::with_capacity(grid_x * grid_y);
    for gy in 0..grid_y {
        for gx in 0..grid_x {
            let col = (gx as f64 + 0.5) * w as f64 / grid_x as f64;
            let row = (gy as f64 + 0.5) * h as f64 / grid_y as f64;
            let px = (row as usize).min(h - 1) * w + (col as usize).min(w - 1);
            let c = lab[px];
            clusters.push(Cluster {
                l: c[0],
                a: c[1],
                b: c[2],
                row,
                col,
            });
        }
    }

    let m2 = compactness * compactness;
    let inv_s2 = 1.0 / (spacing * spacing);
    let mut labels = vec![u32::MAX; w * h];
    let mut best = vec![f64::INFINITY; w * h];

    for _ in 0..ITERATIONS {
        best.fill(f64::INFINITY);
        labels.fill(u32::MAX);
        for (k, c) in clusters.iter().enumerate() {
            let r0 = ((c.row - spacing).floor().max(0.0)) as usize;
            let r1 = ((c.row + spacing).ceil() as usize).min(h - 1);
            let c0 = ((c.col - spacing).floor().max(0.0)) as usize;
            let c1 = ((c.col + spacing).ceil() as usize).min(w - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let i = row * w + col;
                    let p = lab[i];
                    let dl = p[0] - c.l;
                    let da = p[1] - c.a;
                    let db = p[2] - c.b;
                    let dr = row as f64 - c.row;
                    let dc = col as f64 - c.col;
                    let d = dl * dl + da * da + db * db + (dr * dr + dc * dc) * inv_s2 * m2;
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // Pixels no window reached fall back to a scan over all clusters.
        for i in 0..w * h {
            if labels[i] != u32::MAX {
                continue;
            }
            let (row, col) = (i / w, i % w);
            let p = lab[i];
            let mut best_d = f64::INFINITY;
            for (k, c) in clusters.iter().enumerate() {
                let dl = p[0] - c.l;
                let da = p[1] - c.a;
                let db = p[2] - c.b;
                let dr = row as f64 - c.row;
                let dc = col as f64 - c.col;
                let d = dl * dl + da * da + db * db + (dr * dr + dc * dc) * inv_s2 * m2;
                if d < best_d {
                    best_d = d;
                    labels[i] = k as u32;
                }
            }
        }

        let mut sums = vec![[0.0f64; 5]; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for (i, &l) in labels.iter().enumerate() {
            let k = l as usize;
            let p = lab[i];
            sums[k][0] += p[0];
            sums[k][1] += p[1];
            sums[k][2] += p[2];
            sums[k][3] += (i / w) as f64;
            sums[k][4] += (i % w) as f64;
            counts[k] += 1;
        }
        for (k, c) in clusters.iter_mut().enumerate() {
            if counts[k] == 0 {
                continue;
            }
            let n = counts[k] as f64;
            c.l = sums[k][0] / n;
            c.a = sums[k][1] / n;
            c.b = sums[k][2] / n;
            c.row = sums[k][3] / n;
            c.col = sums[k][4] / n;
        }
    }

    enforce_connectivity(&mut labels, w, h);
    let (labels, n_segments) = compact_labels(labels);

    let mut centroid_sums = vec![(0.0f64, 0.0f64, 0usize); n_segments];
    let mut color_sums = vec![[0.0f64; 3]; n_segments];
    for (i, &l) in labels.iter().enumerate() {
        let k = l as usize;
        let (row, col) = (i / w, i % w);
        centroid_sums[k].0 += row as f64;
        centroid_sums[k].1 += col as f64;
        centroid_sums[k].2 += 1;
        let rgb = image.rgb_at(col, row);
        for ch in 0..3 {
            color_sums[k][ch] += rgb[ch] as f64;
        }
    }
    let centroids = centroid_sums
        .iter()
        .map(|&(r, c, n)| (r / n as f64, c / n as f64))
        .collect();
    let mean_color = color_sums
        .iter()
        .zip(&centroid_sums)
        .map(|(sum, &(_, _, n))| {
            let n = n as f64;
            [sum[0] / n, sum[1] / n, sum[2] / n]
        })
        .collect();

    Ok(SuperpixelSegmentation {
        labels,
        width: w,
        height: h,
        n_segments,
        centroids,
        mean_color,
    })
}

/// Relabel every non-largest connected component of each cluster to its
/// largest adjacent segment. Components are processed in raster order of
/// their first pixel; ties on segment size go to the lowest label.
fn enforce_connectivity(labels: &mut [u32], w: usize, h: usize) {
    let n_px = w * h;
    let mut comp_of = vec![usize::MAX; n_px];
    // (original label, first pixel, member pixels)
    let mut components: Vec<(u32, usize, Vec<usize>)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n_px {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let label = labels[start];
        let id = components.len();
        let mut members = Vec::new();
        comp_of[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            members.push(i);
            let (row, col) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp_of[j] == usize::MAX && labels[j] == label {
                    comp_of[j] = id;
                    stack.push(j);
                }
            };
            if col > 0 {
                visit(i - 1);
            }
            if col + 1 < w {
                visit(i + 1);
            }
            if row > 0 {
                visit(i - w);
            }
            if row + 1 < h {
                visit(i + w);
            }
        }
        components.push((label, start, members));
    }

    // The largest component of each label keeps it; earliest first pixel
    // breaks size ties.
    let mut anchor: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for (id, (label, _, members)) in components.iter().enumerate() {
        match anchor.get(label) {
            Some(&best) if components[best].2.len() >= members.len() => {}
            _ => {
                anchor.insert(*label, id);
            }
        }
    }

    let mut label_counts = vec![0usize; labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)];
    for &l in labels.iter() {
        label_counts[l as usize] += 1;
    }

    for (id, (label, _, members)) in components.iter().enumerate() {
        if anchor[label] == id {
            continue;
        }
        // Orphan: vote among labels adjacent to the component right now.
        let mut adjacent: std::collections::BTreeSet<u32> = std::collections::BTreeSet::new();
        for &i in members {
            let (row, col) = (i / w, i % w);
            let mut look = |j: usize| {
                if comp_of[j] != id {
                    adjacent.insert(labels[j]);
                }
            };
            if col > 0 {
                look(i - 1);
            }
            if col + 1 < w {
                look(i + 1);
            }
            if row > 0 {
                look(i - w);
            }
            if row + 1 < h {
                look(i + w);
            }
        }
        adjacent.remove(label);
        let Some(&target) = adjacent
            .iter()
            .max_by(|a, b| {
                label_counts[**a as usize]
                    .cmp(&label_counts[**b as usize])
                    .then(b.cmp(a)) // prefer the lower label on equal size
            })
        else {
            continue;
        };
        for &i in members {
            labels[i] = target;
        }
        label_counts[*label as usize] -= members.len();
        label_counts[target as usize] += members.len();
    }
}

/// Renumber labels to a dense `0..n_segments` range preserving order.
fn compact_labels(labels: Vec<u32>) -> (Vec<u32>, usize) {
    let distinct: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    let remap: std::collections::BTreeMap<u32, u32> = distinct
        .into_iter()
        .enumerate()
        .map(|(new, old)| (old, new as u32))
        .collect();
    let n = remap.len();
    (labels.into_iter().map(|l| remap[&l]).collect(), n)
}

/// sRGB (8-bit) to CIELAB under D65.
pub(crate) fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn linearize(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let r = linearize(rgb[0]);
    let g = linearize(rgb[1]);
    let b = linearize(rgb[2]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let fx = f(x / 0.95047);
    let fy = f(y / 1.0);
    let fz = f(z / 1.08883);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn rgb_to_lab_image(image: &RgbImage) -> Vec<[f64; 3]> {
    (0..image.width * image.height)
        .map(|i| srgb_to_lab(image.rgb_at(i % image.width, i / image.width)))
        .collect()
}
