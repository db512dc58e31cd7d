//! Nearest-neighbor depth interpolation, the reference baseline the CRF
//! pipeline is measured against on synthetic scenes.

use rstar::{primitives::GeomWithData, RTree};

use crate::error::{Error, Result};
use crate::geometry::ProjectedPoint;
use crate::io::DepthImage;

/// Fill every pixel with the depth of the nearest projected sample
/// (Euclidean pixel distance; equidistant samples resolve to the lowest
/// source index for determinism).
pub fn nearest_neighbor_fill(
    points: &[ProjectedPoint],
    width: usize,
    height: usize,
) -> Result<DepthImage> {
    if points.is_empty() {
        return Err(Error::Validation(
            "nearest-neighbor fill needs at least one sample".into(),
        ));
    }
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.u, p.v], i))
            .collect(),
    );
    let mut out = DepthImage::new(width, height);
    for row in 0..height {
        for col in 0..width {
            let q = [col as f64, row as f64];
            let mut iter = tree.nearest_neighbor_iter_with_distance_2(&q);
            let (first, d2) = iter.next().expect("tree is non-empty");
            let mut best = first.data;
            // Resolve exact distance ties deterministically.
            for (cand, cd2) in iter {
                if cd2 > d2 {
                    break;
                }
                best = best.min(cand.data);
            }
            out.set(col, row, points[best].depth);
        }
    }
    Ok(out)
}
