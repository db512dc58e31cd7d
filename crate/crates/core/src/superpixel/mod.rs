//! Superpixel segmentation and the four-neighbor grid graph.
//!
//! SLIC clusters pixels in joint CIELAB + position space on a regular seed
//! grid, connectivity enforcement relabels orphan components, and the CRF
//! graph picks, per segment, the raw neighbors closest in angle to the four
//! compass directions.

mod debug;
mod graph;
mod slic;

pub use debug::{render_label_png, render_label_png16, render_overlay_png};
pub use graph::{build_raw_adjacency, select_four_neighbors, Direction, FourNeighborGraph};
pub use slic::slic_segment;

/// A superpixel partition of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelSegmentation {
    /// Row-major per-pixel segment id in `[0, n_segments)`.
    pub labels: Vec<u32>,
    pub width: usize,
    pub height: usize,
    pub n_segments: usize,
    /// Per-segment mean pixel coordinate as `(row, col)`.
    pub centroids: Vec<(f64, f64)>,
    /// Per-segment mean RGB in 8-bit units.
    pub mean_color: Vec<[f64; 3]>,
}

impl SuperpixelSegmentation {
    #[inline]
    pub fn label_at(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixels owned by each segment.
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_segments];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}
