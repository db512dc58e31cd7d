//! Raw adjacency between superpixels and the angle-based reduction to a
//! four-neighbor grid graph.

use std::collections::BTreeSet;

use super::SuperpixelSegmentation;

/// Compass slot of a four-neighbor node, measured from segment centroid to
/// candidate centroid with 0 degrees along +x (image column axis) and
/// angles growing counterclockwise (image up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Right = 0,
    Up = 1,
    Left = 2,
    Down = 3,
}

const SLOT_ANGLES: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// Grid-structured graph over superpixels: at most one neighbor per compass
/// slot, edge set symmetrized over both endpoints' slots.
#[derive(Debug, Clone, PartialEq)]
pub struct FourNeighborGraph {
    pub n_nodes: usize,
    slots: Vec<[Option<u32>; 4]>,
    /// Unordered edges stored once as `(min, max)`, sorted.
    pub edges: Vec<(u32, u32)>,
}

impl FourNeighborGraph {
    /// Build a graph from an explicit edge list, leaving the compass slots
    /// empty. Useful for synthetic systems and tests; energy assembly only
    /// consumes the edge set.
    pub fn from_edges(n_nodes: usize, edges: &[(u32, u32)]) -> FourNeighborGraph {
        let set: BTreeSet<(u32, u32)> = edges
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        FourNeighborGraph {
            n_nodes,
            slots: vec![[None; 4]; n_nodes],
            edges: set.into_iter().collect(),
        }
    }

    pub fn slot(&self, node: usize, dir: Direction) -> Option<u32> {
        self.slots[node][dir as usize]
    }

    pub fn filled_slots(&self, node: usize) -> usize {
        self.slots[node].iter().filter(|s| s.is_some()).count()
    }
}

/// Nodes `a` and `b` are adjacent iff some pixel of `a` touches a pixel of
/// `b` horizontally or vertically.
pub fn build_raw_adjacency(seg: &SuperpixelSegmentation) -> Vec<BTreeSet<u32>> {
    let (w, h) = (seg.width, seg.height);
    let mut adjacency = vec![BTreeSet::new(); seg.n_segments];
    let note = |a: u32, b: u32, adj: &mut Vec<BTreeSet<u32>>| {
        if a != b {
            adj[a as usize].insert(b);
            adj[b as usize].insert(a);
        }
    };
    for row in 0..h {
        for col in 0..w {
            let l = seg.labels[row * w + col];
            if col + 1 < w {
                note(l, seg.labels[row * w + col + 1], &mut adjacency);
            }
            if row + 1 < h {
                note(l, seg.labels[(row + 1) * w + col], &mut adjacency);
            }
        }
    }
    adjacency
}

fn wrap_degrees(mut d: f64) -> f64 {
    while d > 180.0 {
        d -= 360.0;
    }
    while d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Angle in degrees from node `i`'s centroid to node `j`'s, y pointing up.
fn centroid_angle(seg: &SuperpixelSegmentation, i: usize, j: usize) -> f64 {
    let (ri, ci) = seg.centroids[i];
    let (rj, cj) = seg.centroids[j];
    (ri - rj).atan2(cj - ci).to_degrees()
}

/// Per node, fill the four compass slots with the raw neighbors whose
/// centroid angles are closest to 0, 90, 180 and 270 degrees. Assignments
/// are made greedily in increasing order of angular error; each candidate
/// fills at most one slot per node, and ties prefer the lower candidate id,
/// then the lower slot index.
pub fn select_four_neighbors(
    seg: &SuperpixelSegmentation,
    adjacency: &[BTreeSet<u32>],
) -> FourNeighborGraph {
    let n = seg.n_segments;
    let mut slots = vec![[None; 4]; n];
    let mut edge_set: BTreeSet<(u32, u32)> = BTreeSet::new();
    for node in 0..n {
        let mut scored: Vec<(f64, u32, usize)> = Vec::new();
        for &cand in &adjacency[node] {
            let theta = centroid_angle(seg, node, cand as usize);
            for (slot, &target) in SLOT_ANGLES.iter().enumerate() {
                scored.push((wrap_degrees(theta - target).abs(), cand, slot));
            }
        }
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut used: BTreeSet<u32> = BTreeSet::new();
        for (_, cand, slot) in scored {
            if slots[node][slot].is_some() || used.contains(&cand) {
                continue;
            }
            slots[node][slot] = Some(cand);
            used.insert(cand);
            let pair = (node.min(cand as usize) as u32, node.max(cand as usize) as u32);
            edge_set.insert(pair);
        }
    }
    FourNeighborGraph {
        n_nodes: n,
        slots,
        edges: edge_set.into_iter().collect(),
    }
}
