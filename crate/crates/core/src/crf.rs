//! The superpixel-level conditional random field.
//!
//! Projected LiDAR observations are aggregated per superpixel, four
//! potential families (unary data term plus colour, surface-normal, and 3D
//! proximity pairwise terms) are encoded as sparse matrices, and the
//! quadratic energy
//!
//! ```text
//! E(x) = alpha ||W (x - z)||^2 + beta ||S x||^2 + gamma ||P x||^2 + delta ||D x||^2
//! ```
//!
//! is minimized by solving the normal equations `A x = b` with
//! `A = alpha W'W + beta S'S + gamma P'P + delta D'D` and `b = alpha W'W z`.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::ProjectedPoint;
use crate::io::{DepthImage, RgbImage, RunConfig};
use crate::solver::{self, SolveOptions, SparseMatrix};
use crate::superpixel::{FourNeighborGraph, SuperpixelSegmentation};

/// Per-superpixel aggregates of the projected LiDAR points.
#[derive(Debug, Clone)]
pub struct SuperpixelObservations {
    pub n: usize,
    /// Median depth of member points, absent when no point projected in.
    pub observed_depth: Vec<Option<f64>>,
    pub point_count: Vec<usize>,
    /// Mean 3D location of member points, camera frame, meters.
    pub location: Vec<Option<Vector3<f64>>>,
    /// Normalized mean of member surface normals.
    pub mean_normal: Vec<Option<Vector3<f64>>>,
    /// Mean RGB of member pixels, 8-bit units.
    pub mean_color: Vec<[f64; 3]>,
}

impl SuperpixelObservations {
    pub fn observed_count(&self) -> usize {
        self.point_count.iter().filter(|&&c| c >= 1).count()
    }
}

/// The assembled sparse normal-equations system.
#[derive(Debug, Clone)]
pub struct EnergySystem {
    pub n: usize,
    /// Diagonal unary weight matrix: sigma_i on observed nodes, 0 elsewhere.
    pub w: SparseMatrix,
    /// Colour pairwise operator: one row per edge with +sqrt(w), -sqrt(w).
    pub s: SparseMatrix,
    /// Surface-normal pairwise operator.
    pub p: SparseMatrix,
    /// Depth (3D proximity) pairwise operator.
    pub d: SparseMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    /// Observed depths, 0 where unobserved.
    pub z: Vec<f64>,
}

/// Dense per-pixel depth painted from the per-superpixel solution.
#[derive(Debug, Clone)]
pub struct DenseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    /// The solution vector x*, one value per superpixel.
    pub node_values: Vec<f64>,
}

impl DenseDepthMap {
    pub fn to_depth_image(&self) -> DepthImage {
        DepthImage {
            width: self.width,
            height: self.height,
            depth: self.depth.clone(),
            valid: self.valid.clone(),
        }
    }
}

/// Per-pixel uncertainty in [0, 1]; 1 means no supporting data.
#[derive(Debug, Clone)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub node_values: Vec<f64>,
}

/// Group projected points by the superpixel containing their pixel and
/// reduce each group: median depth, mean 3D location, normalized mean
/// normal, plus the segment's mean colour.
pub fn aggregate(
    seg: &SuperpixelSegmentation,
    points: &[ProjectedPoint],
    image: &RgbImage,
) -> SuperpixelObservations {
    debug_assert_eq!(seg.width, image.width);
    let n = seg.n_segments;
    let mut depths: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut loc_sum = vec![Vector3::zeros(); n];
    let mut normal_sum = vec![Vector3::zeros(); n];
    let mut counts = vec![0usize; n];
    for p in points {
        let label = seg.label_at(p.u as usize, p.v as usize) as usize;
        depths[label].push(p.depth);
        loc_sum[label] += p.position;
        if let Some(nrm) = p.normal {
            normal_sum[label] += nrm;
        }
        counts[label] += 1;
    }

    let mut observed_depth = vec![None; n];
    let mut location = vec![None; n];
    let mut mean_normal = vec![None; n];
    for i in 0..n {
        if counts[i] == 0 {
            continue;
        }
        observed_depth[i] = Some(median(&mut depths[i]));
        location[i] = Some(loc_sum[i] / counts[i] as f64);
        let norm = normal_sum[i].norm();
        if norm > 1e-12 {
            mean_normal[i] = Some(normal_sum[i] / norm);
        }
    }
    SuperpixelObservations {
        n,
        observed_depth,
        point_count: counts,
        location,
        mean_normal,
        mean_color: seg.mean_color.clone(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Colour affinity `exp(-||c_i - c_j||^2 / sigma_d^2)`, in (0, 1].
pub fn colour_weight(ci: [f64; 3], cj: [f64; 3], sigma_d: f64) -> f64 {
    let d2 = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
    (-d2 / (sigma_d * sigma_d)).exp()
}

/// Cosine similarity of the mean normals, clamped to [0, 1] so the
/// quadratic form stays positive semidefinite. Absent normals weigh 0.
pub fn normal_weight(ni: Option<&Vector3<f64>>, nj: Option<&Vector3<f64>>) -> f64 {
    match (ni, nj) {
        (Some(a), Some(b)) => {
            let denom = a.norm() * b.norm();
            if denom < 1e-300 {
                0.0
            } else {
                (a.dot(b) / denom).clamp(0.0, 1.0)
            }
        }
        _ => 0.0,
    }
}

/// Distance-aware affinity `exp(-||p_i - p_j||^2 / sigma_p^2)`; absent
/// locations weigh 0.
pub fn depth_weight(pi: Option<&Vector3<f64>>, pj: Option<&Vector3<f64>>, sigma_p: f64) -> f64 {
    match (pi, pj) {
        (Some(a), Some(b)) => {
            let d2 = (a - b).norm_squared();
            (-d2 / (sigma_p * sigma_p)).exp()
        }
        _ => 0.0,
    }
}

/// One incidence row per edge carrying `+sqrt(w)` at the lower node id and
/// `-sqrt(w)` at the higher; zero-weight edges leave their row empty.
fn incidence_matrix(
    n: usize,
    edges: &[(u32, u32)],
    mut weight: impl FnMut(usize, usize) -> f64,
) -> Result<SparseMatrix> {
    let mut entries = Vec::with_capacity(edges.len() * 2);
    for (row, &(i, j)) in edges.iter().enumerate() {
        let w = weight(i as usize, j as usize);
        debug_assert!((0.0..=1.0).contains(&w), "edge weight {w} out of [0,1]");
        if w > 0.0 {
            let root = w.sqrt();
            entries.push((row, i as usize, root));
            entries.push((row, j as usize, -root));
        }
    }
    SparseMatrix::from_triplets(edges.len(), n, &entries)
}

/// Assemble the four potential matrices and the normal equations.
pub fn build_system(
    obs: &SuperpixelObservations,
    graph: &FourNeighborGraph,
    cfg: &RunConfig,
) -> Result<EnergySystem> {
    if graph.n_nodes != obs.n {
        return Err(Error::Validation(format!(
            "graph has {} nodes but observations cover {}",
            graph.n_nodes, obs.n
        )));
    }
    if obs.observed_count() == 0 {
        return Err(Error::NoObservations);
    }
    let n = obs.n;
    let (alpha, beta, gamma, delta) = (cfg.alpha, cfg.beta, cfg.gamma, cfg.delta);

    let mut w_entries = Vec::new();
    let mut z = vec![0.0; n];
    for i in 0..n {
        if let Some(y) = obs.observed_depth[i] {
            w_entries.push((i, i, cfg.sigma_i));
            z[i] = y;
        }
    }
    let w = SparseMatrix::from_triplets(n, n, &w_entries)?;

    let s = incidence_matrix(n, &graph.edges, |i, j| {
        colour_weight(obs.mean_color[i], obs.mean_color[j], cfg.sigma_d)
    })?;
    let p = incidence_matrix(n, &graph.edges, |i, j| {
        normal_weight(obs.mean_normal[i].as_ref(), obs.mean_normal[j].as_ref())
    })?;
    let d = incidence_matrix(n, &graph.edges, |i, j| {
        depth_weight(obs.location[i].as_ref(), obs.location[j].as_ref(), cfg.sigma_p)
    })?;

    // A = alpha W'W + beta S'S + gamma P'P + delta D'D, assembled directly
    // from the edge weights: each incidence row contributes w on both
    // diagonal entries and -w off-diagonal.
    let mut a_entries = Vec::new();
    let mut b = vec![0.0; n];
    for i in 0..n {
        if obs.observed_depth[i].is_some() {
            let wi = cfg.sigma_i * cfg.sigma_i;
            a_entries.push((i, i, alpha * wi));
            b[i] = alpha * wi * z[i];
        }
    }
    for (coeff, matrix) in [(beta, &s), (gamma, &p), (delta, &d)] {
        if coeff == 0.0 {
            continue;
        }
        let mut row_entries: Vec<(usize, f64)> = Vec::with_capacity(2);
        let mut current_row = usize::MAX;
        let flush = |row_entries: &mut Vec<(usize, f64)>, a_entries: &mut Vec<(usize, usize, f64)>| {
            if let [(i, vi), (j, _)] = row_entries[..] {
                let w = vi * vi;
                a_entries.push((i, i, coeff * w));
                a_entries.push((j, j, coeff * w));
                a_entries.push((i, j, -coeff * w));
                a_entries.push((j, i, -coeff * w));
            }
            row_entries.clear();
        };
        for (row, col, value) in matrix.triplets() {
            if row != current_row {
                flush(&mut row_entries, &mut a_entries);
                current_row = row;
            }
            row_entries.push((col, value));
        }
        flush(&mut row_entries, &mut a_entries);
    }
    let a = SparseMatrix::from_triplets(n, n, &a_entries)?;

    Ok(EnergySystem {
        n,
        w,
        s,
        p,
        d,
        alpha,
        beta,
        gamma,
        delta,
        a,
        b,
        z,
    })
}

/// Dimensionless inverse-confidence targets per superpixel: 1 with no
/// points, 0.5 with a single point, `min(1/count, 0.25)` otherwise.
pub fn build_uncertainty_targets(obs: &SuperpixelObservations) -> Vec<f64> {
    obs.point_count
        .iter()
        .map(|&c| match c {
            0 => 1.0,
            1 => 0.5,
            _ => (1.0 / c as f64).min(0.25),
        })
        .collect()
}

/// Union-find over the active pairwise edges; errors with a node id if any
/// component lacks an observation.
fn check_connectivity(system: &EnergySystem) -> Result<()> {
    let n = system.n;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let union_rows = |m: &SparseMatrix, parent: &mut Vec<usize>| {
        let mut row_cols: Vec<usize> = Vec::with_capacity(2);
        let mut current = usize::MAX;
        let flush = |row_cols: &mut Vec<usize>, parent: &mut Vec<usize>| {
            if let [i, j] = row_cols[..] {
                let (ri, rj) = (find(parent, i), find(parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
            row_cols.clear();
        };
        for (row, col, _) in m.triplets() {
            if row != current {
                flush(&mut row_cols, parent);
                current = row;
            }
            row_cols.push(col);
        }
        flush(&mut row_cols, parent);
    };
    if system.beta > 0.0 {
        union_rows(&system.s, &mut parent);
    }
    if system.gamma > 0.0 {
        union_rows(&system.p, &mut parent);
    }
    if system.delta > 0.0 {
        union_rows(&system.d, &mut parent);
    }

    let observed: Vec<bool> = (0..n).map(|i| system.w.get(i, i) > 0.0).collect();
    let mut component_observed = vec![false; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if observed[i] {
            component_observed[root] = true;
        }
    }
    for i in 0..n {
        let root = find(&mut parent, i);
        if !component_observed[root] {
            return Err(Error::SingularComponent { node: i });
        }
    }
    Ok(())
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        method: cfg.solver,
        preconditioner: cfg.preconditioner,
        tol: cfg.solver_tol,
        max_iter: cfg.solver_max_iter,
    }
}

/// Minimize the energy and paint the per-superpixel solution across the
/// label map, clamped to `(0, depth_cap]`.
pub fn infer(
    system: &EnergySystem,
    seg: &SuperpixelSegmentation,
    cfg: &RunConfig,
) -> Result<DenseDepthMap> {
    if system.alpha <= 0.0 {
        return Err(Error::Validation(
            "alpha must be positive to solve the system".into(),
        ));
    }
    check_connectivity(system)?;

    let observed: Vec<bool> = (0..system.n).map(|i| system.w.get(i, i) > 0.0).collect();
    let observed_sum: f64 = system
        .z
        .iter()
        .zip(&observed)
        .filter(|(_, &o)| o)
        .map(|(z, _)| z)
        .sum();
    let observed_n = observed.iter().filter(|&&o| o).count();
    if observed_n == 0 {
        return Err(Error::NoObservations);
    }
    let mean_z = observed_sum / observed_n as f64;
    let x0: Vec<f64> = (0..system.n)
        .map(|i| if observed[i] { system.z[i] } else { mean_z })
        .collect();

    let report = solver::solve(&system.a, &system.b, &x0, &solve_options(cfg))?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.final_residual_norm,
        });
    }

    let mut map = DenseDepthMap {
        width: seg.width,
        height: seg.height,
        depth: vec![0.0; seg.width * seg.height],
        valid: vec![true; seg.width * seg.height],
        node_values: report.x,
    };
    for (i, &label) in seg.labels.iter().enumerate() {
        map.depth[i] = map.node_values[label as usize]
            .clamp(f64::MIN_POSITIVE, cfg.depth_cap);
    }
    Ok(map)
}

/// Solve the uncertainty system `(alpha W'W + beta S'S) x = alpha W'W unc`
/// where `W = sigma_i I` covers every node, then paint and clamp to [0, 1].
pub fn infer_uncertainty(
    obs: &SuperpixelObservations,
    graph: &FourNeighborGraph,
    seg: &SuperpixelSegmentation,
    cfg: &RunConfig,
) -> Result<UncertaintyMap> {
    if cfg.alpha <= 0.0 {
        return Err(Error::Validation(
            "alpha must be positive to solve the system".into(),
        ));
    }
    let n = obs.n;
    let unc = build_uncertainty_targets(obs);
    let s = incidence_matrix(n, &graph.edges, |i, j| {
        colour_weight(obs.mean_color[i], obs.mean_color[j], cfg.sigma_d)
    })?;

    let wi = cfg.sigma_i * cfg.sigma_i;
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, cfg.alpha * wi)).collect();
    if cfg.beta > 0.0 {
        for (row, &(i, j)) in graph.edges.iter().enumerate() {
            let v = s.get(row, i as usize);
            let w = v * v;
            if w > 0.0 {
                entries.push((i as usize, i as usize, cfg.beta * w));
                entries.push((j as usize, j as usize, cfg.beta * w));
                entries.push((i as usize, j as usize, -cfg.beta * w));
                entries.push((j as usize, i as usize, -cfg.beta * w));
            }
        }
    }
    let a = SparseMatrix::from_triplets(n, n, &entries)?;
    let b: Vec<f64> = unc.iter().map(|&u| cfg.alpha * wi * u).collect();

    let report = solver::solve(&a, &b, &unc, &solve_options(cfg))?;
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.final_residual_norm,
        });
    }
    let node_values: Vec<f64> = report.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let values: Vec<f64> = seg
        .labels
        .iter()
        .map(|&l| node_values[l as usize])
        .collect();
    Ok(UncertaintyMap {
        width: seg.width,
        height: seg.height,
        values,
        node_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::dense_solve;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_graph(n: usize) -> FourNeighborGraph {
        let edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
        FourNeighborGraph::from_edges(n, &edges)
    }

    fn uniform_obs(n: usize) -> SuperpixelObservations {
        SuperpixelObservations {
            n,
            observed_depth: vec![None; n],
            point_count: vec![0; n],
            location: vec![None; n],
            mean_normal: vec![None; n],
            mean_color: vec![[0.0; 3]; n],
        }
    }

    /// A 1 x n segmentation whose pixel i belongs to segment i.
    fn line_segmentation(n: usize) -> SuperpixelSegmentation {
        SuperpixelSegmentation {
            labels: (0..n as u32).collect(),
            width: n,
            height: 1,
            n_segments: n,
            centroids: (0..n).map(|i| (0.0, i as f64)).collect(),
            mean_color: vec![[0.0; 3]; n],
        }
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (SuperpixelObservations, FourNeighborGraph, RunConfig) {
        random_instance_with(rng, n, 0.6)
    }

    /// Fully observed instances keep `A >= alpha sigma_i^2 I`, so they stay
    /// well conditioned for oracle comparisons; partially observed ones can
    /// be near-singular when a node hangs on underflowed edge weights.
    fn random_observed_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (SuperpixelObservations, FourNeighborGraph, RunConfig) {
        random_instance_with(rng, n, 1.1)
    }

    fn random_instance_with(
        rng: &mut ChaCha8Rng,
        n: usize,
        observe_prob: f64,
    ) -> (SuperpixelObservations, FourNeighborGraph, RunConfig) {
        let mut obs = uniform_obs(n);
        for i in 0..n {
            obs.mean_color[i] = [
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
            ];
            if rng.random_range(0.0..1.0) < observe_prob {
                let count = rng.random_range(1..20);
                obs.point_count[i] = count;
                obs.observed_depth[i] = Some(rng.random_range(1.0..60.0));
                obs.location[i] = Some(Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(1.0..60.0),
                ));
                if rng.random_range(0.0..1.0) < 0.8 {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    if v.norm() > 1e-6 {
                        obs.mean_normal[i] = Some(v.normalize());
                    }
                }
            }
        }
        if obs.observed_count() == 0 {
            obs.point_count[0] = 3;
            obs.observed_depth[0] = Some(10.0);
        }
        // A path plus random chords keeps every component observed.
        let mut edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
        for _ in 0..n / 2 {
            let i = rng.random_range(0..n as u32);
            let j = rng.random_range(0..n as u32);
            if i != j {
                edges.push((i.min(j), i.max(j)));
            }
        }
        let graph = FourNeighborGraph::from_edges(n, &edges);
        let cfg = RunConfig {
            alpha: rng.random_range(0.1..1.0),
            beta: rng.random_range(0.0..1.0),
            gamma: rng.random_range(0.0..1.0),
            delta: rng.random_range(0.0..1.0),
            sigma_d: rng.random_range(10.0..80.0),
            sigma_p: rng.random_range(0.5..4.0),
            ..RunConfig::default()
        };
        (obs, graph, cfg)
    }

    /// Direct term-by-term energy summation, independent of the matrices.
    fn direct_energy(
        obs: &SuperpixelObservations,
        graph: &FourNeighborGraph,
        cfg: &RunConfig,
        x: &[f64],
    ) -> f64 {
        let mut unary = 0.0;
        for i in 0..obs.n {
            if let Some(y) = obs.observed_depth[i] {
                unary += cfg.sigma_i * cfg.sigma_i * (x[i] - y) * (x[i] - y);
            }
        }
        let mut colour = 0.0;
        let mut normal = 0.0;
        let mut depth = 0.0;
        for &(i, j) in &graph.edges {
            let (i, j) = (i as usize, j as usize);
            let dx = x[i] - x[j];
            colour += colour_weight(obs.mean_color[i], obs.mean_color[j], cfg.sigma_d) * dx * dx;
            normal +=
                normal_weight(obs.mean_normal[i].as_ref(), obs.mean_normal[j].as_ref()) * dx * dx;
            depth += depth_weight(obs.location[i].as_ref(), obs.location[j].as_ref(), cfg.sigma_p)
                * dx
                * dx;
        }
        cfg.alpha * unary + cfg.beta * colour + cfg.gamma * normal + cfg.delta * depth
    }

    fn quadratic_form(system: &EnergySystem, x: &[f64]) -> f64 {
        let ax = system.a.spmv(x).unwrap();
        let xax: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let bx: f64 = system.b.iter().zip(x).map(|(a, b)| a * b).sum();
        let wz: f64 = (0..system.n)
            .map(|i| {
                let w = system.w.get(i, i);
                system.alpha * w * w * system.z[i] * system.z[i]
            })
            .sum();
        xax - 2.0 * bx + wz
    }

    #[test]
    fn aggregate_takes_median_depth() {
        let seg = line_segmentation(2);
        let image = RgbImage::new(2, 1);
        let points: Vec<ProjectedPoint> = [4.0, 5.0, 100.0]
            .iter()
            .map(|&d| ProjectedPoint {
                u: 0.2,
                v: 0.0,
                depth: d,
                position: Vector3::new(0.0, 0.0, d),
                source_index: 0,
                normal: None,
            })
            .collect();
        let obs = aggregate(&seg, &points, &image);
        assert_eq!(obs.observed_depth[0], Some(5.0));
        assert_eq!(obs.point_count[0], 3);
        assert_eq!(obs.observed_depth[1], None);
        assert_eq!(obs.point_count[1], 0);
        assert!(obs.location[1].is_none() && obs.mean_normal[1].is_none());
    }

    #[test]
    fn aggregate_matches_brute_force_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut img = RgbImage::new(24, 18);
        for row in 0..18 {
            for col in 0..24 {
                img.set_rgb(col, row, [rng.random(), rng.random(), rng.random()]);
            }
        }
        let seg = crate::superpixel::slic_segment(&img, 9, 10.0).unwrap();
        let points: Vec<ProjectedPoint> = (0..200)
            .map(|k| {
                let u = rng.random_range(0.0..24.0);
                let v = rng.random_range(0.0..18.0);
                let depth = rng.random_range(1.0..30.0);
                ProjectedPoint {
                    u,
                    v,
                    depth,
                    position: Vector3::new(u, v, depth),
                    source_index: k,
                    normal: Some(Vector3::new(0.0, 0.0, -1.0)),
                }
            })
            .collect();
        let obs = aggregate(&seg, &points, &img);

        for label in 0..seg.n_segments {
            let members: Vec<&ProjectedPoint> = points
                .iter()
                .filter(|p| seg.label_at(p.u as usize, p.v as usize) as usize == label)
                .collect();
            assert_eq!(obs.point_count[label], members.len());
            if members.is_empty() {
                assert!(obs.observed_depth[label].is_none());
                continue;
            }
            let mut depths: Vec<f64> = members.iter().map(|p| p.depth).collect();
            depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want_median = if depths.len() % 2 == 1 {
                depths[depths.len() / 2]
            } else {
                0.5 * (depths[depths.len() / 2 - 1] + depths[depths.len() / 2])
            };
            assert!((obs.observed_depth[label].unwrap() - want_median).abs() < 1e-9);
            let mean = members
                .iter()
                .fold(Vector3::zeros(), |acc, p| acc + p.position)
                / members.len() as f64;
            assert!((obs.location[label].unwrap() - mean).norm() < 1e-9);
            assert!((obs.mean_normal[label].unwrap() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn colour_weight_examples() {
        assert_eq!(colour_weight([10.0, 20.0, 30.0], [10.0, 20.0, 30.0], 30.0), 1.0);
        let w = colour_weight([0.0, 0.0, 0.0], [30.0, 0.0, 0.0], 30.0);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let ci = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
            let cj = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
            let sigma: f64 = rng.random_range(5.0..100.0);
            let d2: f64 = (0..3).map(|k| (ci[k] - cj[k]) * (ci[k] - cj[k])).sum();
            let want = (-d2 / (sigma * sigma)).exp();
            let got = colour_weight(ci, cj, sigma);
            assert!((got - want).abs() < 1e-12);
            // Mathematically in (0, 1]; huge distances may underflow to 0.
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn normal_weight_examples() {
        let a = Vector3::new(0.0, 0.0, 1.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(normal_weight(Some(&a), Some(&a)), 1.0);
        assert_eq!(normal_weight(Some(&a), Some(&b)), 0.0);
        assert_eq!(normal_weight(Some(&a), Some(&(-a))), 0.0); // clamped
        assert_eq!(normal_weight(Some(&a), None), 0.0);
        assert_eq!(normal_weight(None, None), 0.0);
    }

    #[test]
    fn depth_weight_examples() {
        let p = Vector3::new(1.0, 2.0, 10.0);
        let q = Vector3::new(1.0, 2.0, 11.0);
        assert_eq!(depth_weight(Some(&p), Some(&p), 1.0), 1.0);
        assert!((depth_weight(Some(&p), Some(&q), 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(depth_weight(Some(&p), None, 1.0), 0.0);
    }

    #[test]
    fn two_node_system_matches_hand_expansion() {
        let mut obs = uniform_obs(2);
        obs.point_count = vec![2, 2];
        obs.observed_depth = vec![Some(7.0), Some(9.0)];
        obs.mean_color = vec![[10.0, 10.0, 10.0]; 2];
        obs.mean_normal = vec![Some(Vector3::new(0.0, 0.0, -1.0)); 2];
        obs.location = vec![Some(Vector3::new(1.0, 1.0, 5.0)); 2];
        let graph = FourNeighborGraph::from_edges(2, &[(0, 1)]);
        let cfg = RunConfig {
            alpha: 0.7,
            beta: 0.3,
            gamma: 0.2,
            delta: 0.1,
            ..RunConfig::default()
        };
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let pair = 0.3 + 0.2 + 0.1;
        assert!((system.a.get(0, 0) - (0.7 + pair)).abs() < 1e-12);
        assert!((system.a.get(1, 1) - (0.7 + pair)).abs() < 1e-12);
        assert!((system.a.get(0, 1) + pair).abs() < 1e-12);
        assert!((system.a.get(1, 0) + pair).abs() < 1e-12);
        assert!((system.b[0] - 0.7 * 7.0).abs() < 1e-12);
        assert!((system.b[1] - 0.7 * 9.0).abs() < 1e-12);
    }

    #[test]
    fn unary_only_system_is_diagonal() {
        let mut obs = uniform_obs(3);
        obs.point_count = vec![1, 0, 4];
        obs.observed_depth = vec![Some(2.0), None, Some(8.0)];
        let graph = path_graph(3);
        let cfg = RunConfig {
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            ..RunConfig::default()
        };
        let system = build_system(&obs, &graph, &cfg).unwrap();
        assert_eq!(system.a.nnz(), 2);
        assert_eq!(system.a.get(0, 0), 1.0);
        assert_eq!(system.a.get(2, 2), 1.0);
        assert_eq!(system.a.get(1, 1), 0.0);
    }

    #[test]
    fn all_unobserved_is_rejected() {
        let obs = uniform_obs(3);
        let graph = path_graph(3);
        assert!(matches!(
            build_system(&obs, &graph, &RunConfig::default()),
            Err(Error::NoObservations)
        ));
    }

    #[test]
    fn energy_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let n = rng.random_range(5..50);
            let (obs, graph, cfg) = random_instance(&mut rng, n);
            let system = build_system(&obs, &graph, &cfg).unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..80.0)).collect();
                let via_matrices = quadratic_form(&system, &x);
                let direct = direct_energy(&obs, &graph, &cfg, &x);
                let scale = direct.abs().max(1.0);
                assert!(
                    (via_matrices - direct).abs() / scale < 1e-10,
                    "energy mismatch: {via_matrices} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn triple_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (obs, graph, cfg) = random_instance(&mut rng, 40);
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let st = system.s.transpose();
        let pt = system.p.transpose();
        let dt = system.d.transpose();
        for _ in 0..10 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ax = system.a.spmv(&x).unwrap();
            let wx = system.w.spmv(&x).unwrap();
            let wwx = system.w.spmv(&wx).unwrap();
            let ss = st.spmv(&system.s.spmv(&x).unwrap()).unwrap();
            let pp = pt.spmv(&system.p.spmv(&x).unwrap()).unwrap();
            let dd = dt.spmv(&system.d.spmv(&x).unwrap()).unwrap();
            for i in 0..40 {
                let want = system.alpha * wwx[i]
                    + system.beta * ss[i]
                    + system.gamma * pp[i]
                    + system.delta * dd[i];
                assert!((ax[i] - want).abs() < 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn system_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (obs, graph, cfg) = random_instance(&mut rng, 30);
        let system = build_system(&obs, &graph, &cfg).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax = system.a.spmv(&x).unwrap();
            let xax: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            assert!(xax >= -1e-12 * norm2);
        }
    }

    #[test]
    fn uncertainty_target_tiers() {
        let mut obs = uniform_obs(4);
        obs.point_count = vec![0, 1, 2, 8];
        let unc = build_uncertainty_targets(&obs);
        assert_eq!(unc, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn unary_only_inference_recovers_observations() {
        let n = 4;
        let mut obs = uniform_obs(n);
        obs.point_count = vec![1, 2, 3, 4];
        obs.observed_depth = vec![Some(3.0), Some(6.5), Some(12.0), Some(40.0)];
        let graph = path_graph(n);
        let cfg = RunConfig {
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            ..RunConfig::default()
        };
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let seg = line_segmentation(n);
        let map = infer(&system, &seg, &cfg).unwrap();
        for (i, want) in [3.0, 6.5, 12.0, 40.0].iter().enumerate() {
            assert!((map.node_values[i] - want).abs() < 1e-9);
            assert!((map.depth[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn single_observation_propagates_along_path() {
        let n = 3;
        let mut obs = uniform_obs(n);
        obs.point_count[0] = 5;
        obs.observed_depth[0] = Some(10.0);
        // Identical colours make every colour weight exactly 1.
        let graph = path_graph(n);
        let cfg = RunConfig {
            beta: 1.0,
            gamma: 0.0,
            delta: 0.0,
            ..RunConfig::default()
        };
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let seg = line_segmentation(n);
        let map = infer(&system, &seg, &cfg).unwrap();
        for v in &map.node_values {
            assert!((v - 10.0).abs() < cfg.solver_tol * 100.0, "value {v}");
        }
    }

    #[test]
    fn unobserved_component_is_named() {
        let n = 4;
        let mut obs = uniform_obs(n);
        obs.point_count[0] = 1;
        obs.observed_depth[0] = Some(5.0);
        obs.mean_color = vec![[0.0; 3]; n];
        // Two components: {0, 1} and {2, 3}; the second has no observation.
        let graph = FourNeighborGraph::from_edges(n, &[(0, 1), (2, 3)]);
        let cfg = RunConfig {
            gamma: 0.0,
            delta: 0.0,
            ..RunConfig::default()
        };
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let seg = line_segmentation(n);
        match infer(&system, &seg, &cfg) {
            Err(Error::SingularComponent { node }) => assert_eq!(node, 2),
            other => panic!("expected singular component, got {other:?}"),
        }
    }

    #[test]
    fn inference_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..5 {
            let n = 100;
            let (obs, graph, cfg) = random_observed_instance(&mut rng, n);
            let system = build_system(&obs, &graph, &cfg).unwrap();
            let seg = line_segmentation(n);
            let map = match infer(&system, &seg, &cfg) {
                Ok(m) => m,
                Err(Error::SingularComponent { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let x_ref = dense_solve(&system.a.to_dense(), n, &system.b).unwrap();
            let num: f64 = map
                .node_values
                .iter()
                .zip(&x_ref)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = x_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "rel err {}", num / den);
        }
    }

    #[test]
    fn joint_weight_scaling_leaves_argmin_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let (obs, graph, mut cfg) = random_observed_instance(&mut rng, 40);
        cfg.solver_tol = 1e-12;
        let seg = line_segmentation(40);
        let base = infer(&build_system(&obs, &graph, &cfg).unwrap(), &seg, &cfg).unwrap();
        // Weights live in [0, 1]; scale down jointly to stay in range.
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.alpha *= 0.1;
        scaled_cfg.beta *= 0.1;
        scaled_cfg.gamma *= 0.1;
        scaled_cfg.delta *= 0.1;
        let scaled = infer(
            &build_system(&obs, &graph, &scaled_cfg).unwrap(),
            &seg,
            &scaled_cfg,
        )
        .unwrap();
        let num: f64 = base
            .node_values
            .iter()
            .zip(&scaled.node_values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = base.node_values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 10.0 * cfg.solver_tol.max(1e-10));
    }

    #[test]
    fn smoothing_is_monotone_in_beta() {
        let n = 5;
        let mut obs = uniform_obs(n);
        obs.point_count[0] = 3;
        obs.observed_depth[0] = Some(4.0);
        obs.point_count[4] = 3;
        obs.observed_depth[4] = Some(20.0);
        let graph = path_graph(n);
        let seg = line_segmentation(n);
        let mut last = f64::INFINITY;
        for beta in [0.05, 0.2, 0.5, 1.0] {
            let cfg = RunConfig {
                beta,
                gamma: 0.0,
                delta: 0.0,
                solver_tol: 1e-12,
                ..RunConfig::default()
            };
            let system = build_system(&obs, &graph, &cfg).unwrap();
            let map = infer(&system, &seg, &cfg).unwrap();
            let roughness: f64 = graph
                .edges
                .iter()
                .map(|&(i, j)| {
                    let d = map.node_values[i as usize] - map.node_values[j as usize];
                    d * d
                })
                .sum();
            assert!(roughness <= last + 1e-9, "beta {beta}: {roughness} > {last}");
            last = roughness;
        }
    }

    #[test]
    fn observed_fidelity_in_the_small_smoothing_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (obs, graph, mut cfg) = random_observed_instance(&mut rng, 30);
        cfg.beta = 1e-9;
        cfg.gamma = 1e-9;
        cfg.delta = 1e-9;
        cfg.solver_tol = 1e-12;
        let seg = line_segmentation(30);
        let system = build_system(&obs, &graph, &cfg).unwrap();
        let map = infer(&system, &seg, &cfg).unwrap();
        for i in 0..30 {
            if let Some(y) = obs.observed_depth[i] {
                assert!((map.node_values[i] - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn uncertainty_constant_when_all_counts_equal() {
        let n = 6;
        let mut obs = uniform_obs(n);
        obs.point_count = vec![4; n];
        obs.observed_depth = vec![Some(5.0); n];
        let graph = path_graph(n);
        let seg = line_segmentation(n);
        let cfg = RunConfig::default();
        let map = infer_uncertainty(&obs, &graph, &seg, &cfg).unwrap();
        for v in &map.values {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn uncertainty_without_smoothing_equals_targets() {
        let n = 4;
        let mut obs = uniform_obs(n);
        obs.point_count = vec![0, 1, 3, 10];
        let graph = path_graph(n);
        let seg = line_segmentation(n);
        let cfg = RunConfig {
            beta: 0.0,
            ..RunConfig::default()
        };
        let map = infer_uncertainty(&obs, &graph, &seg, &cfg).unwrap();
        let want = build_uncertainty_targets(&obs);
        for (v, w) in map.node_values.iter().zip(&want) {
            assert!((v - w).abs() < 1e-9);
        }
    }

    #[test]
    fn uncertainty_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let (obs, graph, cfg) = random_instance(&mut rng, 60);
        let seg = line_segmentation(60);
        let map = infer_uncertainty(&obs, &graph, &seg, &cfg).unwrap();
        // Rebuild the dense uncertainty system independently.
        let n = 60;
        let wi = cfg.sigma_i * cfg.sigma_i;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = cfg.alpha * wi;
        }
        for &(i, j) in &graph.edges {
            let (i, j) = (i as usize, j as usize);
            let w = colour_weight(obs.mean_color[i], obs.mean_color[j], cfg.sigma_d);
            dense[i * n + i] += cfg.beta * w;
            dense[j * n + j] += cfg.beta * w;
            dense[i * n + j] -= cfg.beta * w;
            dense[j * n + i] -= cfg.beta * w;
        }
        let unc = build_uncertainty_targets(&obs);
        let b: Vec<f64> = unc.iter().map(|&u| cfg.alpha * wi * u).collect();
        let x_ref = dense_solve(&dense, n, &b).unwrap();
        for (got, want) in map.node_values.iter().zip(&x_ref) {
            assert!((got - want.clamp(0.0, 1.0)).abs() < 1e-6);
        }
        for v in &map.values {
            assert!((0.0..=1.0).contains(v));
        }
    }
}
