//! Point-cloud geometry: transform LiDAR points into the rectified camera
//! frame, project them to pixel coordinates, back-project pixels to 3D, and
//! estimate per-point surface normals by PCA over exact nearest neighbors.

use nalgebra::{Matrix3, Vector3, Vector4};
use rayon::prelude::*;
use rstar::{primitives::GeomWithData, RTree};

use crate::error::{Error, Result};
use crate::io::{CalibrationSet, DepthImage, RawPointCloud};

/// A LiDAR point that survived projection into the image.
#[derive(Debug, Clone)]
pub struct ProjectedPoint {
    /// Pixel coordinates, 0 <= u < width, 0 <= v < height.
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth z', meters. Always positive.
    pub depth: f64,
    /// Metric position in the rectified camera frame, meters.
    pub position: Vector3<f64>,
    /// Index into the originating [`RawPointCloud`].
    pub source_index: usize,
    /// Unit surface normal, when one was estimated for the source point.
    pub normal: Option<Vector3<f64>>,
}

/// Per-point unit normals aligned by index with a [`RawPointCloud`].
#[derive(Debug, Clone)]
pub struct NormalCloud {
    pub normals: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

/// Apply the full projection chain `P_rect * R_rect * T_velo_cam` to every
/// point, without the projective division. Returns `(x', y', z')` triples
/// in input order.
pub fn transform_to_camera(cloud: &RawPointCloud, calib: &CalibrationSet) -> Vec<Vector3<f64>> {
    let chain = calib.p_rect * calib.r_rect * calib.t_velo_cam;
    cloud
        .points
        .iter()
        .map(|p| chain * Vector4::new(p.x, p.y, p.z, 1.0))
        .collect()
}

/// Project the cloud onto a `width x height` image plane.
///
/// Points with non-positive camera-frame depth are removed, the rest divide
/// through by z', and anything falling outside the image is dropped.
pub fn project_points(
    cloud: &RawPointCloud,
    calib: &CalibrationSet,
    width: usize,
    height: usize,
) -> Vec<ProjectedPoint> {
    let rigid = calib.r_rect * calib.t_velo_cam;
    let mut out = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let cam = rigid * Vector4::new(p.x, p.y, p.z, 1.0);
        let position = Vector3::new(cam.x, cam.y, cam.z);
        let y = calib.p_rect * cam;
        let depth = y.z;
        if depth <= 0.0 {
            continue;
        }
        let u = y.x / depth;
        let v = y.y / depth;
        if u < 0.0 || u >= width as f64 || v < 0.0 || v >= height as f64 {
            continue;
        }
        out.push(ProjectedPoint {
            u,
            v,
            depth,
            position,
            source_index: i,
            normal: None,
        });
    }
    out
}

/// Copy estimated normals onto projected points via their source indices.
pub fn attach_normals(points: &mut [ProjectedPoint], normals: &NormalCloud) {
    for p in points {
        if normals.valid[p.source_index] {
            p.normal = Some(normals.normals[p.source_index]);
        }
    }
}

/// Invert the pinhole projection: pixel `(u, v)` at metric depth back to a
/// rectified-camera-frame point.
pub fn back_project(calib: &CalibrationSet, u: f64, v: f64, depth: f64) -> Vector3<f64> {
    let x = (u - calib.c_u()) * depth / calib.f_u() + calib.baseline_x();
    let y = (v - calib.c_v()) * depth / calib.f_v();
    Vector3::new(x, y, depth)
}

/// Lift every valid pixel of a sparse depth image into a point cloud in the
/// LiDAR frame (the inverse of projection, for datasets that distribute
/// depth as images).
pub fn cloud_from_depth(depth: &DepthImage, calib: &CalibrationSet) -> Result<RawPointCloud> {
    let rigid = calib.r_rect * calib.t_velo_cam;
    let inv = rigid.try_inverse().ok_or_else(|| {
        Error::Validation("calibration rigid transform is not invertible".into())
    })?;
    let mut points = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let i = row * depth.width + col;
            if !depth.valid[i] {
                continue;
            }
            let cam = back_project(calib, col as f64, row as f64, depth.depth[i]);
            let lidar = inv * Vector4::new(cam.x, cam.y, cam.z, 1.0);
            points.push(Vector3::new(lidar.x, lidar.y, lidar.z));
        }
    }
    let reflectance = vec![0.0; points.len()];
    Ok(RawPointCloud {
        points,
        reflectance,
    })
}

/// Estimate a unit normal per point as the smallest-eigenvalue eigenvector
/// of the covariance of its `k` nearest neighbors, oriented toward the
/// sensor origin. Points with fewer than `k - 1` distinct neighbors are
/// flagged invalid.
pub fn estimate_normals(cloud: &RawPointCloud, k: usize) -> Result<NormalCloud> {
    if k < 3 {
        return Err(Error::Validation(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    let n = cloud.len();
    let invalid = NormalCloud {
        normals: vec![Vector3::zeros(); n],
        valid: vec![false; n],
    };
    if n < 3 || n < k {
        return Ok(invalid);
    }

    let tree = RTree::bulk_load(
        cloud
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i))
            .collect(),
    );

    let results: Vec<(Vector3<f64>, bool)> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let query = [p.x, p.y, p.z];
            let mut neighbors: Vec<Vector3<f64>> = Vec::with_capacity(k);
            for item in tree.nearest_neighbor_iter(&query) {
                if item.data == i {
                    continue;
                }
                let g = item.geom();
                neighbors.push(Vector3::new(g[0], g[1], g[2]));
                if neighbors.len() == k {
                    break;
                }
            }
            let mut distinct: Vec<Vector3<f64>> = Vec::new();
            for q in &neighbors {
                if !distinct.iter().any(|d| d == q) {
                    distinct.push(*q);
                }
            }
            if neighbors.len() < k || distinct.len() < k - 1 {
                return (Vector3::zeros(), false);
            }
            let mean = neighbors.iter().sum::<Vector3<f64>>() / k as f64;
            let mut cov = Matrix3::zeros();
            for q in &neighbors {
                let d = q - mean;
                cov += d * d.transpose();
            }
            cov /= k as f64;
            let eig = cov.symmetric_eigen();
            let mut smallest = 0;
            for j in 1..3 {
                if eig.eigenvalues[j] < eig.eigenvalues[smallest] {
                    smallest = j;
                }
            }
            let mut normal: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
            let norm = normal.norm();
            if !norm.is_finite() || norm < 1e-12 {
                return (Vector3::zeros(), false);
            }
            normal /= norm;
            if normal.dot(p) > 0.0 {
                normal = -normal;
            }
            (normal, true)
        })
        .collect();

    let mut out = invalid;
    for (i, (normal, ok)) in results.into_iter().enumerate() {
        out.normals[i] = normal;
        out.valid[i] = ok;
    }
    Ok(out)
}
