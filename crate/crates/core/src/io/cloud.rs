//! Raw LiDAR point-cloud binary format: consecutive little-endian f32
//! quadruples `(x, y, z, reflectance)`, the velodyne scan convention.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Point cloud in the LiDAR sensor frame, meters.
#[derive(Debug, Clone, Default)]
pub struct RawPointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Per-point reflectance in [0, 1], aligned with `points`.
    pub reflectance: Vec<f32>,
}

impl RawPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn read_point_cloud(bytes: &[u8]) -> Result<RawPointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "point cloud byte length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut reflectance = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(record[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite coordinate in point record {i}"
            )));
        }
        points.push(Vector3::new(x as f64, y as f64, z as f64));
        reflectance.push(r);
    }
    Ok(RawPointCloud {
        points,
        reflectance,
    })
}

pub fn write_point_cloud(cloud: &RawPointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (p, &r) in cloud.points.iter().zip(&cloud.reflectance) {
        for v in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
