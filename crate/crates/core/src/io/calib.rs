//! Calibration file parsing.
//!
//! The expected format is the KITTI convention: `key: v1 v2 ...` lines with
//! row-major matrices. A full set needs a camera projection matrix (12
//! values, key selectable since datasets ship one per camera), the
//! rectifying rotation `R_rect_00` (9 values), and the LiDAR-to-camera
//! rigid transform as `R` (9 values) and `T` (3 values). The camera and
//! velodyne calibration files may be parsed from one concatenated stream.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rectification, projection, and LiDAR-to-camera transform matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    /// 3x4 projection matrix for the rectified camera, in pixels.
    pub p_rect: Matrix3x4<f64>,
    /// Rectifying rotation of the reference camera, expanded to 4x4 with a
    /// zero fourth row/column and a unit (4,4) element.
    pub r_rect: Matrix4<f64>,
    /// Rigid transform from LiDAR to camera coordinates, in meters.
    pub t_velo_cam: Matrix4<f64>,
}

impl CalibrationSet {
    /// Identity projection `[I | 0]` with identity extrinsics.
    pub fn identity() -> CalibrationSet {
        CalibrationSet {
            p_rect: Matrix3x4::identity(),
            r_rect: Matrix4::identity(),
            t_velo_cam: Matrix4::identity(),
        }
    }

    /// Build from a 3x3 intrinsic matrix with identity extrinsics. The
    /// camera frame and the point-cloud frame then coincide, which is the
    /// convention of datasets that ship sparse depth images plus a per-frame
    /// `K` instead of full extrinsics.
    pub fn from_intrinsics(k: &Matrix3<f64>) -> CalibrationSet {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(k);
        CalibrationSet {
            p_rect: p,
            r_rect: Matrix4::identity(),
            t_velo_cam: Matrix4::identity(),
        }
    }

    pub fn f_u(&self) -> f64 {
        self.p_rect[(0, 0)]
    }

    pub fn f_v(&self) -> f64 {
        self.p_rect[(1, 1)]
    }

    pub fn c_u(&self) -> f64 {
        self.p_rect[(0, 2)]
    }

    pub fn c_v(&self) -> f64 {
        self.p_rect[(1, 2)]
    }

    /// Horizontal baseline against the reference camera, recovered from
    /// the projection matrix entry `-f_u * b_x`.
    pub fn baseline_x(&self) -> f64 {
        -self.p_rect[(0, 3)] / self.f_u()
    }

    /// Check the structural invariants: orthonormal rotation blocks, the
    /// affine bottom rows, and the pure third projection row.
    pub fn validate(&self) -> Result<()> {
        check_orthonormal(&self.r_rect.fixed_view::<3, 3>(0, 0).into_owned(), "r_rect")?;
        check_orthonormal(
            &self.t_velo_cam.fixed_view::<3, 3>(0, 0).into_owned(),
            "t_velo_cam",
        )?;
        let bottom = self.t_velo_cam.row(3);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::Validation(
                "t_velo_cam bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        let third = self.p_rect.row(2);
        if third[0] != 0.0 || third[1] != 0.0 || third[2] != 1.0 {
            return Err(Error::Validation(
                "p_rect third row must be (0, 0, 1, *)".into(),
            ));
        }
        Ok(())
    }
}

fn check_orthonormal(m: &Matrix3<f64>, name: &str) -> Result<()> {
    let gram = m.transpose() * m;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::Validation(format!(
            "{name} rotation block is not orthonormal (deviation {dev:.3e})"
        )));
    }
    Ok(())
}

/// Parse calibration text into a [`CalibrationSet`].
///
/// `projection_key` selects which camera projection matrix to use
/// (e.g. `P_rect_02`). Unknown keys are ignored so the raw dataset files
/// can be fed through unmodified; line order does not matter.
pub fn parse_calibration(text: &str, projection_key: &str) -> Result<CalibrationSet> {
    let mut table: HashMap<String, (usize, Vec<String>)> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        table.insert(
            key.trim().to_string(),
            (idx + 1, rest.split_whitespace().map(str::to_string).collect()),
        );
    }

    let values = |key: &str, expect: usize| -> Result<Vec<f64>> {
        let (lineno, tokens) = table
            .get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        if tokens.len() != expect {
            return Err(Error::Format(format!(
                "key `{key}` has {} values, expected {expect}",
                tokens.len()
            )));
        }
        tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: *lineno,
                    msg: format!("non-numeric token `{t}` in `{key}`"),
                })
            })
            .collect()
    };

    let p = values(projection_key, 12)?;
    let r_rect3 = values("R_rect_00", 9)?;
    let r = values("R", 9)?;
    let t = values("T", 3)?;

    let p_rect = Matrix3x4::from_row_slice(&p);

    let mut r_rect = Matrix4::zeros();
    r_rect
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::from_row_slice(&r_rect3));
    r_rect[(3, 3)] = 1.0;

    let mut t_velo_cam = Matrix4::zeros();
    t_velo_cam
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::from_row_slice(&r));
    t_velo_cam
        .fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&Vector3::new(t[0], t[1], t[2]));
    t_velo_cam[(3, 3)] = 1.0;

    Ok(CalibrationSet {
        p_rect,
        r_rect,
        t_velo_cam,
    })
}
