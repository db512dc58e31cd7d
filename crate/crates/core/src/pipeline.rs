//! End-to-end completion pipeline and the experiment sweeps built on it:
//! normals, segmentation, graph construction, projection, aggregation,
//! energy assembly, inference, and evaluation.

use std::fs;
use std::path::PathBuf;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crf::{
    aggregate, build_system, infer, infer_uncertainty, DenseDepthMap, EnergySystem,
    UncertaintyMap,
};
use crate::error::{Error, Result};
use crate::geometry::{attach_normals, back_project, estimate_normals, project_points};
use crate::io::{
    parse_calibration, read_depth_png, read_point_cloud, read_rgb_image, write_depth_png,
    write_gray8_png, write_rgb_png, CalibrationSet, DepthImage, RawPointCloud, RgbImage,
    RunConfig,
};
use crate::metrics::{evaluate, EvalResult, RelDenominator};
use crate::superpixel::{
    build_raw_adjacency, select_four_neighbors, slic_segment, SuperpixelSegmentation,
};

/// Where the sparse 3D data of a frame comes from.
#[derive(Debug, Clone)]
pub enum CloudSource {
    /// Little-endian float32 quadruple binary in the LiDAR frame.
    VelodyneBin(PathBuf),
    /// 16-bit sparse depth PNG lifted through the calibration.
    SparseDepthPng(PathBuf),
}

/// Where calibration comes from.
#[derive(Debug, Clone)]
pub enum CalibSource {
    /// KITTI-style camera + velodyne calibration text files.
    KittiPair {
        cam: PathBuf,
        velo: PathBuf,
        projection_key: String,
    },
    /// A file of 9 whitespace-separated values forming a row-major 3x3
    /// intrinsic matrix; extrinsics are identity.
    IntrinsicsFile(PathBuf),
}

/// Paths naming one frame's inputs.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub frame_id: String,
    pub image_path: PathBuf,
    pub cloud: CloudSource,
    pub calib: CalibSource,
    pub gt_depth_path: Option<PathBuf>,
}

/// A frame loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub frame_id: String,
    pub image: RgbImage,
    pub cloud: RawPointCloud,
    pub calib: CalibrationSet,
    pub gt_depth: Option<DepthImage>,
}

/// Parse a 3x3 intrinsics file (nine whitespace-separated reals).
pub fn parse_intrinsics(text: &str) -> Result<CalibrationSet> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format(format!(
                "intrinsics file has non-numeric token `{t}`"
            )))
        })
        .collect::<Result<_>>()?;
    if values.len() != 9 {
        return Err(Error::Format(format!(
            "intrinsics file has {} values, expected 9",
            values.len()
        )));
    }
    Ok(CalibrationSet::from_intrinsics(
        &nalgebra::Matrix3::from_row_slice(&values),
    ))
}

/// Read every file of a bundle, wrapping failures with frame context.
pub fn load_bundle(bundle: &FrameBundle) -> Result<LoadedFrame> {
    let frame = bundle.frame_id.as_str();
    let stage = |e: Error, stage: &'static str| e.in_frame(frame, stage);

    let image_bytes = fs::read(&bundle.image_path).map_err(|e| stage(e.into(), "read image"))?;
    let image = read_rgb_image(&image_bytes).map_err(|e| stage(e, "decode image"))?;

    let calib = match &bundle.calib {
        CalibSource::KittiPair {
            cam,
            velo,
            projection_key,
        } => {
            let mut text =
                fs::read_to_string(cam).map_err(|e| stage(e.into(), "read calibration"))?;
            text.push('\n');
            text.push_str(
                &fs::read_to_string(velo).map_err(|e| stage(e.into(), "read calibration"))?,
            );
            parse_calibration(&text, projection_key)
                .map_err(|e| stage(e, "parse calibration"))?
        }
        CalibSource::IntrinsicsFile(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| stage(e.into(), "read calibration"))?;
            parse_intrinsics(&text).map_err(|e| stage(e, "parse calibration"))?
        }
    };
    calib.validate().map_err(|e| stage(e, "parse calibration"))?;

    let cloud = match &bundle.cloud {
        CloudSource::VelodyneBin(path) => {
            let bytes = fs::read(path).map_err(|e| stage(e.into(), "read point cloud"))?;
            read_point_cloud(&bytes).map_err(|e| stage(e, "decode point cloud"))?
        }
        CloudSource::SparseDepthPng(path) => {
            let bytes = fs::read(path).map_err(|e| stage(e.into(), "read point cloud"))?;
            let depth = read_depth_png(&bytes).map_err(|e| stage(e, "decode point cloud"))?;
            crate::geometry::cloud_from_depth(&depth, &calib)
                .map_err(|e| stage(e, "decode point cloud"))?
        }
    };

    let gt_depth = match &bundle.gt_depth_path {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| stage(e.into(), "read ground truth"))?;
            Some(read_depth_png(&bytes).map_err(|e| stage(e, "decode ground truth"))?)
        }
        None => None,
    };

    Ok(LoadedFrame {
        frame_id: bundle.frame_id.clone(),
        image,
        cloud,
        calib,
        gt_depth,
    })
}

/// Keep a seeded uniform subset of `round(fraction * n)` points, order
/// preserved. `fraction >= 1` returns the cloud untouched.
pub fn subsample_cloud(cloud: &RawPointCloud, fraction: f64, seed: u64) -> RawPointCloud {
    if fraction >= 1.0 {
        return cloud.clone();
    }
    let n = cloud.len();
    let m = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut keep: Vec<usize> = indices[..m].to_vec();
    keep.sort_unstable();
    RawPointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        reflectance: keep.iter().map(|&i| cloud.reflectance[i]).collect(),
    }
}

/// Everything a completion run produces, including the assembled system
/// for cross-checks and debug dumps.
#[derive(Debug)]
pub struct CompletionOutput {
    pub depth: DenseDepthMap,
    pub uncertainty: UncertaintyMap,
    pub system: EnergySystem,
    pub seg: SuperpixelSegmentation,
}

/// Run the full pipeline on a loaded frame.
pub fn complete_frame(
    frame: &LoadedFrame,
    cfg: &RunConfig,
    seed: u64,
) -> Result<CompletionOutput> {
    let id = frame.frame_id.as_str();
    let stage = |e: Error, s: &'static str| e.in_frame(id, s);
    cfg.validate().map_err(|e| stage(e, "config"))?;

    let cloud = subsample_cloud(&frame.cloud, cfg.subsample_fraction, seed);

    let normals =
        estimate_normals(&cloud, cfg.normal_k).map_err(|e| stage(e, "estimate normals"))?;

    let seg = slic_segment(&frame.image, cfg.n_superpixels, cfg.compactness)
        .map_err(|e| stage(e, "superpixel segmentation"))?;
    let adjacency = build_raw_adjacency(&seg);
    let graph = select_four_neighbors(&seg, &adjacency);

    let mut points = project_points(&cloud, &frame.calib, frame.image.width, frame.image.height);
    attach_normals(&mut points, &normals);

    let obs = aggregate(&seg, &points, &frame.image);
    let system = build_system(&obs, &graph, cfg).map_err(|e| stage(e, "assemble system"))?;
    let depth = infer(&system, &seg, cfg).map_err(|e| stage(e, "infer depth"))?;
    let uncertainty = infer_uncertainty(&obs, &graph, &seg, cfg)
        .map_err(|e| stage(e, "infer uncertainty"))?;

    Ok(CompletionOutput {
        depth,
        uncertainty,
        system,
        seg,
    })
}

/// Load a bundle from disk and run the full pipeline.
pub fn run_complete(bundle: &FrameBundle, cfg: &RunConfig, seed: u64) -> Result<CompletionOutput> {
    let frame = load_bundle(bundle)?;
    complete_frame(&frame, cfg, seed)
}

/// Swept parameter families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NSuperpixels,
    SubsampleFraction,
    PotentialSet,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::NSuperpixels => "n_superpixels",
            SweepParam::SubsampleFraction => "subsample_fraction",
            SweepParam::PotentialSet => "potential_set",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    /// Printed value column (numeric, or I/II/III for potential sets).
    pub value: String,
    pub result: EvalResult,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub records: Vec<SweepRecord>,
}

impl SweepSpec {
    /// CSV with schema `param,value,rmse,mae,rel,log10,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,value,rmse,mae,rel,log10,n\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.param.as_str(),
                r.value,
                r.result.rmse,
                r.result.mae,
                r.result.rel,
                r.result.log10,
                r.result.n_evaluated
            ));
        }
        out
    }
}

fn require_monotone<T: PartialOrd + Copy + std::fmt::Debug>(values: &[T]) -> Result<()> {
    if values.len() < 2 {
        return Ok(());
    }
    let increasing = values.windows(2).all(|w| w[0] < w[1]);
    let decreasing = values.windows(2).all(|w| w[0] > w[1]);
    if !increasing && !decreasing {
        return Err(Error::Validation(format!(
            "sweep values must be strictly monotone, got {values:?}"
        )));
    }
    Ok(())
}

fn evaluate_against_gt(
    frame: &LoadedFrame,
    out: &CompletionOutput,
    cfg: &RunConfig,
) -> Result<EvalResult> {
    let gt = frame.gt_depth.as_ref().ok_or_else(|| {
        Error::Validation(format!(
            "frame {} has no ground-truth depth to evaluate against",
            frame.frame_id
        ))
    })?;
    evaluate(
        &out.depth.to_depth_image(),
        gt,
        cfg.depth_cap,
        None,
        RelDenominator::Prediction,
    )
}

/// One completion + evaluation per subsample fraction.
pub fn run_subsample_sweep(
    frame: &LoadedFrame,
    cfg: &RunConfig,
    fractions: &[f64],
    seed: u64,
) -> Result<SweepSpec> {
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Validation(format!(
                "subsample fraction {f} is outside (0, 1]"
            )));
        }
    }
    require_monotone(fractions)?;
    let mut records = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let run_cfg = RunConfig {
            subsample_fraction: f,
            ..cfg.clone()
        };
        let out = complete_frame(frame, &run_cfg, seed)?;
        records.push(SweepRecord {
            value: format!("{f}"),
            result: evaluate_against_gt(frame, &out, cfg)?,
        });
    }
    Ok(SweepSpec {
        param: SweepParam::SubsampleFraction,
        records,
    })
}

/// One completion + evaluation per superpixel count.
pub fn run_superpixel_sweep(
    frame: &LoadedFrame,
    cfg: &RunConfig,
    counts: &[usize],
    seed: u64,
) -> Result<SweepSpec> {
    require_monotone(counts)?;
    let mut records = Vec::with_capacity(counts.len());
    for &n in counts {
        let run_cfg = RunConfig {
            n_superpixels: n,
            ..cfg.clone()
        };
        let out = complete_frame(frame, &run_cfg, seed)?;
        records.push(SweepRecord {
            value: format!("{n}"),
            result: evaluate_against_gt(frame, &out, cfg)?,
        });
    }
    Ok(SweepSpec {
        param: SweepParam::NSuperpixels,
        records,
    })
}

/// Three runs adding one pairwise potential family at a time: colour only,
/// colour + normal, colour + normal + depth.
pub fn run_ablation(frame: &LoadedFrame, cfg: &RunConfig, seed: u64) -> Result<SweepSpec> {
    let sets: [(&str, f64, f64); 3] = [
        ("I", 0.0, 0.0),
        ("II", cfg.gamma, 0.0),
        ("III", cfg.gamma, cfg.delta),
    ];
    let mut records = Vec::with_capacity(3);
    for (label, gamma, delta) in sets {
        let run_cfg = RunConfig {
            gamma,
            delta,
            ..cfg.clone()
        };
        let out = complete_frame(frame, &run_cfg, seed)?;
        records.push(SweepRecord {
            value: label.to_string(),
            result: evaluate_against_gt(frame, &out, cfg)?,
        });
    }
    Ok(SweepSpec {
        param: SweepParam::PotentialSet,
        records,
    })
}

/// Back-project every valid pixel through the inverse intrinsics and emit
/// `x y z r g b` lines (camera-frame meters, 8-bit colour).
pub fn export_point_cloud(
    map: &DenseDepthMap,
    calib: &CalibrationSet,
    image: &RgbImage,
) -> String {
    let mut out = String::new();
    for row in 0..map.height {
        for col in 0..map.width {
            let i = row * map.width + col;
            if !map.valid[i] {
                continue;
            }
            let p = back_project(calib, col as f64, row as f64, map.depth[i]);
            let [r, g, b] = image.rgb_at(col, row);
            out.push_str(&format!("{} {} {} {r} {g} {b}\n", p.x, p.y, p.z));
        }
    }
    out
}

/// Encoded output images of one completion run.
pub struct Artifacts {
    pub depth_png: Vec<u8>,
    pub uncertainty_png: Vec<u8>,
    pub preview_png: Vec<u8>,
}

/// Encode the dense depth map (16-bit), the uncertainty map (8-bit gray,
/// value = round(255 * unc)), and a colormapped preview.
pub fn render_artifacts(
    depth: &DenseDepthMap,
    uncertainty: &UncertaintyMap,
    depth_cap: f64,
) -> Result<Artifacts> {
    let depth_png = write_depth_png(&depth.to_depth_image())?;
    let gray: Vec<u8> = uncertainty
        .values
        .iter()
        .map(|&v| (255.0 * v).round().clamp(0.0, 255.0) as u8)
        .collect();
    let uncertainty_png = write_gray8_png(uncertainty.width, uncertainty.height, &gray)?;

    let mut preview = RgbImage::new(depth.width, depth.height);
    for row in 0..depth.height {
        for col in 0..depth.width {
            let i = row * depth.width + col;
            let t = (depth.depth[i] / depth_cap).clamp(0.0, 1.0);
            preview.set_rgb(col, row, colormap(t));
        }
    }
    let preview_png = write_rgb_png(&preview)?;
    Ok(Artifacts {
        depth_png,
        uncertainty_png,
        preview_png,
    })
}

/// Piecewise-linear heat colormap from near (warm) to far (cold).
fn colormap(t: f64) -> [u8; 3] {
    let stops: [(f64, [f64; 3]); 5] = [
        (0.0, [180.0, 30.0, 30.0]),
        (0.25, [240.0, 160.0, 40.0]),
        (0.5, [240.0, 240.0, 90.0]),
        (0.75, [80.0, 200.0, 120.0]),
        (1.0, [40.0, 70.0, 200.0]),
    ];
    let mut rgb = stops[stops.len() - 1].1;
    for w in stops.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t >= t0 && t <= t1 {
            let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + s * (c1[0] - c0[0]),
                c0[1] + s * (c1[1] - c0[1]),
                c0[2] + s * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    [
        rgb[0].round() as u8,
        rgb[1].round() as u8,
        rgb[2].round() as u8,
    ]
}
