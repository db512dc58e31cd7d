//! `depthfuse` — fuse an RGB image with a sparse LiDAR point cloud into a
//! dense depth map plus an uncertainty map, and run the associated
//! experiment sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use depthfuse::crf::DenseDepthMap;
use depthfuse::geometry::project_points;
use depthfuse::io::{
    load_config, read_depth_png, read_rgb_image, write_depth_png, DepthImage, RunConfig,
};
use depthfuse::metrics::{evaluate, unit_scale, CropRect, EvalResult, RelDenominator};
use depthfuse::pipeline::{
    complete_frame, export_point_cloud, load_bundle, parse_intrinsics, render_artifacts,
    run_ablation, run_subsample_sweep, run_superpixel_sweep, subsample_cloud, CalibSource,
    CloudSource, FrameBundle, SweepSpec,
};
use depthfuse::solver::dense_solve;
use depthfuse::superpixel::{
    build_raw_adjacency, render_label_png, render_label_png16, render_overlay_png,
    select_four_neighbors, slic_segment,
};

/// Environment variable holding the dataset root; relative input paths
/// that do not exist are retried under it.
const DATA_ROOT_ENV: &str = "DEPTHFUSE_DATA";

#[derive(Parser)]
#[command(
    name = "depthfuse",
    about = "Camera-LiDAR depth completion via a superpixel CRF",
    version
)]
struct Cli {
    /// Run configuration file (`key = value` lines); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for point subsampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory for generated artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Cross-check the sparse solve against dense elimination (n <= 2000).
    #[arg(long, global = true)]
    oracle: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FrameArgs {
    /// RGB image path.
    #[arg(long)]
    image: PathBuf,

    /// Raw point-cloud binary (little-endian f32 x,y,z,reflectance records).
    #[arg(long)]
    cloud: Option<PathBuf>,

    /// 16-bit sparse depth PNG, as an alternative to --cloud.
    #[arg(long)]
    sparse_depth: Option<PathBuf>,

    /// Camera calibration text (P_rect_*, R_rect_00 keys).
    #[arg(long)]
    cam_calib: Option<PathBuf>,

    /// LiDAR-to-camera calibration text (R, T keys).
    #[arg(long)]
    velo_calib: Option<PathBuf>,

    /// Intrinsics file (nine values, row-major 3x3 K), as an alternative
    /// to the calibration pair.
    #[arg(long)]
    intrinsics: Option<PathBuf>,

    /// Which projection matrix key to use from the camera calibration.
    #[arg(long, default_value = "P_rect_02")]
    projection_key: String,

    /// Ground-truth 16-bit depth PNG (required by eval and sweeps).
    #[arg(long)]
    gt: Option<PathBuf>,

    /// Frame id used in output names and error messages; defaults to the
    /// image file stem.
    #[arg(long)]
    frame_id: Option<String>,
}

impl FrameArgs {
    fn bundle(&self) -> Result<FrameBundle> {
        let frame_id = self.frame_id.clone().unwrap_or_else(|| {
            self.image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frame".into())
        });
        let cloud = match (&self.cloud, &self.sparse_depth) {
            (Some(bin), None) => CloudSource::VelodyneBin(resolve(bin)),
            (None, Some(png)) => CloudSource::SparseDepthPng(resolve(png)),
            _ => bail!("provide exactly one of --cloud or --sparse-depth"),
        };
        let calib = match (&self.cam_calib, &self.velo_calib, &self.intrinsics) {
            (Some(cam), Some(velo), None) => CalibSource::KittiPair {
                cam: resolve(cam),
                velo: resolve(velo),
                projection_key: self.projection_key.clone(),
            },
            (None, None, Some(k)) => CalibSource::IntrinsicsFile(resolve(k)),
            _ => bail!("provide either --cam-calib with --velo-calib, or --intrinsics"),
        };
        Ok(FrameBundle {
            frame_id,
            image_path: resolve(&self.image),
            cloud,
            calib,
            gt_depth_path: self.gt.as_ref().map(|p| resolve(p)),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Project the point cloud onto the image plane and write the sparse
    /// depth PNG.
    Project(FrameArgs),

    /// Segment the image into superpixels and write debug renderings.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// Override the configured superpixel count.
        #[arg(long)]
        n_superpixels: Option<usize>,
        /// Override the configured compactness.
        #[arg(long)]
        compactness: Option<f64>,
    },

    /// Run the full completion pipeline and write depth, uncertainty, and
    /// preview PNGs.
    Complete {
        #[command(flatten)]
        frame: FrameArgs,
        /// Also dump the assembled system as `row col value` text.
        #[arg(long)]
        dump_system: bool,
    },

    /// Evaluate a predicted depth PNG against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Depth cap in meters.
        #[arg(long, default_value_t = 80.0)]
        cap: f64,
        /// Evaluation crop as `left,top,width,height`.
        #[arg(long)]
        crop: Option<String>,
        /// Which depth divides the absolute error in REL.
        #[arg(long, default_value = "pred", value_parser = ["pred", "gt"])]
        rel_denominator: String,
        /// Report RMSE/MAE scaled by this factor (e.g. 1000 for mm).
        #[arg(long, default_value_t = 1.0)]
        unit_factor: f64,
        /// Append the result as a CSV row (`param,value,rmse,...`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Param label for the CSV row.
        #[arg(long, default_value = "eval")]
        param: String,
        /// Value label for the CSV row.
        #[arg(long, default_value = "-")]
        value: String,
    },

    /// Completion + evaluation across several superpixel counts.
    SweepSuperpixels {
        #[command(flatten)]
        frame: FrameArgs,
        /// Comma-separated strictly monotone counts, e.g. 300,800,1600.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
    },

    /// Completion + evaluation across several point subsampling fractions.
    SweepSubsample {
        #[command(flatten)]
        frame: FrameArgs,
        /// Comma-separated strictly monotone fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },

    /// Completion + evaluation adding one pairwise potential at a time.
    Ablate(FrameArgs),

    /// Back-project a completed depth PNG to an `x y z r g b` point list.
    ExportCloud {
        /// Completed 16-bit depth PNG.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        cam_calib: Option<PathBuf>,
        #[arg(long)]
        velo_calib: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long, default_value = "P_rect_02")]
        projection_key: String,
    },
}

/// Keep existing paths as-is; retry missing ones under the dataset root.
fn resolve(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
        let joined = Path::new(&root).join(path);
        if joined.exists() {
            return joined;
        }
    }
    path.to_path_buf()
}

/// Write through a temporary file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_file_name(format!(
        "{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn load_run_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(resolve(p))
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(load_config(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn parse_crop(spec: &str) -> Result<CropRect> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("crop `{spec}` is not left,top,width,height"))?;
    if parts.len() != 4 {
        bail!("crop `{spec}` is not left,top,width,height");
    }
    Ok(CropRect {
        left: parts[0],
        top: parts[1],
        width: parts[2],
        height: parts[3],
    })
}

fn print_sweep(sweep: &SweepSpec) {
    for record in &sweep.records {
        println!(
            "{}={} {}",
            sweep.param.as_str(),
            record.value,
            record.result.format_line()
        );
    }
}

fn oracle_check(out: &depthfuse::pipeline::CompletionOutput, cfg: &RunConfig) -> Result<()> {
    let n = out.system.n;
    if n > 2000 {
        println!("oracle check skipped: {n} nodes exceeds the 2000-node dense limit");
        return Ok(());
    }
    let x_ref = dense_solve(&out.system.a.to_dense(), n, &out.system.b)?;
    let num: f64 = out
        .depth
        .node_values
        .iter()
        .zip(&x_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = x_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = num / den.max(1e-300);
    let budget = 1e-6f64.max(10.0 * cfg.solver_tol);
    if rel > budget {
        bail!("oracle check failed: iterative vs dense solution differ by {rel:.3e} (> {budget:.1e})");
    }
    println!("oracle check passed: {n} nodes, relative difference {rel:.3e}");
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_run_config(&cli.config)?;
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match cli.command {
        Command::Project(frame_args) => {
            let bundle = frame_args.bundle()?;
            let frame = load_bundle(&bundle)?;
            let cloud = subsample_cloud(&frame.cloud, cfg.subsample_fraction, cli.seed);
            let points = project_points(
                &cloud,
                &frame.calib,
                frame.image.width,
                frame.image.height,
            );
            // Nearest-point-wins sparse map: keep the smallest depth per pixel.
            let mut sparse = DepthImage::new(frame.image.width, frame.image.height);
            for p in &points {
                let (col, row) = (p.u as usize, p.v as usize);
                let i = row * sparse.width + col;
                if !sparse.valid[i] || p.depth < sparse.depth[i] {
                    sparse.set(col, row, p.depth);
                }
            }
            let path = cli.out.join(format!("{}_sparse_depth.png", frame.frame_id));
            write_atomic(&path, &write_depth_png(&sparse)?)?;
            println!(
                "projected {} of {} points onto {}x{}; wrote {}",
                points.len(),
                cloud.len(),
                frame.image.width,
                frame.image.height,
                path.display()
            );
        }

        Command::Segment {
            image,
            n_superpixels,
            compactness,
        } => {
            let bytes = fs::read(resolve(&image))
                .with_context(|| format!("reading image {}", image.display()))?;
            let rgb = read_rgb_image(&bytes)?;
            let n = n_superpixels.unwrap_or(cfg.n_superpixels);
            let m = compactness.unwrap_or(cfg.compactness);
            let seg = slic_segment(&rgb, n, m)?;
            let graph = select_four_neighbors(&seg, &build_raw_adjacency(&seg));
            let stem = image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            let labels16 = cli.out.join(format!("{stem}_labels16.png"));
            let indexed = cli.out.join(format!("{stem}_labels_indexed.png"));
            let overlay = cli.out.join(format!("{stem}_overlay.png"));
            write_atomic(&labels16, &render_label_png16(&seg)?)?;
            write_atomic(&indexed, &render_label_png(&seg)?)?;
            write_atomic(&overlay, &render_overlay_png(&rgb, &seg, Some(&graph))?)?;
            println!(
                "segmented into {} superpixels ({} graph edges); wrote {}, {}, {}",
                seg.n_segments,
                graph.edges.len(),
                labels16.display(),
                indexed.display(),
                overlay.display()
            );
        }

        Command::Complete { frame, dump_system } => {
            let bundle = frame.bundle()?;
            let loaded = load_bundle(&bundle)?;
            let out = complete_frame(&loaded, &cfg, cli.seed)?;
            if cli.oracle {
                oracle_check(&out, &cfg)?;
            }
            let artifacts = render_artifacts(&out.depth, &out.uncertainty, cfg.depth_cap)?;
            let depth_path = cli.out.join(format!("{}_depth.png", bundle.frame_id));
            let unc_path = cli.out.join(format!("{}_uncertainty.png", bundle.frame_id));
            let preview_path = cli.out.join(format!("{}_preview.png", bundle.frame_id));
            write_atomic(&depth_path, &artifacts.depth_png)?;
            write_atomic(&unc_path, &artifacts.uncertainty_png)?;
            write_atomic(&preview_path, &artifacts.preview_png)?;
            if dump_system {
                let a_path = cli.out.join(format!("{}_A.txt", bundle.frame_id));
                let b_path = cli.out.join(format!("{}_b.txt", bundle.frame_id));
                write_atomic(&a_path, out.system.a.to_triplet_text().as_bytes())?;
                let b_text: String = out
                    .system
                    .b
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{i} 0 {v}\n"))
                    .collect();
                write_atomic(&b_path, b_text.as_bytes())?;
            }
            println!(
                "completed frame {}: {} superpixels; wrote {}, {}, {}",
                bundle.frame_id,
                out.seg.n_segments,
                depth_path.display(),
                unc_path.display(),
                preview_path.display()
            );
        }

        Command::Eval {
            pred,
            gt,
            cap,
            crop,
            rel_denominator,
            unit_factor,
            csv,
            param,
            value,
        } => {
            let pred_img = read_depth_png(&fs::read(resolve(&pred))?)?;
            let gt_img = read_depth_png(&fs::read(resolve(&gt))?)?;
            let crop = crop.as_deref().map(parse_crop).transpose()?;
            let rel_den = if rel_denominator == "gt" {
                RelDenominator::GroundTruth
            } else {
                RelDenominator::Prediction
            };
            let result = evaluate(&pred_img, &gt_img, cap, crop, rel_den)?;
            let result = unit_scale(&result, unit_factor);
            println!("{}", result.format_line());
            if let Some(csv_path) = csv {
                append_csv_row(&csv_path, &param, &value, &result)?;
            }
        }

        Command::SweepSuperpixels { frame, counts } => {
            let bundle = frame.bundle()?;
            let loaded = load_bundle(&bundle)?;
            let sweep = run_superpixel_sweep(&loaded, &cfg, &counts, cli.seed)?;
            let path = cli.out.join("sweep_superpixels.csv");
            write_atomic(&path, sweep.to_csv().as_bytes())?;
            print_sweep(&sweep);
            println!("wrote {}", path.display());
        }

        Command::SweepSubsample { frame, fractions } => {
            let bundle = frame.bundle()?;
            let loaded = load_bundle(&bundle)?;
            let sweep = run_subsample_sweep(&loaded, &cfg, &fractions, cli.seed)?;
            let path = cli.out.join("sweep_subsample.csv");
            write_atomic(&path, sweep.to_csv().as_bytes())?;
            print_sweep(&sweep);
            println!("wrote {}", path.display());
        }

        Command::Ablate(frame) => {
            let bundle = frame.bundle()?;
            let loaded = load_bundle(&bundle)?;
            let sweep = run_ablation(&loaded, &cfg, cli.seed)?;
            let path = cli.out.join("ablation.csv");
            write_atomic(&path, sweep.to_csv().as_bytes())?;
            print_sweep(&sweep);
            println!("wrote {}", path.display());
        }

        Command::ExportCloud {
            depth,
            image,
            cam_calib,
            velo_calib,
            intrinsics,
            projection_key,
        } => {
            let depth_img = read_depth_png(&fs::read(resolve(&depth))?)?;
            let rgb = read_rgb_image(&fs::read(resolve(&image))?)?;
            let calib = match (&cam_calib, &velo_calib, &intrinsics) {
                (Some(cam), Some(velo), None) => {
                    let mut text = fs::read_to_string(resolve(cam))?;
                    text.push('\n');
                    text.push_str(&fs::read_to_string(resolve(velo))?);
                    depthfuse::io::parse_calibration(&text, &projection_key)?
                }
                (None, None, Some(k)) => parse_intrinsics(&fs::read_to_string(resolve(k))?)?,
                _ => bail!("provide either --cam-calib with --velo-calib, or --intrinsics"),
            };
            let map = DenseDepthMap {
                width: depth_img.width,
                height: depth_img.height,
                depth: depth_img.depth.clone(),
                valid: depth_img.valid.clone(),
                node_values: Vec::new(),
            };
            let text = export_point_cloud(&map, &calib, &rgb);
            let stem = depth
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "depth".into());
            let path = cli.out.join(format!("{stem}_cloud.txt"));
            write_atomic(&path, text.as_bytes())?;
            println!(
                "exported {} points to {}",
                text.lines().count(),
                path.display()
            );
        }
    }
    Ok(())
}

fn append_csv_row(path: &Path, param: &str, value: &str, r: &EvalResult) -> Result<()> {
    let mut content = if path.exists() {
        fs::read_to_string(path)?
    } else {
        String::from("param,value,rmse,mae,rel,log10,n\n")
    };
    content.push_str(&format!(
        "{param},{value},{},{},{},{},{}\n",
        r.rmse, r.mae, r.rel, r.log10, r.n_evaluated
    ));
    write_atomic(path, content.as_bytes())
}

