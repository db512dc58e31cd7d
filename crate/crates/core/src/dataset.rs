//! Discovery of the KITTI depth-completion validation layout
//! (`val_selection_cropped`): RGB images, sparse velodyne depth PNGs,
//! ground-truth depth PNGs, and per-frame intrinsics files with matching
//! names.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pipeline::{CalibSource, CloudSource, FrameBundle};

/// One validation frame's file set.
#[derive(Debug, Clone)]
pub struct KittiValFrame {
    pub frame_id: String,
    pub image: PathBuf,
    pub sparse_depth: PathBuf,
    pub gt_depth: PathBuf,
    pub intrinsics: PathBuf,
}

impl KittiValFrame {
    pub fn to_bundle(&self) -> FrameBundle {
        FrameBundle {
            frame_id: self.frame_id.clone(),
            image_path: self.image.clone(),
            cloud: CloudSource::SparseDepthPng(self.sparse_depth.clone()),
            calib: CalibSource::IntrinsicsFile(self.intrinsics.clone()),
            gt_depth_path: Some(self.gt_depth.clone()),
        }
    }
}

/// Search `root` (or its `val_selection_cropped` / `depth_selection/
/// val_selection_cropped` subdirectories) for complete validation frames.
/// Frames with missing siblings are skipped; the result is sorted by
/// frame id so runs are reproducible.
pub fn discover_val_selection(root: &Path) -> Result<Vec<KittiValFrame>> {
    let candidates = [
        root.to_path_buf(),
        root.join("val_selection_cropped"),
        root.join("depth_selection").join("val_selection_cropped"),
    ];
    let base = match candidates.iter().find(|c| c.join("image").is_dir()) {
        Some(b) => b.clone(),
        None => return Ok(Vec::new()),
    };
    let image_dir = base.join("image");
    let velo_dir = base.join("velodyne_raw");
    let gt_dir = base.join("groundtruth_depth");
    let intr_dir = base.join("intrinsics");

    let mut frames = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(&image_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();

    for name in names {
        // Naming convention: the infix after `_sync_` distinguishes the
        // modality, e.g. ..._sync_image_0000000005_image_02.png vs
        // ..._sync_velodyne_raw_0000000005_image_02.png.
        let sparse_name = name.replacen("_image_", "_velodyne_raw_", 1);
        let gt_name = name.replacen("_image_", "_groundtruth_depth_", 1);
        let intr_name = format!("{}.txt", name.trim_end_matches(".png"));
        let frame = KittiValFrame {
            frame_id: name.trim_end_matches(".png").to_string(),
            image: image_dir.join(&name),
            sparse_depth: velo_dir.join(&sparse_name),
            gt_depth: gt_dir.join(&gt_name),
            intrinsics: intr_dir.join(&intr_name),
        };
        if frame.sparse_depth.is_file() && frame.gt_depth.is_file() && frame.intrinsics.is_file() {
            frames.push(frame);
        }
    }
    Ok(frames)
}
