//! External data formats: calibration text files, raw point-cloud binaries,
//! RGB images, 16-bit depth PNGs, and the run configuration file.
//!
//! All parsers are pure functions of their input bytes; none hold state.

mod calib;
mod cloud;
mod config;
mod image_data;

pub use calib::{parse_calibration, CalibrationSet};
pub use cloud::{read_point_cloud, write_point_cloud, RawPointCloud};
pub use config::{load_config, write_config, RunConfig};
pub use image_data::{
    read_depth_png, read_rgb_image, write_depth_png, write_gray8_png, write_rgb_png, DepthImage,
    RgbImage,
};
