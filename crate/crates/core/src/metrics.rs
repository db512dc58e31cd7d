//! Depth evaluation: RMSE, MAE, REL, and log10 error over the pixels with
//! valid ground truth, with the standard 80 m cap and an optional
//! evaluation crop.

use crate::error::{Error, Result};
use crate::io::DepthImage;

/// Which depth divides the absolute error in REL. The printed convention
/// of the evaluation protocol we reproduce divides by the prediction;
/// most of the literature divides by ground truth, so both are offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RelDenominator {
    #[default]
    Prediction,
    GroundTruth,
}

/// Pixel rectangle, `left/top` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.left
            && col < self.left + self.width
            && row >= self.top
            && row < self.top + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    pub log10: f64,
    pub n_evaluated: usize,
}

impl EvalResult {
    /// Single-line machine-readable record.
    pub fn format_line(&self) -> String {
        format!(
            "rmse={} mae={} rel={} log10={} n={}",
            self.rmse, self.mae, self.rel, self.log10, self.n_evaluated
        )
    }
}

/// Compare a prediction against ground truth.
///
/// The evaluation set is every pixel with valid ground truth (inside the
/// crop when one is given); predictions are clamped to `(0, cap]` first.
pub fn evaluate(
    pred: &DepthImage,
    gt: &DepthImage,
    cap: f64,
    crop: Option<CropRect>,
    rel_denominator: RelDenominator,
) -> Result<EvalResult> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Validation(format!(
            "dimension mismatch: prediction {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if let Some(c) = crop {
        if c.left + c.width > gt.width || c.top + c.height > gt.height {
            return Err(Error::Validation("crop exceeds image bounds".into()));
        }
    }
    if !(cap > 0.0) {
        return Err(Error::Validation("depth cap must be positive".into()));
    }

    let mut n = 0usize;
    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut log_sum = 0.0;
    for row in 0..gt.height {
        for col in 0..gt.width {
            if let Some(c) = crop {
                if !c.contains(col, row) {
                    continue;
                }
            }
            let i = row * gt.width + col;
            if !gt.valid[i] {
                continue;
            }
            let d = gt.depth[i];
            let d_hat = pred.depth[i].clamp(f64::MIN_POSITIVE, cap);
            let err = d_hat - d;
            sq_sum += err * err;
            abs_sum += err.abs();
            let denom = match rel_denominator {
                RelDenominator::Prediction => d_hat,
                RelDenominator::GroundTruth => d,
            };
            rel_sum += err.abs() / denom;
            log_sum += (d_hat.log10() - d.log10()).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Validation(
            "no valid ground-truth pixels in the evaluation region".into(),
        ));
    }
    let nf = n as f64;
    Ok(EvalResult {
        rmse: (sq_sum / nf).sqrt(),
        mae: abs_sum / nf,
        rel: rel_sum / nf,
        log10: log_sum / nf,
        n_evaluated: n,
    })
}

/// Convert error units (e.g. meters to millimeters with `factor = 1000`).
/// Dimensionless metrics are untouched.
pub fn unit_scale(result: &EvalResult, factor: f64) -> EvalResult {
    assert!(factor > 0.0, "unit factor must be positive");
    EvalResult {
        rmse: result.rmse * factor,
        mae: result.mae * factor,
        rel: result.rel,
        log10: result.log10,
        n_evaluated: result.n_evaluated,
    }
}
