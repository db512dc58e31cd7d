//! Run configuration: a flat `key = value` text file with `#` comments.
//! Unknown keys are rejected so sweep scripts fail loudly on typos.

use crate::error::{Error, Result};
use crate::solver::{Method, Preconditioner};

/// All knobs of a completion run. See [`RunConfig::default`] for the
/// values used when a key is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_superpixels: usize,
    pub compactness: f64,
    /// Unary (data) term weight. Must be positive: without it the normal
    /// equations are singular.
    pub alpha: f64,
    /// Colour pairwise weight.
    pub beta: f64,
    /// Surface-normal pairwise weight.
    pub gamma: f64,
    /// Depth (3D proximity) pairwise weight.
    pub delta: f64,
    /// Colour similarity bandwidth, 8-bit colour units.
    pub sigma_d: f64,
    /// 3D proximity bandwidth, meters.
    pub sigma_p: f64,
    /// Unary observation weight.
    pub sigma_i: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Predictions are clamped to (0, depth_cap] meters.
    pub depth_cap: f64,
    /// Fraction of LiDAR points kept before projection.
    pub subsample_fraction: f64,
    /// Neighborhood size for surface-normal estimation.
    pub normal_k: usize,
    pub solver: Method,
    pub preconditioner: Preconditioner,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            n_superpixels: 5500,
            compactness: 10.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
            sigma_d: 30.0,
            sigma_p: 1.0,
            sigma_i: 1.0,
            solver_tol: 1e-8,
            solver_max_iter: 10_000,
            depth_cap: 80.0,
            subsample_fraction: 1.0,
            normal_k: 10,
            solver: Method::Cgs,
            preconditioner: Preconditioner::None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let weight = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "{name} = {v} is outside [0, 1]"
                )));
            }
            Ok(())
        };
        weight("alpha", self.alpha)?;
        weight("beta", self.beta)?;
        weight("gamma", self.gamma)?;
        weight("delta", self.delta)?;
        if self.alpha == 0.0 {
            return Err(Error::Validation(
                "alpha must be positive: the system is singular without data terms".into(),
            ));
        }
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        positive("compactness", self.compactness)?;
        positive("sigma_d", self.sigma_d)?;
        positive("sigma_p", self.sigma_p)?;
        positive("sigma_i", self.sigma_i)?;
        positive("solver_tol", self.solver_tol)?;
        positive("depth_cap", self.depth_cap)?;
        if self.n_superpixels == 0 {
            return Err(Error::Validation("n_superpixels must be positive".into()));
        }
        if self.solver_max_iter == 0 {
            return Err(Error::Validation("solver_max_iter must be positive".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "subsample_fraction = {} is outside (0, 1]",
                self.subsample_fraction
            )));
        }
        if self.normal_k < 3 {
            return Err(Error::Validation("normal_k must be at least 3".into()));
        }
        Ok(())
    }
}

pub fn load_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Validation(format!("duplicate key `{key}`")));
        }
        let float = || -> Result<f64> {
            value.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("`{value}` is not a number"),
            })
        };
        let integer = || -> Result<usize> {
            value.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("`{value}` is not a non-negative integer"),
            })
        };
        match key {
            "n_superpixels" => cfg.n_superpixels = integer()?,
            "compactness" => cfg.compactness = float()?,
            "alpha" => cfg.alpha = float()?,
            "beta" => cfg.beta = float()?,
            "gamma" => cfg.gamma = float()?,
            "delta" => cfg.delta = float()?,
            "sigma_d" => cfg.sigma_d = float()?,
            "sigma_p" => cfg.sigma_p = float()?,
            "sigma_i" => cfg.sigma_i = float()?,
            "solver_tol" => cfg.solver_tol = float()?,
            "solver_max_iter" => cfg.solver_max_iter = integer()?,
            "depth_cap" => cfg.depth_cap = float()?,
            "subsample_fraction" => cfg.subsample_fraction = float()?,
            "normal_k" => cfg.normal_k = integer()?,
            "solver" => {
                cfg.solver = match value {
                    "cgs" => Method::Cgs,
                    "cg" => Method::Cg,
                    other => {
                        return Err(Error::Validation(format!(
                            "solver must be `cgs` or `cg`, got `{other}`"
                        )))
                    }
                }
            }
            "preconditioner" => {
                cfg.preconditioner = match value {
                    "none" => Preconditioner::None,
                    "jacobi" => Preconditioner::Jacobi,
                    other => {
                        return Err(Error::Validation(format!(
                            "preconditioner must be `none` or `jacobi`, got `{other}`"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::Validation(format!("unknown key `{other}`")));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_config(cfg: &RunConfig) -> String {
    let solver = match cfg.solver {
        Method::Cgs => "cgs",
        Method::Cg => "cg",
    };
    let precond = match cfg.preconditioner {
        Preconditioner::None => "none",
        Preconditioner::Jacobi => "jacobi",
    };
    format!(
        "n_superpixels = {}\n\
         compactness = {}\n\
         alpha = {}\n\
         beta = {}\n\
         gamma = {}\n\
         delta = {}\n\
         sigma_d = {}\n\
         sigma_p = {}\n\
         sigma_i = {}\n\
         solver_tol = {}\n\
         solver_max_iter = {}\n\
         depth_cap = {}\n\
         subsample_fraction = {}\n\
         normal_k = {}\n\
         solver = {}\n\
         preconditioner = {}\n",
        cfg.n_superpixels,
        cfg.compactness,
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        cfg.delta,
        cfg.sigma_d,
        cfg.sigma_p,
        cfg.sigma_i,
        cfg.solver_tol,
        cfg.solver_max_iter,
        cfg.depth_cap,
        cfg.subsample_fraction,
        cfg.normal_k,
        solver,
        precond,
    )
}
