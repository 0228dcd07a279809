//! JSON sweep configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceSpec, GeneralCovariance, HyperParams, Regime};
use crate::search::grid_points;
use crate::theory_general::{gaussian_f, wishart_covariances};

use super::matrix_io::read_matrix;

pub const MAX_GRID_POINTS: usize = 100_000;
pub const DEFAULT_RUNS: usize = 1000;
pub const DEFAULT_TEST_TASKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum CovMode {
    #[default]
    Isotropic,
    /// `Sigma ~ W(I, p)` and `Sigma_w ~ (nu^2/p) W(I, p)` drawn from `seed`.
    Wishart { seed: u64 },
    /// Matrix text files. `f_matrix` defaults to the Gaussian fourth moment.
    Explicit {
        sigma_x: PathBuf,
        sigma_w: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f_matrix: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    AlphaT,
    AlphaR,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::AlphaT => "alpha_t",
            SweepAxis::AlphaR => "alpha_r",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(Error::Config(format!("grid step must be positive, got {}", self.step)));
        }
        if !self.start.is_finite() || !self.stop.is_finite() || self.start >= self.stop {
            return Err(Error::Config(format!(
                "grid start must be below stop, got [{}, {}]",
                self.start, self.stop
            )));
        }
        let count = (self.stop - self.start) / self.step + 1.0;
        if count > MAX_GRID_POINTS as f64 {
            return Err(Error::Config(format!("grid has {count:.0} points, limit is {MAX_GRID_POINTS}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        grid_points(self.start, self.stop, self.step)
    }
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_test_tasks() -> usize {
    DEFAULT_TEST_TASKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: HyperParams,
    #[serde(default)]
    pub cov_mode: CovMode,
    /// Must agree with `p` versus `n_v m`; guards against silently switching
    /// formulas when a size is edited.
    pub regime: Regime,
    pub sweep_axis: SweepAxis,
    pub grid: Grid,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_test_tasks")]
    pub test_tasks_per_run: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.base.require_regime(self.regime)?;
        self.grid.validate()?;
        if self.runs < 2 {
            return Err(Error::Config("runs must be at least 2".into()));
        }
        if self.test_tasks_per_run == 0 {
            return Err(Error::Config("test_tasks_per_run must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config. Relative matrix paths are taken relative
    /// to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (CovMode::Explicit { sigma_x, sigma_w, f_matrix }, Some(dir)) = (&mut cfg.cov_mode, path.parent()) {
            for p in [Some(sigma_x), Some(sigma_w), f_matrix.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hyperparameters with the swept rate set to `value`.
    pub fn at(&self, value: f64) -> HyperParams {
        let mut hp = self.base.clone();
        match self.sweep_axis {
            SweepAxis::AlphaT => hp.alpha_t = value,
            SweepAxis::AlphaR => hp.alpha_r = value,
        }
        hp
    }

    pub fn covariance(&self) -> Result<CovarianceSpec> {
        let p = self.base.p;
        match &self.cov_mode {
            CovMode::Isotropic => Ok(CovarianceSpec::Isotropic),
            CovMode::Wishart { seed } => wishart_covariances(p, self.base.nu, *seed),
            CovMode::Explicit { sigma_x, sigma_w, f_matrix } => {
                let sx = read_matrix(sigma_x)?;
                let sw = read_matrix(sigma_w)?;
                let f = match f_matrix {
                    Some(path) => read_matrix(path)?,
                    None => gaussian_f(&sx)?,
                };
                let g = GeneralCovariance::new(sx, sw, f)?;
                if g.dim() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance files are {0}x{0}, p = {p}",
                        g.dim()
                    )));
                }
                Ok(CovarianceSpec::General(g))
            }
        }
    }
}
