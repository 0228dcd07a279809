//! Hyperparameters and the mixed-linear-regression generative model.
//!
//! Each task draws a parameter vector `w` once and labels its inputs as
//! `y = X w + z` with Gaussian noise `z ~ N(0, sigma^2 I)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_square, ensure_symmetric, standard_normal_matrix, standard_normal_vector, symmetric_sqrt,
};

pub const DEFAULT_N_S: usize = 50;

/// Overparameterized (`p > n_v m`) or underparameterized (`p < n_v m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Over,
    Under,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Over => f.write_str("over"),
            Regime::Under => f.write_str("under"),
        }
    }
}

/// All scalar experiment knobs plus the task mean `w0` and the outer-loop
/// initial condition `omega0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperParams")]
pub struct HyperParams {
    pub n_t: usize,
    pub n_v: usize,
    pub n_r: usize,
    pub n_s: usize,
    pub m: usize,
    pub p: usize,
    pub alpha_t: f64,
    pub alpha_r: f64,
    pub sigma: f64,
    pub nu: f64,
    pub w0: Vec<f64>,
    pub omega0: Vec<f64>,
}

impl HyperParams {
    /// Zero task mean and zero initial condition, both rates zero, `n_s = 50`.
    pub fn zero_mean(n_t: usize, n_v: usize, n_r: usize, m: usize, p: usize, sigma: f64, nu: f64) -> Self {
        Self {
            n_t,
            n_v,
            n_r,
            n_s: DEFAULT_N_S,
            m,
            p,
            alpha_t: 0.0,
            alpha_r: 0.0,
            sigma,
            nu,
            w0: vec![0.0; p],
            omega0: vec![0.0; p],
        }
    }

    pub fn with_rates(mut self, alpha_t: f64, alpha_r: f64) -> Self {
        self.alpha_t = alpha_t;
        self.alpha_r = alpha_r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("n_t", self.n_t),
            ("n_v", self.n_v),
            ("n_r", self.n_r),
            ("n_s", self.n_s),
            ("m", self.m),
            ("p", self.p),
        ] {
            if value == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        for (name, value) in [("alpha_t", self.alpha_t), ("alpha_r", self.alpha_r)] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        for (name, value) in [("sigma", self.sigma), ("nu", self.nu)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        for (name, v) in [("w0", &self.w0), ("omega0", &self.omega0)] {
            if v.len() != self.p {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has length {}, expected p = {}",
                    v.len(),
                    self.p
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Total number of validation points across meta-training tasks.
    pub fn total_validation(&self) -> usize {
        self.n_v * self.m
    }

    /// Regime implied by the dimensions; `p == n_v m` is rejected.
    pub fn regime(&self) -> Result<Regime> {
        let total = self.total_validation();
        match self.p.cmp(&total) {
            std::cmp::Ordering::Greater => Ok(Regime::Over),
            std::cmp::Ordering::Less => Ok(Regime::Under),
            std::cmp::Ordering::Equal => Err(Error::RegimeBoundary { p: self.p }),
        }
    }

    /// Checks that the dimensions put us in `expected`.
    pub fn require_regime(&self, expected: Regime) -> Result<()> {
        let actual = self.regime()?;
        if actual != expected {
            return Err(Error::RegimeMismatch(format!(
                "p = {}, n_v*m = {} is the {actual}parameterized regime, not {expected}parameterized",
                self.p,
                self.total_validation()
            )));
        }
        Ok(())
    }

    pub fn w0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w0)
    }

    pub fn omega0_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.omega0)
    }

    /// `|omega0 - w0|^2`.
    pub fn init_offset_sq(&self) -> f64 {
        self.omega0
            .iter()
            .zip(&self.w0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// A vector given either literally or as one value repeated `p` times.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum VectorSpec {
    Fill(f64),
    Values(Vec<f64>),
}

impl VectorSpec {
    fn expand(self, p: usize) -> Vec<f64> {
        match self {
            VectorSpec::Fill(x) => vec![x; p],
            VectorSpec::Values(v) => v,
        }
    }
}

fn default_n_s() -> usize {
    DEFAULT_N_S
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyperParams {
    n_t: usize,
    n_v: usize,
    n_r: usize,
    #[serde(default = "default_n_s")]
    n_s: usize,
    m: usize,
    p: usize,
    #[serde(default)]
    alpha_t: f64,
    #[serde(default)]
    alpha_r: f64,
    sigma: f64,
    nu: f64,
    #[serde(default)]
    w0: Option<VectorSpec>,
    #[serde(default)]
    omega0: Option<VectorSpec>,
}

impl TryFrom<RawHyperParams> for HyperParams {
    type Error = Error;

    fn try_from(raw: RawHyperParams) -> Result<Self> {
        let p = raw.p;
        let hp = HyperParams {
            n_t: raw.n_t,
            n_v: raw.n_v,
            n_r: raw.n_r,
            n_s: raw.n_s,
            m: raw.m,
            p,
            alpha_t: raw.alpha_t,
            alpha_r: raw.alpha_r,
            sigma: raw.sigma,
            nu: raw.nu,
            w0: raw.w0.map_or_else(|| vec![0.0; p], |v| v.expand(p)),
            omega0: raw.omega0.map_or_else(|| vec![0.0; p], |v| v.expand(p)),
        };
        hp.validate()?;
        Ok(hp)
    }
}

/// Second moments of inputs and task parameters plus the fourth-moment
/// matrix `F = E[(x^T Sigma x) x x^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralCovariance {
    pub sigma_x: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub f_matrix: DMatrix<f64>,
}

impl GeneralCovariance {
    pub fn new(sigma_x: DMatrix<f64>, sigma_w: DMatrix<f64>, f_matrix: DMatrix<f64>) -> Result<Self> {
        let p = sigma_x.nrows();
        ensure_square(&sigma_x, p, "sigma_x")?;
        ensure_square(&sigma_w, p, "sigma_w")?;
        ensure_square(&f_matrix, p, "F")?;
        ensure_symmetric(&sigma_x)?;
        ensure_symmetric(&sigma_w)?;
        ensure_symmetric(&f_matrix)?;
        Ok(Self {
            sigma_x,
            sigma_w,
            f_matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_x.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// `Sigma = I`, `Sigma_w = (nu^2/p) I`, `w` centred at `w0`.
    Isotropic,
    /// Zero-mean inputs and parameters with explicit covariances.
    General(GeneralCovariance),
}

impl CovarianceSpec {
    pub fn general(&self) -> Option<&GeneralCovariance> {
        match self {
            CovarianceSpec::Isotropic => None,
            CovarianceSpec::General(g) => Some(g),
        }
    }
}

/// Isotropic statistics written out as explicit matrices.
pub fn materialize_isotropic(hp: &HyperParams) -> CovarianceSpec {
    let p = hp.p;
    let eye = DMatrix::<f64>::identity(p, p);
    CovarianceSpec::General(GeneralCovariance {
        sigma_w: &eye * (hp.nu * hp.nu / p as f64),
        f_matrix: &eye * (p as f64 + 2.0),
        sigma_x: eye,
    })
}

/// One meta-training task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub w: DVector<f64>,
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_val: DMatrix<f64>,
    pub y_val: DVector<f64>,
}

/// One meta-test task: target split for adaptation, test split for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTaskData {
    pub w_prime: DVector<f64>,
    pub x_target: DMatrix<f64>,
    pub y_target: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
}

/// Draws tasks for fixed `(hp, cov)`. Covariance square roots are factored
/// once at construction.
#[derive(Debug, Clone)]
pub struct TaskSampler<'a> {
    hp: &'a HyperParams,
    input_root: Option<DMatrix<f64>>,
    weight_root: Option<DMatrix<f64>>,
}

impl<'a> TaskSampler<'a> {
    pub fn new(hp: &'a HyperParams, cov: &CovarianceSpec) -> Result<Self> {
        hp.validate()?;
        let (input_root, weight_root) = match cov {
            CovarianceSpec::Isotropic => (None, None),
            CovarianceSpec::General(g) => {
                if g.dim() != hp.p {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance dimension {} does not match p = {}",
                        g.dim(),
                        hp.p
                    )));
                }
                (Some(symmetric_sqrt(&g.sigma_x)?), Some(symmetric_sqrt(&g.sigma_w)?))
            }
        };
        Ok(Self {
            hp,
            input_root,
            weight_root,
        })
    }

    pub fn hyper_params(&self) -> &HyperParams {
        self.hp
    }

    /// Task parameter. In general mode the mean is zero whatever `w0` says.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let g = standard_normal_vector(rng, self.hp.p);
        match &self.weight_root {
            None => self.hp.w0_vector() + g * (self.hp.nu / (self.hp.p as f64).sqrt()),
            Some(root) => root * g,
        }
    }

    /// `rows` i.i.d. inputs, one per row.
    pub fn sample_inputs<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize) -> DMatrix<f64> {
        let g = standard_normal_matrix(rng, rows, self.hp.p);
        match &self.input_root {
            None => g,
            Some(root) => g * root,
        }
    }

    pub fn sample_labels<R: Rng + ?Sized>(&self, rng: &mut R, x: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
        let z = standard_normal_vector(rng, x.nrows()) * self.hp.sigma;
        x * w + z
    }

    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R) -> TaskData {
        let w = self.sample_weights(rng);
        let x_train = self.sample_inputs(rng, self.hp.n_t);
        let y_train = self.sample_labels(rng, &x_train, &w);
        let x_val = self.sample_inputs(rng, self.hp.n_v);
        let y_val = self.sample_labels(rng, &x_val, &w);
        TaskData {
            w,
            x_train,
            y_train,
            x_val,
            y_val,
        }
    }

    pub fn sample_test_task<R: Rng + ?Sized>(&self, rng: &mut R) -> TestTaskData {
        let w_prime = self.sample_weights(rng);
        let x_target = self.sample_inputs(rng, self.hp.n_r);
        let y_target = self.sample_labels(rng, &x_target, &w_prime);
        let x_test = self.sample_inputs(rng, self.hp.n_s);
        let y_test = self.sample_labels(rng, &x_test, &w_prime);
        TestTaskData {
            w_prime,
            x_target,
            y_target,
            x_test,
            y_test,
        }
    }
}

pub fn sample_task<R: Rng + ?Sized>(hp: &HyperParams, cov: &CovarianceSpec, rng: &mut R) -> Result<TaskData> {
    Ok(TaskSampler::new(hp, cov)?.sample_task(rng))
}

pub fn sample_test_task<R: Rng + ?Sized>(hp: &HyperParams, cov: &CovarianceSpec, rng: &mut R) -> Result<TestTaskData> {
    Ok(TaskSampler::new(hp, cov)?.sample_test_task(rng))
}
