//! Average test loss for anisotropic, not necessarily Gaussian, inputs in the
//! overparameterized regime. The isotropic h factors become the matrices
//! `H = Sigma (I - alpha Sigma)^2 + (alpha^2 / n) (F - Sigma^3)` and every term
//! of the loss is a trace.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{ensure_symmetric, standard_normal_matrix, trace_of_product};
use crate::model::{CovarianceSpec, GeneralCovariance, HyperParams, Regime, materialize_isotropic};
use crate::rng::{stream_rng, StreamTag};
use crate::theory_iso::{LossBreakdown, LossRegime, TheoryLoss};

#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub matrix: DMatrix<f64>,
    pub alpha: f64,
    pub n: usize,
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// Powers of `Sigma` reused across several `H` evaluations.
struct SigmaPowers {
    s1: DMatrix<f64>,
    s2: DMatrix<f64>,
    s3: DMatrix<f64>,
}

impl SigmaPowers {
    fn new(sigma: &DMatrix<f64>) -> Self {
        let s2 = sigma * sigma;
        let s3 = &s2 * sigma;
        Self {
            s1: sigma.clone(),
            s2,
            s3,
        }
    }

    fn h(&self, f: &DMatrix<f64>, alpha: f64, n: usize) -> DMatrix<f64> {
        let a2 = alpha * alpha;
        let h = &self.s1 - &self.s2 * (2.0 * alpha) + &self.s3 * a2 + (f - &self.s3) * (a2 / n as f64);
        symmetrize(h)
    }
}

pub fn h_matrix(cov: &GeneralCovariance, alpha: f64, n: usize) -> Result<HMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if cov.f_matrix.shape() != cov.sigma_x.shape() {
        return Err(Error::DimensionMismatch("F and Sigma differ in shape".into()));
    }
    Ok(HMatrix {
        matrix: SigmaPowers::new(&cov.sigma_x).h(&cov.f_matrix, alpha, n),
        alpha,
        n,
    })
}

/// Fourth-moment matrix of a Gaussian `x ~ N(0, Sigma)`:
/// `E[(x^T Sigma x) x x^T] = 2 Sigma^3 + Sigma Tr(Sigma^2)`.
pub fn gaussian_f(sigma_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma_x.is_square() {
        return Err(Error::DimensionMismatch("Sigma must be square".into()));
    }
    ensure_symmetric(sigma_x)?;
    let s2 = sigma_x * sigma_x;
    let s3 = &s2 * sigma_x;
    Ok(symmetrize(s3 * 2.0 + sigma_x * s2.trace()))
}

fn wishart_identity<R: rand::Rng + ?Sized>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let g = standard_normal_matrix(rng, p, p);
    symmetrize(&g * g.transpose())
}

/// `Sigma ~ W(I, p)`, `Sigma_w ~ (nu^2 / p) W(I, p)` drawn independently, and
/// `F` from [`gaussian_f`].
pub fn wishart_covariances(p: usize, nu: f64, seed: u64) -> Result<CovarianceSpec> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    let sigma_x = wishart_identity(&mut stream_rng(seed, 0, StreamTag::Covariance), p);
    let sigma_w = wishart_identity(&mut stream_rng(seed, 1, StreamTag::Covariance), p) * (nu * nu / p as f64);
    let f_matrix = gaussian_f(&sigma_x)?;
    Ok(CovarianceSpec::General(GeneralCovariance::new(sigma_x, sigma_w, f_matrix)?))
}

fn general_of<'a>(hp: &HyperParams, cov: &'a CovarianceSpec, owned: &'a mut Option<CovarianceSpec>) -> Result<&'a GeneralCovariance> {
    let spec = match cov {
        CovarianceSpec::Isotropic => owned.insert(materialize_isotropic(hp)),
        general => general,
    };
    let g = spec.general().expect("general covariance");
    if g.dim() != hp.p {
        return Err(Error::DimensionMismatch(format!(
            "covariance dimension {} does not match p = {}",
            g.dim(),
            hp.p
        )));
    }
    Ok(g)
}

fn require_zero_means(hp: &HyperParams) -> Result<()> {
    if hp.w0.iter().chain(&hp.omega0).any(|&v| v != 0.0) {
        return Err(Error::InvalidParameter(
            "the general-covariance loss requires w0 = 0 and omega0 = 0".into(),
        ));
    }
    Ok(())
}

/// Pieces of the loss that do not depend on `alpha_r`.
struct TrainingSide {
    powers: SigmaPowers,
    ht: DMatrix<f64>,
    tr_sigma2: f64,
    /// `n_v m {Tr(Sigma_w H_t) + sigma^2 [1 + alpha_t^2 Tr(Sigma^2) / n_t]} / Tr(H_t)^2`
    weight: f64,
}

impl TrainingSide {
    fn new(hp: &HyperParams, g: &GeneralCovariance) -> Self {
        let powers = SigmaPowers::new(&g.sigma_x);
        let ht = powers.h(&g.f_matrix, hp.alpha_t, hp.n_t);
        let tr_sigma2 = powers.s2.trace();
        let s2 = hp.sigma * hp.sigma;
        let target = trace_of_product(&g.sigma_w, &ht)
            + s2 * (1.0 + hp.alpha_t * hp.alpha_t / hp.n_t as f64 * tr_sigma2);
        let tr_ht = ht.trace();
        let weight = hp.total_validation() as f64 * target / (tr_ht * tr_ht);
        Self {
            powers,
            ht,
            tr_sigma2,
            weight,
        }
    }
}

/// Overparameterized loss for general covariances (zero means only). An
/// isotropic spec is materialised first.
pub fn loss_general(hp: &HyperParams, cov: &CovarianceSpec) -> Result<TheoryLoss> {
    hp.validate()?;
    hp.require_regime(Regime::Over)?;
    require_zero_means(hp)?;
    let mut owned = None;
    let g = general_of(hp, cov, &mut owned)?;
    let train = TrainingSide::new(hp, g);
    let hr = train.powers.h(&g.f_matrix, hp.alpha_r, hp.n_r);
    let s2 = hp.sigma * hp.sigma;
    let breakdown = LossBreakdown {
        noise: 0.5 * s2 * (1.0 + hp.alpha_r * hp.alpha_r / hp.n_r as f64 * train.tr_sigma2),
        task_variance: 0.5 * trace_of_product(&g.sigma_w, &hr),
        overfitting: 0.0,
        data_dependent: 0.5 * train.weight * trace_of_product(&hr, &train.ht),
    };
    Ok(TheoryLoss::from_breakdown(LossRegime::General, breakdown))
}

/// Exact argmin over `alpha_r` of [`loss_general`], from the coefficients of
/// the quadratic `c0 + c1 a + c2 a^2`.
pub fn alpha_r_optimum_general(hp: &HyperParams, cov: &CovarianceSpec) -> Result<f64> {
    hp.validate()?;
    hp.require_regime(Regime::Over)?;
    require_zero_means(hp)?;
    let mut owned = None;
    let g = general_of(hp, cov, &mut owned)?;
    let train = TrainingSide::new(hp, g);
    let pw = &train.powers;
    // H_r(a) = Sigma - 2 a Sigma^2 + a^2 M
    let m = &pw.s3 + (&g.f_matrix - &pw.s3) / hp.n_r as f64;
    let s2 = hp.sigma * hp.sigma;
    let c1 = -trace_of_product(&g.sigma_w, &pw.s2) - train.weight * trace_of_product(&pw.s2, &train.ht);
    let c2 = 0.5 * trace_of_product(&g.sigma_w, &m)
        + 0.5 * s2 * train.tr_sigma2 / hp.n_r as f64
        + 0.5 * train.weight * trace_of_product(&m, &train.ht);
    if c2 == 0.0 {
        return Err(Error::FlatObjective);
    }
    if c2 < 0.0 {
        return Err(Error::InvalidParameter("loss is concave in alpha_r for these covariances".into()));
    }
    Ok(-c1 / (2.0 * c2))
}
