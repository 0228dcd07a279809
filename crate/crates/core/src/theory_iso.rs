//! Average test loss for isotropic Gaussian inputs, in closed form.
//!
//! Both regimes share the structure
//! `sigma^2/2 (1 + alpha_r^2 p / n_r) + h_r * K`, where `K` collects
//! everything that depends on meta-training. Remainder terms of the
//! asymptotic expansions are not modelled.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{HyperParams, Regime};
use crate::moments::{g_polynomials, moment_set};

/// Which formula produced a [`TheoryLoss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossRegime {
    Over,
    Under,
    General,
}

impl std::fmt::Display for LossRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossRegime::Over => "over",
            LossRegime::Under => "under",
            LossRegime::General => "general",
        })
    }
}

/// Additive components of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Label noise seen at test time, including noise injected by adaptation.
    pub noise: f64,
    /// Spread of task parameters around their mean.
    pub task_variance: f64,
    /// Distance between the outer-loop initial condition and the task mean.
    pub overfitting: f64,
    /// Error of the meta-parameter estimated from finite meta-training data.
    pub data_dependent: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.noise + self.task_variance + self.overfitting + self.data_dependent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryLoss {
    pub value: f64,
    pub regime: LossRegime,
    pub breakdown: LossBreakdown,
}

impl TheoryLoss {
    pub(crate) fn from_breakdown(regime: LossRegime, breakdown: LossBreakdown) -> Self {
        Self {
            value: breakdown.total(),
            regime,
            breakdown,
        }
    }
}

/// `(1 - alpha)^2 + alpha^2 (p + 1) / n`; strictly positive for every real
/// `alpha`.
pub fn h_factor(alpha: f64, n: usize, p: usize) -> f64 {
    (1.0 - alpha).powi(2) + alpha * alpha * (p as f64 + 1.0) / n as f64
}

fn adaptation_noise(hp: &HyperParams) -> f64 {
    let s2 = hp.sigma * hp.sigma;
    0.5 * s2 * (1.0 + hp.alpha_r * hp.alpha_r * hp.p as f64 / hp.n_r as f64)
}

/// Overparameterized loss, `p > n_v m`.
pub fn loss_overparam(hp: &HyperParams) -> Result<TheoryLoss> {
    hp.validate()?;
    hp.require_regime(Regime::Over)?;
    Ok(TheoryLoss::from_breakdown(LossRegime::Over, over_terms(hp)))
}

fn over_terms(hp: &HyperParams) -> LossBreakdown {
    let p = hp.p as f64;
    let ratio = hp.total_validation() as f64 / p;
    let s2 = hp.sigma * hp.sigma;
    let ht = h_factor(hp.alpha_t, hp.n_t, hp.p);
    let hr = h_factor(hp.alpha_r, hp.n_r, hp.p);
    let inner_noise = 1.0 + hp.alpha_t * hp.alpha_t * p / hp.n_t as f64;
    LossBreakdown {
        noise: adaptation_noise(hp),
        task_variance: hr * 0.5 * hp.nu * hp.nu * (1.0 + ratio),
        overfitting: hr * 0.5 * (1.0 - ratio) * hp.init_offset_sq(),
        data_dependent: hr * 0.5 * s2 * ratio * inner_noise / ht,
    }
}

/// Underparameterized loss, `p < n_v m`.
pub fn loss_underparam(hp: &HyperParams) -> Result<TheoryLoss> {
    hp.validate()?;
    hp.require_regime(Regime::Under)?;
    under_terms(hp).map(|b| TheoryLoss::from_breakdown(LossRegime::Under, b))
}

fn under_terms(hp: &HyperParams) -> Result<LossBreakdown> {
    let p = hp.p as f64;
    let n_v = hp.n_v as f64;
    let s2 = hp.sigma * hp.sigma;
    let nu2 = hp.nu * hp.nu;
    let a = hp.alpha_t;
    let ms = moment_set(hp.n_t, hp.p)?;
    let g = g_polynomials(a, &ms);
    // h_t below is 1 - 2a + a^2 mu2, identical to h_factor(a, n_t, p)
    let ht = h_factor(a, hp.n_t, hp.p);
    let hr = h_factor(hp.alpha_r, hp.n_r, hp.p);
    let noise_part = s2 * (ht + a * a / hp.n_t as f64 * ((n_v + 1.0) * g.g1 + p * g.g2));
    let variance_part = nu2 / p * ((n_v + 1.0) * g.g3 + p * g.g4);
    let prefactor = hr / (2.0 * ht * ht) * p / hp.total_validation() as f64;
    Ok(LossBreakdown {
        noise: adaptation_noise(hp),
        task_variance: 0.5 * hr * nu2,
        overfitting: 0.0,
        data_dependent: prefactor * (noise_part + variance_part),
    })
}

/// Stationary points of the overparameterized loss in `alpha_t`, and the
/// optimal adaptation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateExtrema {
    /// Minimum; always negative.
    pub alpha_minus: f64,
    /// Maximum; always positive.
    pub alpha_plus: f64,
    /// Argmin over `alpha_r`; `None` when the loss does not depend on it.
    pub alpha_r_star: Option<f64>,
}

/// Roots of `p a^2 + (n_t + 1) a - n_t = 0`.
pub fn alpha_t_extrema(hp: &HyperParams) -> Result<RateExtrema> {
    hp.validate()?;
    hp.require_regime(Regime::Over)?;
    let (n, p) = (hp.n_t as f64, hp.p as f64);
    let centre = -(n + 1.0) / (2.0 * p);
    let radius = (centre * centre + n / p).sqrt();
    let alpha_r_star = match alpha_r_optimum(hp, Regime::Over) {
        Ok(a) => Some(a),
        Err(Error::FlatObjective) => None,
        Err(e) => return Err(e),
    };
    Ok(RateExtrema {
        alpha_minus: centre - radius,
        alpha_plus: centre + radius,
        alpha_r_star,
    })
}

/// `1 / (1 + (p + 1) / n_r)`, the minimiser of `h_r` alone.
pub fn alpha_r_upper_bound(hp: &HyperParams) -> f64 {
    1.0 / (1.0 + (hp.p as f64 + 1.0) / hp.n_r as f64)
}

/// Exact argmin over `alpha_r` of the isotropic loss for `regime`.
///
/// The loss is `c + sigma^2 p a^2 / (2 n_r) + K h_r(a)`, so the stationarity
/// condition is linear in `a`.
pub fn alpha_r_optimum(hp: &HyperParams, regime: Regime) -> Result<f64> {
    hp.validate()?;
    hp.require_regime(regime)?;
    let terms = match regime {
        Regime::Over => over_terms(hp),
        Regime::Under => under_terms(hp)?,
    };
    let hr = h_factor(hp.alpha_r, hp.n_r, hp.p);
    // K = (everything multiplied by h_r) / h_r
    let weight = (terms.task_variance + terms.overfitting + terms.data_dependent) / hr;
    let s2 = hp.sigma * hp.sigma;
    let noise_curvature = s2 * hp.p as f64 / hp.n_r as f64;
    let c = 1.0 + (hp.p as f64 + 1.0) / hp.n_r as f64;
    let denom = noise_curvature + 2.0 * weight * c;
    if denom == 0.0 {
        return Err(Error::FlatObjective);
    }
    Ok(2.0 * weight / denom)
}

/// Slope of the underparameterized loss in `alpha_t` at zero: the closed form
/// `sigma^2 p / (n_v m)` next to a central finite difference of the full loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeAtZero {
    pub closed_form: f64,
    pub finite_difference: f64,
    pub relative_gap: f64,
}

impl SlopeAtZero {
    pub const AGREEMENT_TOL: f64 = 1e-6;
    pub const FD_STEP: f64 = 1e-6;

    pub fn agrees(&self) -> bool {
        self.relative_gap <= Self::AGREEMENT_TOL
    }
}

pub fn d_loss_d_alpha_t_at_zero(hp: &HyperParams) -> Result<SlopeAtZero> {
    hp.validate()?;
    hp.require_regime(Regime::Under)?;
    let closed_form = hp.sigma * hp.sigma * hp.p as f64 / hp.total_validation() as f64;
    let finite_difference = finite_difference_slope(hp)?;
    let scale = closed_form.abs().max(finite_difference.abs());
    let relative_gap = if scale == 0.0 {
        0.0
    } else {
        (closed_form - finite_difference).abs() / scale
    };
    Ok(SlopeAtZero {
        closed_form,
        finite_difference,
        relative_gap,
    })
}

fn finite_difference_slope(hp: &HyperParams) -> Result<f64> {
    let h = SlopeAtZero::FD_STEP;
    let at = |a: f64| loss_underparam(&hp.clone().with_rates(a, hp.alpha_r)).map(|l| l.value);
    Ok((at(h)? - at(-h)?) / (2.0 * h))
}
