//! Gaussian Wishart moments `E[f(X^T X)]` for an `n x p` standard Gaussian
//! `X`, their normalised forms (the mu quantities), the g polynomials built
//! from them, and a Monte Carlo estimator used to check all of it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{standard_normal_matrix, trace_of_product};
use crate::rng::{stream_rng, StreamTag};

/// Normalised moments; each is `1 + O(1/n)` corrections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSet {
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    pub mu11: f64,
    pub mu21: f64,
    pub mu22: f64,
}

impl MomentSet {
    /// Normaliser of `E[X^T X Tr((X^T X)^2)]`. Same rational function as `mu21`.
    pub fn mu12(n: usize, p: usize) -> f64 {
        let (n, p) = (n as f64, p as f64);
        (n * n * p + n * p * p + n * p + 4.0 * n + 4.0 * p + 4.0) / (n * n * p)
    }
}

fn check_counts(n: usize, p: usize) -> Result<()> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "moment dimensions must be positive, got n = {n}, p = {p}"
        )));
    }
    Ok(())
}

pub fn moment_set(n: usize, p: usize) -> Result<MomentSet> {
    check_counts(n, p)?;
    let (n, p) = (n as f64, p as f64);
    let (n2, n3, p2, p3) = (n * n, n * n * n, p * p, p * p * p);
    Ok(MomentSet {
        mu2: (n + p + 1.0) / n,
        mu3: (n2 + p2 + 3.0 * n * p + 3.0 * n + 3.0 * p + 4.0) / n2,
        mu4: (n3 + p3 + 6.0 * n2 * p + 6.0 * n * p2 + 6.0 * n2 + 6.0 * p2 + 17.0 * n * p + 21.0 * n + 21.0 * p + 20.0)
            / n3,
        mu11: (n2 * p + 2.0 * n) / (n2 * p),
        mu21: (n2 * p + n * p2 + n * p + 4.0 * n + 4.0 * p + 4.0) / (n2 * p),
        mu22: (n3 * p + n * p3 + 2.0 * n2 * p2 + 2.0 * n2 * p + 2.0 * n * p2 + 8.0 * n2 + 8.0 * p2 + 21.0 * n * p
            + 20.0 * n
            + 20.0 * p
            + 20.0)
            / (n3 * p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GPolynomials {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
}

pub fn g_polynomials(alpha_t: f64, ms: &MomentSet) -> GPolynomials {
    let a = alpha_t;
    let (a2, a3, a4) = (a * a, a * a * a, a * a * a * a);
    GPolynomials {
        g1: 1.0 - 2.0 * a * ms.mu2 + a2 * ms.mu3,
        g2: 1.0 - 2.0 * a * ms.mu11 + a2 * ms.mu21,
        g3: 1.0 - 4.0 * a + 6.0 * a2 * ms.mu2 - 4.0 * a3 * ms.mu3 + a4 * ms.mu4,
        g4: 1.0 - 4.0 * a + 2.0 * a2 * ms.mu2 + 4.0 * a2 * ms.mu11 - 4.0 * a3 * ms.mu21 + a4 * ms.mu22,
    }
}

/// A matrix-valued function of `W = X^T X` whose expectation has a closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentExpr {
    /// `W`
    XtX,
    /// `W^2`
    XtX2,
    /// `W^3`
    XtX3,
    /// `W^4`
    XtX4,
    /// `W Tr(W)`
    XtXTr,
    /// `W^2 Tr(W)`
    XtX2Tr,
    /// `W Tr(W^2)`
    XtXTr2,
    /// `W^2 Tr(W^2)`
    XtX2Tr2,
    /// `X^T C X` for a fixed symmetric `n x n` matrix `C`.
    XtCX(DMatrix<f64>),
    /// `W D W` for a fixed symmetric `p x p` matrix `D`.
    XtXDXtX(DMatrix<f64>),
}

impl MomentExpr {
    /// The eight pure-Wishart identities, in a fixed order.
    pub fn wishart_suite() -> Vec<MomentExpr> {
        vec![
            MomentExpr::XtX,
            MomentExpr::XtX2,
            MomentExpr::XtX3,
            MomentExpr::XtX4,
            MomentExpr::XtXTr,
            MomentExpr::XtX2Tr,
            MomentExpr::XtXTr2,
            MomentExpr::XtX2Tr2,
        ]
    }

    pub fn id(&self) -> &'static str {
        match self {
            MomentExpr::XtX => "XtX",
            MomentExpr::XtX2 => "XtX^2",
            MomentExpr::XtX3 => "XtX^3",
            MomentExpr::XtX4 => "XtX^4",
            MomentExpr::XtXTr => "XtX*Tr(XtX)",
            MomentExpr::XtX2Tr => "XtX^2*Tr(XtX)",
            MomentExpr::XtXTr2 => "XtX*Tr(XtX^2)",
            MomentExpr::XtX2Tr2 => "XtX^2*Tr(XtX^2)",
            MomentExpr::XtCX(_) => "XtCX",
            MomentExpr::XtXDXtX(_) => "XtX*D*XtX",
        }
    }

    fn check(&self, n: usize, p: usize) -> Result<()> {
        match self {
            MomentExpr::XtCX(c) if c.shape() != (n, n) => Err(Error::DimensionMismatch(format!(
                "C must be {n}x{n}, got {}x{}",
                c.nrows(),
                c.ncols()
            ))),
            MomentExpr::XtXDXtX(d) if d.shape() != (p, p) => Err(Error::DimensionMismatch(format!(
                "D must be {p}x{p}, got {}x{}",
                d.nrows(),
                d.ncols()
            ))),
            _ => Ok(()),
        }
    }

    /// Closed-form expectation over `n x p` standard Gaussian `X`.
    pub fn closed_form(&self, n: usize, p: usize) -> Result<DMatrix<f64>> {
        check_counts(n, p)?;
        self.check(n, p)?;
        let ms = moment_set(n, p)?;
        let (nf, pf) = (n as f64, p as f64);
        let eye = DMatrix::<f64>::identity(p, p);
        let scale = match self {
            MomentExpr::XtX => nf,
            MomentExpr::XtX2 => nf * nf * ms.mu2,
            MomentExpr::XtX3 => nf.powi(3) * ms.mu3,
            MomentExpr::XtX4 => nf.powi(4) * ms.mu4,
            MomentExpr::XtXTr => pf * nf * nf * ms.mu11,
            MomentExpr::XtX2Tr => pf * nf.powi(3) * ms.mu21,
            MomentExpr::XtXTr2 => pf * nf.powi(3) * MomentSet::mu12(n, p),
            MomentExpr::XtX2Tr2 => pf * nf.powi(4) * ms.mu22,
            MomentExpr::XtCX(c) => c.trace(),
            MomentExpr::XtXDXtX(d) => {
                return Ok(d * (nf * (nf + 1.0)) + &eye * (nf * d.trace()));
            }
        };
        Ok(eye * scale)
    }

    fn evaluate(&self, x: &DMatrix<f64>, w: &WishartPowers) -> DMatrix<f64> {
        match self {
            MomentExpr::XtX => w.w1.clone(),
            MomentExpr::XtX2 => w.w2.clone(),
            MomentExpr::XtX3 => &w.w2 * &w.w1,
            MomentExpr::XtX4 => &w.w2 * &w.w2,
            MomentExpr::XtXTr => &w.w1 * w.tr1,
            MomentExpr::XtX2Tr => &w.w2 * w.tr1,
            MomentExpr::XtXTr2 => &w.w1 * w.tr2,
            MomentExpr::XtX2Tr2 => &w.w2 * w.tr2,
            MomentExpr::XtCX(c) => x.transpose() * c * x,
            MomentExpr::XtXDXtX(d) => &w.w1 * d * &w.w1,
        }
    }
}

impl fmt::Display for MomentExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MomentExpr {
    type Err = Error;

    /// Parses the identifiers of the eight pure identities. `XtCX` and
    /// `XtX*D*XtX` need a matrix and are built directly.
    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        MomentExpr::wishart_suite()
            .into_iter()
            .find(|e| e.id().eq_ignore_ascii_case(&compact))
            .ok_or_else(|| Error::UnknownExpression(s.to_string()))
    }
}

struct WishartPowers {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    tr1: f64,
    tr2: f64,
}

impl WishartPowers {
    fn new(x: &DMatrix<f64>) -> Self {
        let w1 = x.transpose() * x;
        let w2 = &w1 * &w1;
        let tr1 = w1.trace();
        let tr2 = trace_of_product(&w1, &w1);
        Self { w1, w2, tr1, tr2 }
    }
}

/// Entrywise sample mean and standard error of a matrix-valued statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub samples: usize,
}

impl MomentEstimate {
    /// Largest `|mean - expected| / std_error` over entries. Entries with a
    /// zero standard error count as infinitely far unless they match exactly.
    pub fn max_z_score(&self, expected: &DMatrix<f64>) -> f64 {
        self.mean
            .iter()
            .zip(self.std_error.iter())
            .zip(expected.iter())
            .map(|((m, s), e)| {
                let diff = (m - e).abs();
                if *s > 0.0 {
                    diff / s
                } else if diff <= 1e-12 * e.abs().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Per-entry running sums for one batch; combined with Chan's update.
#[derive(Clone)]
struct Accumulator {
    count: usize,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl Accumulator {
    fn from_sums(count: usize, sum: DMatrix<f64>, sum_sq: DMatrix<f64>) -> Self {
        let c = count as f64;
        let mean = &sum / c;
        let m2 = sum_sq - sum.component_mul(&mean);
        Self { count, mean, m2 }
    }

    fn merge(self, other: Self) -> Self {
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n);
        let m2 = self.m2 + other.m2 + delta.component_mul(&delta) * (na * nb / n);
        Self {
            count: self.count + other.count,
            mean,
            m2,
        }
    }

    fn finish(self) -> MomentEstimate {
        let n = self.count as f64;
        let std_error = self.m2.map(|v| (v.max(0.0) / (n - 1.0) / n).sqrt());
        MomentEstimate {
            mean: self.mean,
            std_error,
            samples: self.count,
        }
    }
}

const BATCH: usize = 1 << 13;

/// Monte Carlo estimate of `E[expr]` over `samples` independent draws.
pub fn mc_moment(n: usize, p: usize, expr: &MomentExpr, samples: usize, seed: u64) -> Result<MomentEstimate> {
    let mut out = mc_moments(n, p, std::slice::from_ref(expr), samples, seed)?;
    Ok(out.remove(0))
}

/// Several expressions estimated on one shared set of draws.
///
/// Draws are split into fixed-size batches with their own keyed streams and
/// reduced in batch order, so the result does not depend on thread count.
pub fn mc_moments(
    n: usize,
    p: usize,
    exprs: &[MomentExpr],
    samples: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check_counts(n, p)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    for e in exprs {
        e.check(n, p)?;
    }
    let batches = samples.div_ceil(BATCH);
    let partials: Vec<Vec<Accumulator>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH.min(samples - b * BATCH);
            let mut rng = stream_rng(seed, b as u64, StreamTag::Moments);
            let mut sums = vec![(DMatrix::zeros(p, p), DMatrix::zeros(p, p)); exprs.len()];
            for _ in 0..count {
                let x = standard_normal_matrix(&mut rng, n, p);
                let powers = WishartPowers::new(&x);
                for (expr, (sum, sum_sq)) in exprs.iter().zip(sums.iter_mut()) {
                    let v = expr.evaluate(&x, &powers);
                    *sum_sq += v.component_mul(&v);
                    *sum += v;
                }
            }
            sums.into_iter()
                .map(|(s, s2)| Accumulator::from_sums(count, s, s2))
                .collect()
        })
        .collect();

    let mut merged: Option<Vec<Accumulator>> = None;
    for part in partials {
        merged = Some(match merged {
            None => part,
            Some(acc) => acc.into_iter().zip(part).map(|(a, b)| a.merge(b)).collect(),
        });
    }
    Ok(merged
        .expect("at least one batch")
        .into_iter()
        .map(Accumulator::finish)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_gaussian_fourth_moment() {
        assert_eq!(moment_set(1, 1).unwrap().mu2, 3.0);
    }

    #[test]
    fn mu2_for_five_by_thirty() {
        assert!((moment_set(5, 30).unwrap().mu2 - 7.2).abs() < 1e-15);
    }

    #[test]
    fn mu3_hand_value() {
        // (25 + 900 + 450 + 15 + 90 + 4) / 25
        assert!((moment_set(5, 30).unwrap().mu3 - 59.36).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_dimensions() {
        assert!(moment_set(0, 3).is_err());
        assert!(moment_set(3, 0).is_err());
    }

    #[test]
    fn g_at_zero_rate_is_one() {
        let g = g_polynomials(0.0, &moment_set(4, 7).unwrap());
        assert_eq!((g.g1, g.g2, g.g3, g.g4), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn g1_hand_value() {
        let g = g_polynomials(0.2, &moment_set(5, 30).unwrap());
        assert!((g.g1 - 0.4944).abs() < 1e-12, "{}", g.g1);
    }

    #[test]
    fn g3_positive_on_grid() {
        for n in 1..=40 {
            for p in 1..=40 {
                let ms = moment_set(n, p).unwrap();
                assert!(g_polynomials(1.0, &ms).g3 > 0.0, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn all_moments_at_least_one() {
        for n in 1..=12 {
            for p in 1..=12 {
                let ms = moment_set(n, p).unwrap();
                for v in [ms.mu2, ms.mu3, ms.mu4, ms.mu11, ms.mu21, ms.mu22] {
                    assert!(v >= 1.0);
                }
                assert_eq!(ms.mu21, MomentSet::mu12(n, p));
            }
        }
    }

    #[test]
    fn expression_ids_parse() {
        for e in MomentExpr::wishart_suite() {
            assert_eq!(e.id().parse::<MomentExpr>().unwrap(), e);
        }
        assert!(matches!("XtX^5".parse::<MomentExpr>(), Err(Error::UnknownExpression(_))));
    }

    #[test]
    fn mc_first_moment() {
        let est = mc_moment(7, 3, &MomentExpr::XtX, 100_000, 1).unwrap();
        let exp = MomentExpr::XtX.closed_form(7, 3).unwrap();
        assert!((exp.clone() - DMatrix::identity(3, 3) * 7.0).abs().max() == 0.0);
        assert!(est.max_z_score(&exp) < 3.0, "{}", est.max_z_score(&exp));
    }

    #[test]
    fn mc_sandwich_with_identity() {
        let n = 4;
        let expr = MomentExpr::XtCX(DMatrix::identity(n, n));
        let est = mc_moment(n, 3, &expr, 100_000, 2).unwrap();
        let exp = expr.closed_form(n, 3).unwrap();
        assert_eq!(exp, DMatrix::identity(3, 3) * 4.0);
        assert!(est.max_z_score(&exp) < 4.0);
    }

    #[test]
    fn mc_sandwich_general_c() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, -1.0, 0.3, 0.0, 0.3, 0.7]);
        let expr = MomentExpr::XtCX(c);
        let est = mc_moment(3, 2, &expr, 200_000, 3).unwrap();
        assert!(est.max_z_score(&expr.closed_form(3, 2).unwrap()) < 4.0);
    }

    #[test]
    fn mc_wdw_with_identity() {
        let expr = MomentExpr::XtXDXtX(DMatrix::identity(2, 2));
        let exp = expr.closed_form(3, 2).unwrap();
        assert_eq!(exp, DMatrix::identity(2, 2) * 18.0);
        let est = mc_moment(3, 2, &expr, 200_000, 4).unwrap();
        assert!(est.max_z_score(&exp) < 4.0);
    }

    #[test]
    fn mc_wdw_general_d() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 2.0, 0.0, -0.2, 0.0, 0.5]);
        let expr = MomentExpr::XtXDXtX(d);
        let est = mc_moment(4, 3, &expr, 200_000, 5).unwrap();
        assert!(est.max_z_score(&expr.closed_form(4, 3).unwrap()) < 4.0);
    }

    #[test]
    fn fourth_power_small_case() {
        let est = mc_moment(4, 3, &MomentExpr::XtX4, 1_000_000, 6).unwrap();
        let exp = MomentExpr::XtX4.closed_form(4, 3).unwrap();
        // the first diagonal entry is n^4 mu4
        let ms = moment_set(4, 3).unwrap();
        assert!((exp[(0, 0)] - 256.0 * ms.mu4).abs() < 1e-9);
        assert!(est.max_z_score(&exp) < 3.0, "{}", est.max_z_score(&exp));
    }

    #[test]
    fn bad_matrix_shapes() {
        let e = MomentExpr::XtCX(DMatrix::identity(2, 2));
        assert!(matches!(mc_moment(3, 2, &e, 10, 0), Err(Error::DimensionMismatch(_))));
        let e = MomentExpr::XtXDXtX(DMatrix::identity(3, 3));
        assert!(matches!(e.closed_form(3, 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_moment(3, 3, &MomentExpr::XtX2Tr, 50_000, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
