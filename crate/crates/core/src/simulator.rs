//! Empirical one-step MAML: stacked design, exact outer solve, adaptation on
//! target data and Monte Carlo averaging of the test loss.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::spd_condition;
use crate::model::{CovarianceSpec, HyperParams, Regime, TaskData, TaskSampler, TestTaskData};
use crate::rng::{keyed_rng, stream_rng, StreamTag};
use crate::theory_iso::h_factor;

/// Gram condition number above which a draw is rejected.
pub const REJECT_CONDITION: f64 = 1e12;
/// Gram condition number above which the SVD path replaces Cholesky.
pub const SVD_CONDITION: f64 = 1e10;
/// Resampling attempts allowed for a single run.
const MAX_ATTEMPTS: u32 = 64;

/// One gradient step on the half mean squared error:
/// `(I - (alpha/n) X^T X) omega + (alpha/n) X^T y`.
pub fn inner_step(omega: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch("inner step needs at least one row".into()));
    }
    if x.ncols() != omega.len() || y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x is {}x{}, omega has {} entries, y has {}",
            n,
            x.ncols(),
            omega.len(),
            y.len()
        )));
    }
    let residual = y - x * omega;
    Ok(omega + x.tr_mul(&residual) * (alpha / n as f64))
}

/// Validation residuals of all tasks stacked as `gamma - B omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign {
    pub b_matrix: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl StackedDesign {
    pub fn rows(&self) -> usize {
        self.b_matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b_matrix.ncols()
    }
}

fn check_task(task: &TaskData, hp: &HyperParams, i: usize) -> Result<()> {
    let ok = task.x_train.shape() == (hp.n_t, hp.p)
        && task.y_train.len() == hp.n_t
        && task.x_val.shape() == (hp.n_v, hp.p)
        && task.y_val.len() == hp.n_v;
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("task {i} does not match the hyperparameters")))
    }
}

pub fn build_design(tasks: &[TaskData], hp: &HyperParams) -> Result<StackedDesign> {
    if tasks.len() != hp.m {
        return Err(Error::DimensionMismatch(format!("expected {} tasks, got {}", hp.m, tasks.len())));
    }
    let rows = hp.total_validation();
    let mut b_matrix = DMatrix::zeros(rows, hp.p);
    let mut gamma = DVector::zeros(rows);
    let scale = hp.alpha_t / hp.n_t as f64;
    for (i, task) in tasks.iter().enumerate() {
        check_task(task, hp, i)?;
        // X_v (I - s X_t^T X_t) = X_v - s (X_v X_t^T) X_t
        let cross = &task.x_val * task.x_train.transpose();
        let block = &task.x_val - &cross * &task.x_train * scale;
        let target = &task.y_val - &cross * &task.y_train * scale;
        b_matrix.rows_mut(i * hp.n_v, hp.n_v).copy_from(&block);
        gamma.rows_mut(i * hp.n_v, hp.n_v).copy_from(&target);
    }
    Ok(StackedDesign { b_matrix, gamma })
}

/// `|gamma - B omega|^2 / (2 n_v m)`.
pub fn meta_loss(design: &StackedDesign, omega: &DVector<f64>) -> f64 {
    let r = &design.gamma - &design.b_matrix * omega;
    r.norm_squared() / (2.0 * design.rows() as f64)
}

/// Meta-training loss evaluated task by task through [`inner_step`].
pub fn meta_loss_tasks(tasks: &[TaskData], hp: &HyperParams, omega: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for task in tasks {
        let theta = inner_step(omega, &task.x_train, &task.y_train, hp.alpha_t)?;
        total += (&task.y_val - &task.x_val * theta).norm_squared() / (2.0 * task.x_val.nrows() as f64);
    }
    Ok(total / tasks.len() as f64)
}

/// Exact minimiser of the meta-training loss. Overparameterized designs get
/// the interpolator closest to `omega0`; underparameterized ones the least
/// squares solution.
pub fn solve_outer(design: &StackedDesign, omega0: &DVector<f64>, regime: Regime) -> Result<DVector<f64>> {
    let (rows, p) = design.b_matrix.shape();
    if omega0.len() != p || design.gamma.len() != rows {
        return Err(Error::DimensionMismatch("omega0 or gamma does not match B".into()));
    }
    let actual = match p.cmp(&rows) {
        std::cmp::Ordering::Greater => Regime::Over,
        std::cmp::Ordering::Less => Regime::Under,
        std::cmp::Ordering::Equal => return Err(Error::RegimeBoundary { p }),
    };
    if actual != regime {
        return Err(Error::RegimeMismatch(format!("design is {actual}parameterized, {regime} requested")));
    }
    let b = &design.b_matrix;
    let gram = match regime {
        Regime::Over => b * b.transpose(),
        Regime::Under => b.tr_mul(b),
    };
    let condition = spd_condition(&gram);
    if condition.is_nan() || condition > REJECT_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    if condition > SVD_CONDITION {
        let residual = &design.gamma - b * omega0;
        let step = b
            .clone()
            .svd(true, true)
            .solve(&residual, 0.0)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        return Ok(omega0 + step);
    }
    let chol = Cholesky::new(gram).ok_or(Error::IllConditioned { condition })?;
    Ok(match regime {
        Regime::Over => omega0 + b.tr_mul(&chol.solve(&(&design.gamma - b * omega0))),
        Regime::Under => chol.solve(&b.tr_mul(&design.gamma)),
    })
}

/// Adapts `omega_star` on the target split with `alpha_r` and returns the half
/// mean squared error on the test split.
pub fn adapt_and_test(omega_star: &DVector<f64>, task: &TestTaskData, hp: &HyperParams) -> Result<f64> {
    let theta = inner_step(omega_star, &task.x_target, &task.y_target, hp.alpha_r)?;
    if task.x_test.ncols() != theta.len() || task.y_test.len() != task.x_test.nrows() {
        return Err(Error::DimensionMismatch("test split does not match parameters".into()));
    }
    let r = &task.y_test - &task.x_test * theta;
    Ok(r.norm_squared() / (2.0 * task.x_test.nrows() as f64))
}

/// Mean over runs of the per-run average test loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation across runs over `sqrt(runs)`.
    pub std_error: f64,
    pub runs: usize,
    pub master_seed: u64,
    /// Draws rejected as ill-conditioned and replaced.
    pub discarded_runs: usize,
}

impl McEstimate {
    /// `|value - mean| / std_error`; zero when both coincide exactly.
    pub fn z_score(&self, value: f64) -> f64 {
        let gap = (value - self.mean).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.std_error
        }
    }
}

struct RunOutcome {
    loss: f64,
    discarded: usize,
}

fn single_run(
    sampler: &TaskSampler<'_>,
    regime: Regime,
    run: usize,
    test_tasks: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let hp = sampler.hyper_params();
    let omega0 = hp.omega0_vector();
    let mut discarded = 0;
    let omega_star = loop {
        let mut rng = keyed_rng(seed, run as u64, discarded as u32, StreamTag::Train);
        let tasks: Vec<TaskData> = (0..hp.m).map(|_| sampler.sample_task(&mut rng)).collect();
        let design = build_design(&tasks, hp)?;
        match solve_outer(&design, &omega0, regime) {
            Ok(w) => break w,
            Err(Error::IllConditioned { .. }) if (discarded as u32) + 1 < MAX_ATTEMPTS => discarded += 1,
            Err(e) => return Err(e),
        }
    };
    let mut rng = stream_rng(seed, run as u64, StreamTag::Test);
    let mut total = 0.0;
    for _ in 0..test_tasks {
        let task = sampler.sample_test_task(&mut rng);
        total += adapt_and_test(&omega_star, &task, hp)?;
    }
    Ok(RunOutcome {
        loss: total / test_tasks as f64,
        discarded,
    })
}

/// Discards tolerated before an experiment aborts.
pub fn discard_budget(runs: usize) -> usize {
    runs / 100
}

/// Monte Carlo estimate of the average test loss. Runs execute in parallel
/// and are reduced in run order, so the result does not depend on the
/// thread count.
pub fn run_experiment(
    hp: &HyperParams,
    cov: &CovarianceSpec,
    runs: usize,
    test_tasks_per_run: usize,
    seed: u64,
) -> Result<McEstimate> {
    if runs < 2 {
        return Err(Error::InvalidParameter("runs must be at least 2".into()));
    }
    if test_tasks_per_run == 0 {
        return Err(Error::InvalidParameter("test_tasks_per_run must be at least 1".into()));
    }
    let regime = hp.regime()?;
    let sampler = TaskSampler::new(hp, cov)?;
    let outcomes: Vec<Result<RunOutcome>> = (0..runs)
        .into_par_iter()
        .map(|run| single_run(&sampler, regime, run, test_tasks_per_run, seed))
        .collect();

    let budget = discard_budget(runs);
    let mut losses = Vec::with_capacity(runs);
    let mut discarded = 0;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                discarded += o.discarded;
                losses.push(o.loss);
            }
            Err(Error::IllConditioned { .. }) => {
                return Err(Error::DiscardBudgetExceeded {
                    discarded: discarded + MAX_ATTEMPTS as usize,
                    runs,
                    budget,
                })
            }
            Err(e) => return Err(e),
        }
    }
    if discarded > budget {
        return Err(Error::DiscardBudgetExceeded { discarded, runs, budget });
    }
    let n = runs as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        runs,
        master_seed: seed,
        discarded_runs: discarded,
    })
}

/// Summary of how closely `B B^T / p` matches `h_t I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationReport {
    pub h_t: f64,
    pub samples: usize,
    /// Median over samples of the largest entrywise deviation.
    pub median_max_deviation: f64,
    /// Average diagonal entry of `B B^T / p` across all samples.
    pub mean_diagonal: f64,
}

pub fn concentration_check(hp: &HyperParams, samples: usize, seed: u64) -> Result<ConcentrationReport> {
    hp.require_regime(Regime::Over)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let sampler = TaskSampler::new(hp, &CovarianceSpec::Isotropic)?;
    let h_t = h_factor(hp.alpha_t, hp.n_t, hp.p);
    let rows = hp.total_validation();
    let stats: Vec<Result<(f64, f64)>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(seed, s as u64, StreamTag::Concentration);
            let tasks: Vec<TaskData> = (0..hp.m).map(|_| sampler.sample_task(&mut rng)).collect();
            let design = build_design(&tasks, hp)?;
            let mut k = &design.b_matrix * design.b_matrix.transpose() / hp.p as f64;
            let diag = k.trace() / rows as f64;
            for i in 0..rows {
                k[(i, i)] -= h_t;
            }
            Ok((k.amax(), diag))
        })
        .collect();
    let mut devs = Vec::with_capacity(samples);
    let mut diag_sum = 0.0;
    for s in stats {
        let (dev, diag) = s?;
        devs.push(dev);
        diag_sum += diag;
    }
    devs.sort_by(f64::total_cmp);
    let mid = samples / 2;
    let median = if samples % 2 == 1 { devs[mid] } else { 0.5 * (devs[mid - 1] + devs[mid]) };
    Ok(ConcentrationReport {
        h_t,
        samples,
        median_max_deviation: median,
        mean_diagonal: diag_sum / samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::standard_normal_matrix;
    use crate::model::sample_task;
    use crate::theory_iso::{loss_overparam, loss_underparam};
    use rand::Rng;

    fn small(p: usize, n_v: usize, m: usize, alpha_t: f64) -> HyperParams {
        HyperParams::zero_mean(4, n_v, 5, m, p, 0.5, 0.7).with_rates(alpha_t, 0.3)
    }

    fn draw_tasks(hp: &HyperParams, seed: u64) -> Vec<TaskData> {
        let mut rng = stream_rng(seed, 0, StreamTag::Misc);
        (0..hp.m).map(|_| sample_task(hp, &CovarianceSpec::Isotropic, &mut rng).unwrap()).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn inner_step_examples() {
        let x = DMatrix::<f64>::identity(2, 2);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        let w = inner_step(&DVector::zeros(2), &x, &y, 0.5).unwrap();
        assert_eq!(w, DVector::from_vec(vec![0.5, 1.0]));

        let mut rng = stream_rng(1, 0, StreamTag::Misc);
        let x = standard_normal_matrix(&mut rng, 7, 3);
        let omega = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let y = &x * &omega;
        let w = inner_step(&omega, &x, &y, 0.8).unwrap();
        assert!((w - &omega).amax() < 1e-14);
        let y2 = DVector::from_fn(7, |_, _| rng.random::<f64>());
        assert_eq!(inner_step(&omega, &x, &y2, 0.0).unwrap(), omega);
    }

    #[test]
    fn inner_step_rejects_bad_shapes() {
        let x = DMatrix::<f64>::zeros(3, 2);
        assert!(inner_step(&DVector::zeros(3), &x, &DVector::zeros(3), 0.1).is_err());
        assert!(inner_step(&DVector::zeros(2), &x, &DVector::zeros(2), 0.1).is_err());
        assert!(inner_step(&DVector::zeros(2), &DMatrix::zeros(0, 2), &DVector::zeros(0), 0.1).is_err());
    }

    #[test]
    fn design_blocks_rebuild_from_parts() {
        let hp = small(6, 2, 3, 0.4);
        let tasks = draw_tasks(&hp, 2);
        let d = build_design(&tasks, &hp).unwrap();
        for (i, t) in tasks.iter().enumerate() {
            let inner = DMatrix::<f64>::identity(6, 6) - t.x_train.transpose() * &t.x_train * (0.4 / 4.0);
            let block = &t.x_val * inner;
            let got = d.b_matrix.rows(i * 2, 2);
            assert!((got - block).amax() < 1e-12);
        }
    }

    #[test]
    fn meta_loss_dual_path() {
        let hp = small(5, 3, 4, -0.7);
        let tasks = draw_tasks(&hp, 3);
        let d = build_design(&tasks, &hp).unwrap();
        let mut rng = stream_rng(4, 0, StreamTag::Misc);
        for _ in 0..20 {
            let omega = DVector::from_fn(5, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let a = meta_loss(&d, &omega);
            let b = meta_loss_tasks(&tasks, &hp, &omega).unwrap();
            assert!(rel(a, b) < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn single_task_without_inner_loop_is_regression() {
        let hp = small(3, 8, 1, 0.0);
        let tasks = draw_tasks(&hp, 5);
        let d = build_design(&tasks, &hp).unwrap();
        assert_eq!(d.b_matrix, tasks[0].x_val);
        assert_eq!(d.gamma, tasks[0].y_val);
        let w = solve_outer(&d, &DVector::zeros(3), Regime::Under).unwrap();
        let ols = tasks[0].x_val.clone().svd(true, true).solve(&tasks[0].y_val, 1e-14).unwrap();
        assert!((w - ols).amax() < 1e-10);
    }

    #[test]
    fn noiseless_zero_mean_gamma_vanishes() {
        let mut hp = small(6, 2, 2, 0.3);
        hp.sigma = 0.0;
        hp.nu = 0.0;
        let d = build_design(&draw_tasks(&hp, 6), &hp).unwrap();
        assert_eq!(d.gamma, DVector::zeros(4));
    }

    #[test]
    fn build_design_checks_task_count() {
        let hp = small(6, 2, 3, 0.3);
        let tasks = draw_tasks(&hp, 1);
        assert!(matches!(build_design(&tasks[..2], &hp), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn overparam_solution_interpolates_with_min_distance() {
        let hp = small(8, 2, 2, 0.2);
        let d = build_design(&draw_tasks(&hp, 7), &hp).unwrap();
        let w = solve_outer(&d, &DVector::zeros(8), Regime::Over).unwrap();
        assert!((&d.b_matrix * &w - &d.gamma).amax() < 1e-8 * d.gamma.norm());
        // null-space projector I - B^T (B B^T)^-1 B
        let pinv = d.b_matrix.clone().pseudo_inverse(1e-14).unwrap();
        let null = DMatrix::<f64>::identity(8, 8) - &pinv * &d.b_matrix;
        let mut rng = stream_rng(8, 0, StreamTag::Misc);
        for _ in 0..100 {
            let v = DVector::from_fn(8, |_, _| rng.random::<f64>() - 0.5);
            let alt = &w + &null * v;
            assert!((&d.b_matrix * &alt - &d.gamma).amax() < 1e-8);
            assert!(w.norm() <= alt.norm() + 1e-12);
        }
    }

    #[test]
    fn overparam_at_optimal_start_returns_start() {
        let hp = small(8, 2, 2, 0.2);
        let mut d = build_design(&draw_tasks(&hp, 9), &hp).unwrap();
        let omega0 = DVector::from_fn(8, |i, _| i as f64 * 0.1 - 0.3);
        d.gamma = &d.b_matrix * &omega0;
        let w = solve_outer(&d, &omega0, Regime::Over).unwrap();
        assert!((w - omega0).amax() < 1e-12);
    }

    #[test]
    fn solutions_are_locally_optimal() {
        for (p, n_v, m) in [(8, 2, 2), (3, 4, 2)] {
            let hp = small(p, n_v, m, 0.25);
            let d = build_design(&draw_tasks(&hp, 10), &hp).unwrap();
            let w = solve_outer(&d, &DVector::zeros(p), hp.regime().unwrap()).unwrap();
            let base = meta_loss(&d, &w);
            let mut rng = stream_rng(11, 0, StreamTag::Misc);
            for _ in 0..100 {
                let mut delta = DVector::from_fn(p, |_, _| rng.random::<f64>() - 0.5);
                delta *= 1e-3 / delta.norm();
                assert!(base <= meta_loss(&d, &(&w + delta)));
            }
        }
    }

    #[test]
    fn underparam_normal_equations() {
        let hp = small(3, 4, 2, 0.25);
        let d = build_design(&draw_tasks(&hp, 12), &hp).unwrap();
        let w = solve_outer(&d, &DVector::from_element(3, 9.0), Regime::Under).unwrap();
        let grad = d.b_matrix.tr_mul(&(&d.b_matrix * &w - &d.gamma));
        assert!(grad.amax() < 1e-8 * d.b_matrix.tr_mul(&d.gamma).norm());
    }

    #[test]
    fn solve_rejects_wrong_regime_and_singular() {
        let hp = small(8, 2, 2, 0.2);
        let d = build_design(&draw_tasks(&hp, 13), &hp).unwrap();
        assert!(matches!(solve_outer(&d, &DVector::zeros(8), Regime::Under), Err(Error::RegimeMismatch(_))));
        let singular = StackedDesign {
            b_matrix: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]),
            gamma: DVector::from_vec(vec![1.0, 2.0]),
        };
        assert!(matches!(
            solve_outer(&singular, &DVector::zeros(3), Regime::Over),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn svd_fallback_on_poor_conditioning() {
        let eps = 3e-6;
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, eps, 0.0]);
        let d = StackedDesign {
            b_matrix: b,
            gamma: DVector::from_vec(vec![1.0, 1.0 + eps]),
        };
        let cond = spd_condition(&(&d.b_matrix * d.b_matrix.transpose()));
        assert!(cond > SVD_CONDITION && cond < REJECT_CONDITION, "{cond}");
        let w = solve_outer(&d, &DVector::zeros(3), Regime::Over).unwrap();
        assert!((w - DVector::from_vec(vec![1.0, 1.0, 0.0])).amax() < 1e-6);
    }

    #[test]
    fn adapt_and_test_examples() {
        let mut hp = small(5, 2, 2, 0.2);
        hp.sigma = 0.0;
        hp.alpha_r = 0.0;
        let mut rng = stream_rng(14, 0, StreamTag::Misc);
        let sampler = TaskSampler::new(&hp, &CovarianceSpec::Isotropic).unwrap();
        let task = sampler.sample_test_task(&mut rng);
        assert!(adapt_and_test(&task.w_prime, &task, &hp).unwrap() < 1e-28);

        hp.sigma = 0.5;
        let task = sampler_task(&hp, 15);
        let omega = DVector::from_element(5, 0.2);
        let base = adapt_and_test(&omega, &task, &hp).unwrap();
        let mut permuted = task.clone();
        let (rows, cols) = task.x_target.shape();
        permuted.x_target = DMatrix::from_fn(rows, cols, |i, j| task.x_target[((i + 1) % rows, j)] * 3.0);
        assert_eq!(adapt_and_test(&omega, &permuted, &hp).unwrap(), base);

        hp.alpha_r = 0.4;
        let theta = &omega - task.x_target.transpose() * (&task.x_target * &omega - &task.y_target) * (0.4 / 5.0);
        let direct = (&task.y_test - &task.x_test * theta).norm_squared() / (2.0 * hp.n_s as f64);
        assert!(rel(adapt_and_test(&omega, &task, &hp).unwrap(), direct) < 1e-12);
    }

    fn sampler_task(hp: &HyperParams, seed: u64) -> TestTaskData {
        let mut rng = stream_rng(seed, 0, StreamTag::Misc);
        TaskSampler::new(hp, &CovarianceSpec::Isotropic).unwrap().sample_test_task(&mut rng)
    }

    #[test]
    fn experiment_is_thread_count_independent() {
        let hp = small(8, 2, 2, 0.2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_experiment(&hp, &CovarianceSpec::Isotropic, 40, 5, 99).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a, b);
        assert_eq!(a.master_seed, 99);
        assert_eq!(a.discarded_runs, 0);
        assert_ne!(a.mean, run_experiment(&hp, &CovarianceSpec::Isotropic, 40, 5, 100).unwrap().mean);
    }

    #[test]
    fn experiment_noiseless_is_exact_zero() {
        let mut hp = small(8, 2, 2, 0.2);
        hp.sigma = 0.0;
        hp.nu = 0.0;
        let est = run_experiment(&hp, &CovarianceSpec::Isotropic, 10, 3, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.z_score(0.0), 0.0);
    }

    #[test]
    fn experiment_validates_inputs() {
        let hp = small(8, 2, 2, 0.2);
        assert!(run_experiment(&hp, &CovarianceSpec::Isotropic, 1, 3, 1).is_err());
        assert!(run_experiment(&hp, &CovarianceSpec::Isotropic, 5, 0, 1).is_err());
        let boundary = small(4, 2, 2, 0.2);
        assert!(matches!(
            run_experiment(&boundary, &CovarianceSpec::Isotropic, 5, 1, 1),
            Err(Error::RegimeBoundary { p: 4 })
        ));
    }

    #[test]
    fn experiment_tracks_theory_on_small_problems() {
        let over = HyperParams::zero_mean(20, 2, 15, 2, 40, 0.5, 0.8).with_rates(0.1, 0.2);
        let est = run_experiment(&over, &CovarianceSpec::Isotropic, 400, 20, 21).unwrap();
        let theory = loss_overparam(&over).unwrap().value;
        // finite-p corrections are visible at this size, so the bound is loose
        assert!(rel(est.mean, theory) < 0.1, "{} {theory}", est.mean);

        let under = HyperParams::zero_mean(6, 10, 8, 10, 8, 0.3, 0.4).with_rates(0.1, 0.2);
        let est = run_experiment(&under, &CovarianceSpec::Isotropic, 400, 20, 22).unwrap();
        let theory = loss_underparam(&under).unwrap().value;
        assert!(rel(est.mean, theory) < 0.1, "{} {theory}", est.mean);
    }

    #[test]
    fn concentration_examples() {
        let hp = HyperParams::zero_mean(30, 2, 20, 3, 60, 1.0, 0.5).with_rates(0.2, 0.0);
        let r = concentration_check(&hp, 200, 3).unwrap();
        assert!((r.h_t - 0.721_333_333_333_333_3).abs() < 1e-12);
        assert!((r.mean_diagonal - r.h_t).abs() < 0.02, "{r:?}");

        let hp0 = hp.clone().with_rates(0.0, 0.0);
        let r0 = concentration_check(&hp0, 200, 3).unwrap();
        assert_eq!(r0.h_t, 1.0);
        assert!((r0.mean_diagonal - 1.0).abs() < 0.02);

        let under = HyperParams::zero_mean(5, 25, 10, 40, 30, 0.2, 0.2);
        assert!(concentration_check(&under, 10, 1).is_err());
    }

    #[test]
    fn concentration_shrinks_with_size() {
        let base = HyperParams::zero_mean(30, 2, 20, 3, 60, 1.0, 0.5).with_rates(0.2, 0.0);
        let mut big = base.clone();
        big.p = 120;
        big.n_t = 60;
        big.w0 = vec![0.0; 120];
        big.omega0 = vec![0.0; 120];
        let a = concentration_check(&base, 400, 5).unwrap().median_max_deviation;
        let b = concentration_check(&big, 400, 5).unwrap().median_max_deviation;
        let ratio = a / b;
        assert!((1.2..=1.7).contains(&ratio), "{ratio}");
    }
}
