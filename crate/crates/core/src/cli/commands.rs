//! Subcommand implementations. Each writes its human-readable report to
//! `out` and returns structured results for callers and tests.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceSpec, HyperParams, Regime};
use crate::moments::{mc_moments, moment_set, MomentExpr};
use crate::simulator::{run_experiment, McEstimate};
use crate::theory_general::{alpha_r_optimum_general, loss_general};
use crate::theory_iso::{
    alpha_r_optimum, alpha_r_upper_bound, alpha_t_extrema, d_loss_d_alpha_t_at_zero, loss_overparam,
    loss_underparam, TheoryLoss,
};

use super::config::SweepConfig;

/// z-score threshold of the moment table.
pub const MOMENT_TOLERANCE_SE: f64 = 4.0;
/// Below this many draws the moment comparison is not meaningful.
pub const MIN_MOMENT_SAMPLES: usize = 1000;

/// Closed-form loss matching the covariance mode and regime.
pub fn theory_loss(hp: &HyperParams, cov: &CovarianceSpec, regime: Regime) -> Result<TheoryLoss> {
    match (cov, regime) {
        (CovarianceSpec::Isotropic, Regime::Over) => loss_overparam(hp),
        (CovarianceSpec::Isotropic, Regime::Under) => loss_underparam(hp),
        (CovarianceSpec::General(_), Regime::Over) => loss_general(hp, cov),
        (CovarianceSpec::General(_), Regime::Under) => Err(Error::RegimeMismatch(
            "general covariances are only supported in the overparameterized regime".into(),
        )),
    }
}

/// One line of sweep output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub theory_loss: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub runs: usize,
    pub discarded_runs: usize,
}

impl SweepRow {
    fn new(axis_value: f64, theory: f64, mc: &McEstimate) -> Self {
        Self {
            axis_value,
            theory_loss: theory,
            mc_mean: mc.mean,
            mc_stderr: mc.std_error,
            runs: mc.runs,
            discarded_runs: mc.discarded_runs,
        }
    }

    /// `|theory - mc_mean| / mc_stderr`.
    pub fn z_score(&self) -> f64 {
        let gap = (self.theory_loss - self.mc_mean).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.mc_stderr
        }
    }
}

/// Theory and Monte Carlo at every grid point. All points share
/// `master_seed`, so neighbouring points see the same task draws.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cov = cfg.covariance()?;
    cfg.grid
        .points()
        .into_iter()
        .map(|x| {
            let hp = cfg.at(x);
            let theory = theory_loss(&hp, &cov, cfg.regime)?.value;
            let mc = run_experiment(&hp, &cov, cfg.runs, cfg.test_tasks_per_run, cfg.master_seed)?;
            Ok(SweepRow::new(x, theory, &mc))
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Runs the sweep and writes the CSV to `output_path`, or to `out` when no
/// path is configured.
pub fn cmd_sweep(cfg: &SweepConfig, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    match &cfg.output_path {
        Some(path) => {
            write_csv_file(&rows, path)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), path.display())?;
        }
        None => write_csv(&rows, &mut *out)?,
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

/// Closed-form report at the base point of `cfg`; with an output path the
/// theory curve over the grid is written as CSV as well.
pub fn cmd_theory(cfg: &SweepConfig, out: &mut dyn Write) -> Result<TheoryLoss> {
    cfg.validate()?;
    let hp = &cfg.base;
    let cov = cfg.covariance()?;
    let loss = theory_loss(hp, &cov, cfg.regime)?;
    let b = &loss.breakdown;
    writeln!(out, "regime           {}", loss.regime)?;
    writeln!(out, "alpha_t          {}", hp.alpha_t)?;
    writeln!(out, "alpha_r          {}", hp.alpha_r)?;
    writeln!(out, "loss             {:.6}", loss.value)?;
    writeln!(out, "  noise          {:.6}", b.noise)?;
    writeln!(out, "  task variance  {:.6}", b.task_variance)?;
    writeln!(out, "  overfitting    {:.6}", b.overfitting)?;
    writeln!(out, "  data dependent {:.6}", b.data_dependent)?;
    match (&cov, cfg.regime) {
        (CovarianceSpec::Isotropic, Regime::Over) => {
            let ext = alpha_t_extrema(hp)?;
            writeln!(out, "alpha_t minimum  {:.6}", ext.alpha_minus)?;
            writeln!(out, "alpha_t maximum  {:.6}", ext.alpha_plus)?;
            writeln!(out, "alpha_r optimum  {}", fmt_opt(ext.alpha_r_star))?;
        }
        (CovarianceSpec::Isotropic, Regime::Under) => {
            writeln!(out, "alpha_r optimum  {}", fmt_opt(optional(alpha_r_optimum(hp, Regime::Under))?))?;
            let slope = d_loss_d_alpha_t_at_zero(hp)?;
            writeln!(out, "slope at alpha_t = 0")?;
            writeln!(out, "  sigma^2 p/(n_v m) {:.7}", slope.closed_form)?;
            writeln!(out, "  finite difference {:.7}", slope.finite_difference)?;
            if !slope.agrees() {
                writeln!(
                    out,
                    "  MISMATCH: relative gap {:.3e}; the exact slope carries the factor h_r = {:.6}",
                    slope.relative_gap,
                    crate::theory_iso::h_factor(hp.alpha_r, hp.n_r, hp.p)
                )?;
            }
        }
        (CovarianceSpec::General(_), _) => {
            writeln!(out, "alpha_r optimum  {}", fmt_opt(optional(alpha_r_optimum_general(hp, &cov))?))?;
        }
    }
    writeln!(out, "alpha_r bound    {:.6}", alpha_r_upper_bound(hp))?;

    if let Some(path) = &cfg.output_path {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["axis_value", "theory_loss"])?;
        for x in cfg.grid.points() {
            let v = theory_loss(&cfg.at(x), &cov, cfg.regime)?.value;
            w.write_record([format!("{x:?}"), format!("{v:?}")])?;
        }
        w.flush()?;
        writeln!(out, "wrote theory curve to {}", path.display())?;
    }
    Ok(loss)
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::FlatObjective) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Monte Carlo estimate at the base point of `cfg`, next to the theory value.
pub fn cmd_simulate(cfg: &SweepConfig, out: &mut dyn Write) -> Result<McEstimate> {
    cfg.validate()?;
    let cov = cfg.covariance()?;
    let hp = &cfg.base;
    let theory = theory_loss(hp, &cov, cfg.regime)?.value;
    let mc = run_experiment(hp, &cov, cfg.runs, cfg.test_tasks_per_run, cfg.master_seed)?;
    writeln!(out, "runs             {}", mc.runs)?;
    writeln!(out, "discarded        {}", mc.discarded_runs)?;
    writeln!(out, "mc mean          {:.6}", mc.mean)?;
    writeln!(out, "mc stderr        {:.6}", mc.std_error)?;
    writeln!(out, "theory           {:.6}", theory)?;
    writeln!(out, "z                {:.2}", mc.z_score(theory))?;
    Ok(mc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub id: &'static str,
    pub closed_form_00: f64,
    pub mc_00: f64,
    pub max_z: f64,
    pub pass: bool,
}

/// Closed form against Monte Carlo for the eight Wishart identities.
pub fn cmd_moments(n: usize, p: usize, samples: usize, seed: u64, out: &mut dyn Write) -> Result<Vec<MomentRow>> {
    let ms = moment_set(n, p)?;
    if samples < MIN_MOMENT_SAMPLES {
        eprintln!("warning: insufficient samples for 4-SE test ({samples} < {MIN_MOMENT_SAMPLES})");
    }
    writeln!(out, "n = {n}, p = {p}, samples = {samples}")?;
    writeln!(
        out,
        "mu2 {:.6}  mu3 {:.6}  mu4 {:.6}  mu11 {:.6}  mu21 {:.6}  mu22 {:.6}",
        ms.mu2, ms.mu3, ms.mu4, ms.mu11, ms.mu21, ms.mu22
    )?;
    let suite = MomentExpr::wishart_suite();
    let estimates = mc_moments(n, p, &suite, samples, seed)?;
    writeln!(out, "{:<18} {:>14} {:>14} {:>8}  result", "identity", "closed[0,0]", "mc[0,0]", "max z")?;
    let mut rows = Vec::with_capacity(suite.len());
    for (expr, est) in suite.iter().zip(&estimates) {
        let cf = expr.closed_form(n, p)?;
        let max_z = est.max_z_score(&cf);
        let pass = max_z <= MOMENT_TOLERANCE_SE;
        let row = MomentRow {
            id: expr.id(),
            closed_form_00: cf[(0, 0)],
            mc_00: est.mean[(0, 0)],
            max_z,
            pass,
        };
        writeln!(
            out,
            "{:<18} {:>14.6} {:>14.6} {:>8.2}  {}",
            row.id,
            row.closed_form_00,
            row.mc_00,
            row.max_z,
            if pass { "pass" } else { "FAIL" }
        )?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub name: String,
    pub tolerance_se: f64,
    pub rows: Vec<SweepRow>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.z_score() <= self.tolerance_se)
    }

    pub fn max_z(&self) -> f64 {
        self.rows.iter().map(SweepRow::z_score).fold(0.0, f64::max)
    }

    pub fn write(&self, cfg: &SweepConfig, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{} ({} runs, tolerance {} SE)", self.name, cfg.runs, self.tolerance_se)?;
        writeln!(
            out,
            "{:>10} {:>12} {:>12} {:>10} {:>7}  result",
            cfg.sweep_axis, "theory", "mc mean", "mc se", "z"
        )?;
        for r in &self.rows {
            let z = r.z_score();
            writeln!(
                out,
                "{:>10.4} {:>12.6} {:>12.6} {:>10.6} {:>7.2}  {}",
                r.axis_value,
                r.theory_loss,
                r.mc_mean,
                r.mc_stderr,
                z,
                if z <= self.tolerance_se { "ok" } else { "OUT" }
            )?;
        }
        writeln!(out, "{}", if self.passed() { "PASS" } else { "FAIL" })?;
        Ok(())
    }
}

/// Sweeps `cfg` and scores every point against `tolerance_se`.
pub fn cmd_compare(name: &str, cfg: &SweepConfig, tolerance_se: f64, out: &mut dyn Write) -> Result<CompareReport> {
    let rows = run_sweep(cfg)?;
    if let Some(path) = &cfg.output_path {
        write_csv_file(&rows, path)?;
    }
    let report = CompareReport {
        name: name.to_string(),
        tolerance_se,
        rows,
    };
    report.write(cfg, out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::scenarios::scenario;

    fn tiny(axis_grid: bool) -> SweepConfig {
        let mut cfg = scenario("fig2b").unwrap().config;
        cfg.runs = 3;
        cfg.test_tasks_per_run = 2;
        if axis_grid {
            cfg.grid.start = -0.5;
            cfg.grid.stop = 0.5;
            cfg.grid.step = 0.5;
        }
        cfg
    }

    #[test]
    fn theory_prints_hand_values() {
        let mut cfg = tiny(true);
        cfg.base.alpha_r = 0.0;
        let mut out = Vec::new();
        let loss = cmd_theory(&cfg, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!((loss.value - 0.6875).abs() < 1e-12);
        assert!(text.contains("0.687500"), "{text}");
        assert!(text.contains("-1.011"), "{text}");
    }

    #[test]
    fn theory_flags_slope_mismatch_in_underparam() {
        let cfg = scenario("fig3b").unwrap().config;
        let mut out = Vec::new();
        cmd_theory(&cfg, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("0.0012000"), "{text}");
        assert!(text.contains("MISMATCH"), "{text}");
    }

    #[test]
    fn general_loss_rejects_underparam() {
        let hp = crate::cli::scenarios::fig3_params();
        let cov = crate::model::materialize_isotropic(&hp);
        assert!(matches!(theory_loss(&hp, &cov, Regime::Under), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn sweep_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(true);
        cfg.output_path = Some(dir.path().join("s.csv"));
        let rows = cmd_sweep(&cfg, &mut Vec::new()).unwrap();
        assert_eq!(rows.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("axis_value,theory_loss,mc_mean,mc_stderr,runs,discarded_runs\n"));
        let back = read_csv(&dir.path().join("s.csv")).unwrap();
        assert_eq!(back, rows);
        assert!(back.iter().all(|r| r.mc_stderr.is_finite()));
    }

    #[test]
    fn moments_small_sample_table() {
        let mut out = Vec::new();
        let rows = cmd_moments(1, 1, 10, 3, &mut out).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[1].closed_form_00, 3.0);
        assert!(String::from_utf8(out).unwrap().contains("mu2 3.000000"));
    }

    #[test]
    fn compare_report_flags_out_of_tolerance() {
        let row = SweepRow {
            axis_value: 0.0,
            theory_loss: 1.0,
            mc_mean: 1.1,
            mc_stderr: 0.01,
            runs: 10,
            discarded_runs: 0,
        };
        let report = CompareReport {
            name: "x".into(),
            tolerance_se: 5.0,
            rows: vec![row],
        };
        assert!(!report.passed());
        assert!((report.max_z() - 10.0).abs() < 1e-9);
    }
}
