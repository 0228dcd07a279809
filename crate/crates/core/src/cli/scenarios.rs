//! Built-in learning-rate sweeps.
//!
//! Suffix `a` sweeps the adaptation rate with `alpha_t = 0.2`; suffix `b`
//! sweeps the training rate with `alpha_r = 0.2`.

use crate::error::{Error, Result};
use crate::model::{HyperParams, Regime};

use super::config::{CovMode, Grid, SweepAxis, SweepConfig};

pub const SCENARIOS: [&str; 6] = ["fig2a", "fig2b", "fig3a", "fig3b", "wishart_a", "wishart_b"];
/// Fixed draw used by the Wishart scenarios.
pub const WISHART_SEED: u64 = 20_210_305;
pub const MASTER_SEED: u64 = 1;

pub const ALPHA_T_GRID: Grid = Grid {
    start: -1.0,
    stop: 1.0,
    step: 0.25,
};
pub const ALPHA_R_GRID: Grid = Grid {
    start: -0.5,
    stop: 1.0,
    step: 0.1875,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub config: SweepConfig,
    /// Largest accepted `|theory - mc_mean| / stderr`.
    pub tolerance_se: f64,
}

pub fn fig2_params() -> HyperParams {
    HyperParams::zero_mean(30, 2, 20, 3, 60, 1.0, 0.5)
}

pub fn fig3_params() -> HyperParams {
    HyperParams::zero_mean(5, 25, 10, 40, 30, 0.2, 0.2)
}

fn sweep(base: HyperParams, regime: Regime, axis: SweepAxis, cov_mode: CovMode, runs: usize) -> SweepConfig {
    let (base, grid) = match axis {
        SweepAxis::AlphaR => (base.with_rates(0.2, 0.0), ALPHA_R_GRID),
        SweepAxis::AlphaT => (base.with_rates(0.0, 0.2), ALPHA_T_GRID),
    };
    SweepConfig {
        base,
        cov_mode,
        regime,
        sweep_axis: axis,
        grid,
        runs,
        test_tasks_per_run: 100,
        master_seed: MASTER_SEED,
        output_path: None,
    }
}

pub fn scenario(name: &str) -> Result<Scenario> {
    use SweepAxis::{AlphaR, AlphaT};
    let wishart = CovMode::Wishart { seed: WISHART_SEED };
    let (name, config, tolerance_se) = match name {
        "fig2a" => ("fig2a", sweep(fig2_params(), Regime::Over, AlphaR, CovMode::Isotropic, 1000), 5.0),
        "fig2b" => ("fig2b", sweep(fig2_params(), Regime::Over, AlphaT, CovMode::Isotropic, 1000), 5.0),
        "fig3a" => ("fig3a", sweep(fig3_params(), Regime::Under, AlphaR, CovMode::Isotropic, 1000), 3.0),
        "fig3b" => ("fig3b", sweep(fig3_params(), Regime::Under, AlphaT, CovMode::Isotropic, 1000), 3.0),
        "wishart_a" => ("wishart_a", sweep(fig2_params(), Regime::Over, AlphaR, wishart, 500), 5.0),
        "wishart_b" => ("wishart_b", sweep(fig2_params(), Regime::Over, AlphaT, wishart, 500), 5.0),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; valid scenarios: {}",
                SCENARIOS.join(", ")
            )))
        }
    };
    Ok(Scenario {
        name,
        config,
        tolerance_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_scenarios_validate() {
        for name in SCENARIOS {
            let s = scenario(name).unwrap();
            s.config.validate().unwrap();
            assert_eq!(s.config.grid.points().len(), 9, "{name}");
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn grids_cover_the_default_ranges() {
        let t = ALPHA_T_GRID.points();
        assert_eq!((t[0], t[8]), (-1.0, 1.0));
        let r = ALPHA_R_GRID.points();
        assert_eq!((r[0], r[8]), (-0.5, 1.0));
    }

    #[test]
    fn unknown_scenario_lists_valid_names() {
        let err = scenario("fig9").unwrap_err().to_string();
        for name in SCENARIOS {
            assert!(err.contains(name));
        }
    }
}
