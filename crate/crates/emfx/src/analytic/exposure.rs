//! Exposure distribution curves obtained by inverting the scenario's
//! characteristic function.

use crate::analytic::cf::{exposure_scale_hint, ExposureCf};
use crate::analytic::{DistributionCurve, Provenance, ScenarioSpec};
use crate::error::Result;
use crate::specfun::{gil_pelaez_cdf, CfHandle, CfTable};

/// The scenario's exposure CF wrapped for inversion.
pub fn exposure_cf_handle(scenario: &ScenarioSpec) -> Result<CfHandle> {
    Ok(ExposureCf::from_scenario(scenario)?.into_handle())
}

/// Tabulated inversion of the scenario's exposure CF. Building it costs the
/// full CF sweep once; evaluations afterwards are cheap.
pub fn exposure_table(scenario: &ScenarioSpec) -> Result<CfTable> {
    CfTable::build(&exposure_cf_handle(scenario)?)
}

/// Log-spaced grid covering the exposure distribution from deep lower tail
/// to beyond the fading tail of the strongest serving link.
pub fn default_exposure_grid(scenario: &ScenarioSpec, n: usize) -> Vec<f64> {
    let p = &scenario.params;
    let peak = match scenario.rat {
        crate::spatial::Rat::FourG => p.p4_eff,
        crate::spatial::Rat::FiveG => p.p5_eff,
        crate::spatial::Rat::EnDc => p.p4_eff + p.p5_eff,
    };
    let lo = 1e-5 * exposure_scale_hint(scenario.rat, p);
    let hi = 30.0 * peak;
    let n = n.max(2);
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (step * i as f64).exp()).collect()
}

/// Exposure CDF sampled on `grid`.
pub fn exposure_cdf(scenario: &ScenarioSpec, grid: &[f64]) -> Result<DistributionCurve> {
    let table = exposure_table(scenario)?;
    let raw: Vec<f64> = grid.iter().map(|&x| table.cdf(x)).collect();
    DistributionCurve::cdf(grid.to_vec(), raw, Provenance::Analytic)
}

/// Exposure PDF sampled on `grid`.
pub fn exposure_pdf(scenario: &ScenarioSpec, grid: &[f64]) -> Result<DistributionCurve> {
    let table = exposure_table(scenario)?;
    let raw: Vec<f64> = grid.iter().map(|&x| table.pdf(x)).collect();
    DistributionCurve::pdf(grid.to_vec(), raw, Provenance::Analytic)
}

/// Single-point CDF by direct oscillatory quadrature, independent of the
/// panel tabulation. Slower per point; used to cross-check tables.
pub fn exposure_cdf_at(scenario: &ScenarioSpec, x: f64) -> Result<f64> {
    let handle = exposure_cf_handle(scenario)?;
    gil_pelaez_cdf(&handle, x, &scenario.truncation.quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{Model, NetworkParams, Rat};

    fn scenario(rat: Rat, model: Model) -> ScenarioSpec {
        ScenarioSpec::new(rat, model, NetworkParams::default())
    }

    #[test]
    fn four_g_ppp_cdf_touches_both_tails_and_is_clean() {
        let sc = scenario(Rat::FourG, Model::Ppp);
        let grid = default_exposure_grid(&sc, 120);
        let curve = exposure_cdf(&sc, &grid).unwrap();
        assert!(curve.values[0] <= 1e-3, "low tail {}", curve.values[0]);
        let last = *curve.values.last().unwrap();
        assert!(last >= 0.999, "high tail {last}");
        assert!(curve.correction <= 1e-6, "isotonic moved {}", curve.correction);
    }

    #[test]
    fn table_matches_single_point_inversion() {
        let sc = scenario(Rat::FourG, Model::Ppp);
        let table = exposure_table(&sc).unwrap();
        for q in [0.25, 0.5, 0.9] {
            // Pull a rough quantile off the table and cross-check there.
            let grid = default_exposure_grid(&sc, 400);
            let x = grid
                .iter()
                .copied()
                .find(|&x| table.cdf(x) >= q)
                .unwrap();
            let direct = exposure_cdf_at(&sc, x).unwrap();
            assert!(
                (table.cdf(x) - direct).abs() <= 1e-6,
                "q={q}: table {} vs direct {}",
                table.cdf(x),
                direct
            );
        }
    }

    #[test]
    fn ppp_cdf_dominates_bgpp_within_slack() {
        let sp = scenario(Rat::FourG, Model::Ppp);
        let sb = scenario(Rat::FourG, Model::Bgpp);
        let grid = default_exposure_grid(&sp, 60);
        let fp = exposure_cdf(&sp, &grid).unwrap();
        let fb = exposure_cdf(&sb, &grid).unwrap();
        for i in 0..grid.len() {
            assert!(
                fp.values[i] >= fb.values[i] - 0.01,
                "x={:.3e}: ppp {} vs bgpp {}",
                grid[i],
                fp.values[i],
                fb.values[i]
            );
        }
    }

    #[test]
    fn endc_cdf_never_sits_above_four_g() {
        // Dual connectivity only adds terms to the exposure, so its CDF can
        // only sit at or below the 4G one.
        for model in [Model::Ppp, Model::Bgpp] {
            let s4 = scenario(Rat::FourG, model);
            let se = scenario(Rat::EnDc, model);
            let grid = default_exposure_grid(&se, 50);
            let f4 = exposure_cdf(&s4, &grid).unwrap();
            let fe = exposure_cdf(&se, &grid).unwrap();
            for i in 0..grid.len() {
                assert!(
                    fe.values[i] <= f4.values[i] + 1e-3,
                    "{model:?} x={:.3e}: endc {} vs 4g {}",
                    grid[i],
                    fe.values[i],
                    f4.values[i]
                );
            }
        }
    }

    #[test]
    fn median_exposure_grows_from_four_g_to_endc() {
        let s4 = scenario(Rat::FourG, Model::Bgpp);
        let se = scenario(Rat::EnDc, Model::Bgpp);
        let grid = default_exposure_grid(&se, 160);
        let m4 = exposure_cdf(&s4, &grid).unwrap().median().unwrap();
        let me = exposure_cdf(&se, &grid).unwrap().median().unwrap();
        assert!(m4 < me, "4g median {m4:.3e} vs endc median {me:.3e}");
    }

    #[test]
    fn pdf_mass_sums_to_unity() {
        // Trapezoid error on the log grid falls with the square of the step.
        let sc = scenario(Rat::FourG, Model::Ppp);
        let grid = default_exposure_grid(&sc, 1600);
        let pdf = exposure_pdf(&sc, &grid).unwrap();
        let mut mass = 0.0;
        for i in 1..grid.len() {
            mass += 0.5 * (pdf.values[i] + pdf.values[i - 1]) * (grid[i] - grid[i - 1]);
        }
        assert!((mass - 1.0).abs() <= 1e-3, "pdf mass {mass}");
    }
}
