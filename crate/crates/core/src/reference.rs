//! Published run summaries and source tables, used as fit inputs and as
//! consistency targets for the threshold and budget code.

use serde::Serialize;

use crate::budget::{CoefficientKind, SourceEntry};
use crate::error::{Error, Result};
use crate::rates::{sampling_period_correction, weighted_linear_fit, FitPoint, FitResult, Rate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRun {
    pub site: Site,
    pub label: &'static str,
    pub acquisition_min: f64,
    pub live_min: f64,
    pub sampling_period_us: f64,
    /// Percent.
    pub p_ground_pct: f64,
    pub n_signal_min: usize,
    pub n_control: (usize, usize),
    /// Events/s.
    pub rate: f64,
    pub rate_err: f64,
    /// Thorium source activity in kBq, if one was installed.
    pub source_kbq: Option<f64>,
}

impl ReferenceRun {
    pub fn p_ground(&self) -> f64 {
        self.p_ground_pct / 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Underground,
    Surface,
}

macro_rules! run {
    ($site:ident, $label:literal, $acq:literal, $live:literal, $ts:literal, $pg:literal,
     $ns:literal, ($c0:literal, $c1:literal), $rate:literal, $err:literal, $src:expr) => {
        ReferenceRun {
            site: Site::$site,
            label: $label,
            acquisition_min: $acq,
            live_min: $live,
            sampling_period_us: $ts,
            p_ground_pct: $pg,
            n_signal_min: $ns,
            n_control: ($c0, $c1),
            rate: $rate * 1e-3,
            rate_err: $err * 1e-3,
            source_kbq: $src,
        }
    };
}

pub const RUNS: [ReferenceRun; 24] = [
    run!(Underground, "shielded", 736.7, 209.96, 73.6, 11.8, 19, (6, 21), 0.40, 0.18, None),
    run!(Underground, "th-44kBq", 620.7, 114.0, 67.6, 14.5, 21, (8, 24), 16.0, 1.5, Some(44.2)),
    run!(Underground, "th-76kBq", 124.1, 46.3, 67.6, 13.8, 21, (7, 23), 16.6, 2.5, Some(75.9)),
    run!(Underground, "th-125kBq", 62.1, 23.7, 67.6, 15.5, 22, (9, 25), 26.8, 4.4, Some(125.4)),
    run!(Underground, "th-161kBq", 62.1, 62.1, 67.6, 14.9, 21, (8, 25), 29.4, 2.8, Some(161.0)),
    run!(Surface, "60us-run1", 240.0, 55.0, 60.0, 14.7, 21, (8, 23), 7.9, 1.5, None),
    run!(Surface, "60us-run2", 240.0, 180.0, 60.0, 15.8, 22, (9, 24), 6.47, 0.77, None),
    run!(Surface, "60us-run3", 130.0, 90.0, 60.0, 15.5, 22, (9, 24), 7.9, 1.0, None),
    run!(Surface, "68us-run1", 270.4, 270.4, 67.6, 14.2, 21, (8, 23), 5.26, 0.80, None),
    run!(Surface, "68us-run2", 270.4, 270.4, 67.6, 14.3, 21, (8, 24), 5.73, 0.59, None),
    run!(Surface, "68us-run3", 270.4, 270.4, 67.6, 13.5, 20, (7, 23), 5.79, 0.60, None),
    run!(Surface, "74us-run1", 294.4, 294.4, 73.6, 15.1, 21, (9, 25), 5.32, 0.55, None),
    run!(Surface, "74us-run2", 294.4, 294.4, 73.6, 14.5, 21, (8, 24), 4.47, 0.50, None),
    run!(Surface, "74us-run3", 294.4, 294.4, 73.6, 14.2, 21, (8, 23), 4.98, 0.53, None),
    run!(Surface, "74us-run4", 294.4, 294.4, 73.6, 15.0, 21, (8, 24), 4.13, 0.48, None),
    run!(Surface, "50us-run1", 200.0, 200.0, 50.0, 16.0, 22, (9, 26), 8.33, 0.83, None),
    run!(Surface, "50us-run2", 200.0, 200.0, 50.0, 16.3, 22, (9, 26), 8.58, 0.85, None),
    run!(Surface, "50us-run3", 200.0, 200.0, 50.0, 17.6, 23, (11, 28), 9.08, 0.87, None),
    run!(Surface, "40us-run1", 159.2, 159.2, 39.8, 15.8, 22, (9, 25), 8.48, 0.94, None),
    run!(Surface, "40us-run2", 159.2, 159.2, 39.8, 15.7, 22, (9, 25), 8.58, 0.95, None),
    run!(Surface, "40us-run3", 159.2, 159.2, 39.8, 15.0, 22, (8, 24), 10.3, 1.0, None),
    run!(Surface, "55us-run1", 220.4, 220.4, 55.1, 15.9, 22, (9, 26), 7.26, 0.74, None),
    run!(Surface, "55us-run2", 220.4, 220.4, 55.1, 16.2, 22, (9, 26), 7.57, 0.76, None),
    run!(Surface, "55us-run3", 220.4, 220.4, 55.1, 16.2, 22, (9, 26), 7.26, 0.74, None),
];

/// Expected substrate interaction rate (events/s) against Thorium source
/// activity (kBq): `(activity, rate, rate_err)`.
pub const THORIUM_EXPECTED: [(f64, f64, f64); 4] = [
    (44.2, 0.12, 0.01),
    (75.9, 0.20, 0.02),
    (125.4, 0.34, 0.04),
    (161.0, 0.43, 0.05),
];

/// Measured room γ flux, γ/cm²/s.
pub const SURFACE_GAMMA_FLUX: (f64, f64) = (1.7, 0.9);
pub const UNDERGROUND_GAMMA_FLUX: (f64, f64) = (1.0, 0.5);
/// Assumed muon flux at the surface lab: 1 /cm²/min.
pub const SURFACE_MUON_FLUX: f64 = 1.0 / 60.0;
/// Rock overburden suppression of the muon flux underground.
pub const UNDERGROUND_MUON_SUPPRESSION: f64 = 1e-6;

/// Source entries of the surface-lab budget.
pub fn surface_budget() -> Vec<SourceEntry> {
    let (flux, flux_err) = SURFACE_GAMMA_FLUX;
    vec![
        SourceEntry::scaled(
            "Lab gamma-ray",
            CoefficientKind::Flux,
            (31e-3 / flux, 2e-3 / flux),
            (flux, flux_err),
        ),
        SourceEntry::scaled(
            "Muons",
            CoefficientKind::Flux,
            (8e-3 / SURFACE_MUON_FLUX, 0.5e-3 / SURFACE_MUON_FLUX),
            (SURFACE_MUON_FLUX, 0.0),
        ),
        SourceEntry::fixed("Setup", 2.7e-3, 0.5e-3),
    ]
}

/// Source entries of the underground budget. Muons enter as an upper limit.
pub fn underground_budget() -> Vec<SourceEntry> {
    let (flux, flux_err) = UNDERGROUND_GAMMA_FLUX;
    vec![
        SourceEntry::scaled(
            "Lab gamma-ray",
            CoefficientKind::Flux,
            (1.3e-3 / flux, 0.1e-3 / flux),
            (flux, flux_err),
        ),
        SourceEntry::fixed("Muons", 1e-5, 0.0).as_upper_limit(),
        SourceEntry::fixed("Setup", 2.7e-3, 0.5e-3),
    ]
}

/// Rate-vs-sampling-period model from the surface runs and the source
/// detection efficiency derived with it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyAnalysis {
    /// Surface runs: `(T_S, rate, rate_err)`.
    pub rate_points: Vec<FitPoint>,
    pub rate_model: FitResult,
    /// Period the source rates are corrected to (the shielded run's).
    pub target_period_us: f64,
    /// `(expected rate, corrected measured rate, err)` per source run.
    pub source_points: Vec<FitPoint>,
    /// Through-origin slope: fraction of expected interactions detected.
    pub efficiency: FitResult,
}

pub fn efficiency_analysis() -> Result<EfficiencyAnalysis> {
    let rate_points: Vec<FitPoint> = RUNS
        .iter()
        .filter(|r| r.site == Site::Surface)
        .map(|r| (r.sampling_period_us, r.rate, r.rate_err).into())
        .collect();
    let rate_model = weighted_linear_fit(&rate_points, false)?;
    let target = RUNS
        .iter()
        .find(|r| r.site == Site::Underground && r.source_kbq.is_none())
        .expect("table has a shielded run")
        .sampling_period_us;
    let mut source_points = Vec::new();
    for r in RUNS.iter().filter(|r| r.source_kbq.is_some()) {
        let kbq = r.source_kbq.unwrap();
        let &(_, expected, _) = THORIUM_EXPECTED
            .iter()
            .find(|e| e.0 == kbq)
            .ok_or_else(|| Error::config(format!("no expected rate for {kbq} kBq")))?;
        let measured = Rate {
            value: r.rate,
            err: r.rate_err,
            upper_limit: None,
        };
        let c = sampling_period_correction(measured, r.sampling_period_us, target, &rate_model)?;
        source_points.push(FitPoint {
            x: expected,
            y: c.value,
            sigma: c.err,
        });
    }
    let efficiency = weighted_linear_fit(&source_points, true)?;
    Ok(EfficiencyAnalysis {
        rate_points,
        rate_model,
        target_period_us: target,
        source_points,
        efficiency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        assert_eq!(RUNS.iter().filter(|r| r.site == Site::Underground).count(), 5);
        assert_eq!(RUNS.iter().filter(|r| r.source_kbq.is_some()).count(), 4);
        for r in &RUNS {
            assert!(r.live_min <= r.acquisition_min);
            assert!(r.n_control.0 < r.n_control.1);
        }
    }

    #[test]
    fn source_runs_give_a_few_percent_efficiency() {
        let a = efficiency_analysis().unwrap();
        assert_eq!(a.source_points.len(), 4);
        assert_eq!(a.target_period_us, 73.6);
        assert!(a.rate_model.p1 < 0.0);
        assert!((a.efficiency.p1 - 0.069).abs() < 0.005, "{}", a.efficiency.p1);
    }

    #[test]
    fn muon_limit_is_above_the_scaled_flux() {
        let scaled = 8e-3 * UNDERGROUND_MUON_SUPPRESSION;
        assert!(scaled < 1e-5);
    }
}
