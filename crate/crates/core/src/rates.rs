//! Live-time rates, weighted straight-line fits and derived quantities.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::discrimination::BinaryTrace;
use crate::error::{Error, Result};
use crate::selection::SelectionThresholds;

/// Poisson 90% CL upper limit on the mean for zero observed events.
pub const POISSON_UL90_ZERO: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub err: f64,
    /// Set when no events were seen; `value` and `err` are then 0.
    pub upper_limit: Option<f64>,
}

pub fn event_rate(n_selected: u64, live_time_s: f64) -> Result<Rate> {
    if !(live_time_s > 0.0) {
        return Err(Error::domain(format!("live time must be > 0, got {live_time_s}")));
    }
    if n_selected == 0 {
        return Ok(Rate {
            value: 0.0,
            err: 0.0,
            upper_limit: Some(POISSON_UL90_ZERO / live_time_s),
        });
    }
    let n = n_selected as f64;
    Ok(Rate {
        value: n / live_time_s,
        err: n.sqrt() / live_time_s,
        upper_limit: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub sampling_period_us: f64,
    pub p_ground: f64,
    pub accepted_traces: u64,
    pub live_time_s: f64,
    pub n_selected: u64,
    pub rate: Rate,
    pub thresholds: Option<SelectionThresholds>,
}

impl RunResult {
    pub fn new(
        label: impl Into<String>,
        sampling_period_us: f64,
        p_ground: f64,
        accepted_traces: u64,
        live_records: u64,
        n_selected: u64,
        thresholds: Option<SelectionThresholds>,
    ) -> Result<Self> {
        let live_time_s = live_records as f64 * sampling_period_us * 1e-6;
        Ok(Self {
            label: label.into(),
            sampling_period_us,
            p_ground,
            accepted_traces,
            live_time_s,
            n_selected,
            rate: event_rate(n_selected, live_time_s)?,
            thresholds,
        })
    }
}

/// Writes one CSV row per run.
pub fn write_results_csv<W: Write>(out: W, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "sampling_period_us",
        "p_ground",
        "live_time_s",
        "n_selected",
        "rate",
        "rate_err",
        "upper_limit_90",
    ])
    .map_err(csv_err)?;
    for r in runs {
        w.write_record([
            r.label.clone(),
            r.sampling_period_us.to_string(),
            format!("{:.6}", r.p_ground),
            format!("{:.3}", r.live_time_s),
            r.n_selected.to_string(),
            format!("{:.6e}", r.rate.value),
            format!("{:.6e}", r.rate.err),
            r.rate.upper_limit.map(|u| format!("{u:.6e}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl From<(f64, f64, f64)> for FitPoint {
    fn from((x, y, sigma): (f64, f64, f64)) -> Self {
        Self { x, y, sigma }
    }
}

/// `y = p0 + p1·x`, with `p0` pinned to 0 when `intercept_fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p1: f64,
    pub p1_err: f64,
    pub p0: f64,
    pub p0_err: f64,
    pub cov_p0_p1: f64,
    pub intercept_fixed: bool,
    pub chi2: f64,
    pub dof: usize,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        self.p0 + self.p1 * x
    }

    pub fn eval_err(&self, x: f64) -> f64 {
        (self.p0_err.powi(2) + x * x * self.p1_err.powi(2) + 2.0 * x * self.cov_p0_p1)
            .max(0.0)
            .sqrt()
    }
}

/// Minimises `Σ ((y - p0 - p1·x)/σ)²` through the normal equations.
pub fn weighted_linear_fit(points: &[FitPoint], fix_intercept_zero: bool) -> Result<FitResult> {
    let needed = if fix_intercept_zero { 1 } else { 2 };
    if points.len() < needed {
        return Err(Error::domain(format!("need at least {needed} points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.sigma > 0.0)) {
        return Err(Error::domain(format!("non-positive uncertainty {} at x = {}", p.sigma, p.x)));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let w = p.sigma.powi(-2);
        s += w;
        sx += w * p.x;
        sy += w * p.y;
        sxx += w * p.x * p.x;
        sxy += w * p.x * p.y;
    }
    let (p0, p1, var0, var1, cov) = if fix_intercept_zero {
        if sxx == 0.0 {
            return Err(Error::degenerate("all x are zero"));
        }
        (0.0, sxy / sxx, 0.0, 1.0 / sxx, 0.0)
    } else {
        let det = s * sxx - sx * sx;
        if det <= 1e-12 * s * sxx {
            return Err(Error::degenerate("all x values are equal"));
        }
        (
            (sxx * sy - sx * sxy) / det,
            (s * sxy - sx * sy) / det,
            sxx / det,
            s / det,
            -sx / det,
        )
    };
    let chi2 = points
        .iter()
        .map(|p| ((p.y - p0 - p1 * p.x) / p.sigma).powi(2))
        .sum();
    Ok(FitResult {
        p1,
        p1_err: var1.sqrt(),
        p0,
        p0_err: var0.sqrt(),
        cov_p0_p1: cov,
        intercept_fixed: fix_intercept_zero,
        chi2,
        dof: points.len() - needed,
    })
}

/// Rescales a rate measured at `from_us` to what `model` predicts at `to_us`,
/// keeping its relative error.
pub fn sampling_period_correction(rate: Rate, from_us: f64, to_us: f64, model: &FitResult) -> Result<Rate> {
    let at_from = model.eval(from_us);
    if !(at_from > 0.0) {
        return Err(Error::domain(format!("model is non-positive ({at_from}) at T_S = {from_us} µs")));
    }
    let factor = model.eval(to_us) / at_from;
    Ok(Rate {
        value: rate.value * factor,
        err: rate.err * factor.abs(),
        upper_limit: rate.upper_limit.map(|u| u * factor),
    })
}

/// `T1' = -Δt_d / ln(N_e / N_tot)` from one binary trace.
pub fn effective_t1(binary: &BinaryTrace, wait_us: f64) -> Result<f64> {
    let total = binary.len();
    let excited = total - binary.zeros();
    if total == 0 || excited == 0 {
        return Err(Error::domain("no excited-state records"));
    }
    if excited == total {
        return Err(Error::domain("no decays observed; T1' is unbounded"));
    }
    Ok(-wait_us / (excited as f64 / total as f64).ln())
}

/// Mean of per-trace `T1'` over a run.
pub fn mean_effective_t1<'a>(traces: impl IntoIterator<Item = &'a BinaryTrace>, wait_us: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in traces {
        sum += effective_t1(t, wait_us)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("no traces"));
    }
    Ok(sum / n as f64)
}

/// Probability of at least one impact during `dt_s` at rate `r_hz`.
pub fn impact_probability(r_hz: f64, dt_s: f64) -> Result<f64> {
    if !(r_hz >= 0.0 && dt_s >= 0.0) {
        return Err(Error::domain(format!("rate {r_hz} and duration {dt_s} must be >= 0")));
    }
    Ok(-(-r_hz * dt_s).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "lowercase")]
pub enum TimeBudget {
    Bounded(f64),
    Unbounded,
}

impl TimeBudget {
    pub fn seconds(self) -> f64 {
        match self {
            TimeBudget::Bounded(s) => s,
            TimeBudget::Unbounded => f64::INFINITY,
        }
    }
}

/// Longest computation keeping the impact probability at or below `p_max`.
pub fn available_time(r_hz: f64, p_max: f64) -> Result<TimeBudget> {
    if !(r_hz >= 0.0) {
        return Err(Error::domain(format!("rate must be >= 0, got {r_hz}")));
    }
    if !(p_max > 0.0 && p_max < 1.0) {
        return Err(Error::domain(format!("P_max must lie in (0, 1), got {p_max}")));
    }
    if r_hz == 0.0 {
        return Ok(TimeBudget::Unbounded);
    }
    Ok(TimeBudget::Bounded(-(-p_max).ln_1p() / r_hz))
}

/// Plot-ready `x, y, y_err` rows.
pub fn write_xy_csv<W: Write>(out: W, header: [&str; 3], rows: &[FitPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for p in rows {
        w.write_record([format!("{}", p.x), format!("{:.6e}", p.y), format!("{:.6e}", p.sigma)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shielded_rate() {
        let r = event_rate(5, 12597.6).unwrap();
        assert_relative_eq!(r.value, 0.397e-3, max_relative = 2e-3);
        assert_relative_eq!(r.err, 0.1775e-3, max_relative = 2e-3);
    }

    #[test]
    fn rate_arithmetic() {
        let r = event_rate(100, 1000.0).unwrap();
        assert_eq!((r.value, r.err), (0.1, 0.01));
        let z = event_rate(0, 1000.0).unwrap();
        assert_eq!(z.value, 0.0);
        assert_relative_eq!(z.upper_limit.unwrap(), 2.302585e-3, max_relative = 1e-6);
        assert!(event_rate(3, 0.0).is_err());
    }

    #[test]
    fn exact_line() {
        let pts: Vec<FitPoint> = (0..5).map(|i| (i as f64, 2.0 * i as f64 + 1.0, 0.3).into()).collect();
        let f = weighted_linear_fit(&pts, false).unwrap();
        assert_relative_eq!(f.p1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.p0, 1.0, epsilon = 1e-12);
        assert!(f.chi2 < 1e-20);
        assert_eq!(f.dof, 3);
    }

    #[test]
    fn two_points_pass_through() {
        let f = weighted_linear_fit(&[(1.0, 3.0, 0.5).into(), (4.0, -1.0, 2.0).into()], false).unwrap();
        assert_relative_eq!(f.eval(1.0), 3.0, epsilon = 1e-12);
        assert_relative_eq!(f.eval(4.0), -1.0, epsilon = 1e-12);
        assert_eq!(f.dof, 0);
    }

    #[test]
    fn equal_x_is_degenerate() {
        let pts = [(2.0, 1.0, 1.0).into(), (2.0, 3.0, 1.0).into()];
        assert!(matches!(weighted_linear_fit(&pts, false), Err(Error::Degenerate(_))));
        assert!(weighted_linear_fit(&pts, true).is_ok());
    }

    #[test]
    fn flat_model_correction() {
        let flat = weighted_linear_fit(&[(40.0, 5.0, 1.0).into(), (74.0, 5.0, 1.0).into()], false).unwrap();
        let r = Rate {
            value: 3.0,
            err: 0.3,
            upper_limit: None,
        };
        let c = sampling_period_correction(r, 40.0, 74.0, &flat).unwrap();
        assert_relative_eq!(c.value, 3.0, epsilon = 1e-12);
        let same = sampling_period_correction(r, 55.0, 55.0, &flat).unwrap();
        assert_eq!(same, r);
    }

    #[test]
    fn two_point_fnal_model_gives_ten_percent_scale_correction() {
        let m = weighted_linear_fit(&[(40.0, 9.08e-3, 1e-4).into(), (74.0, 4.68e-3, 1e-4).into()], false).unwrap();
        let r = Rate {
            value: 1.0,
            err: 0.1,
            upper_limit: None,
        };
        let c = sampling_period_correction(r, 67.6, 73.6, &m).unwrap();
        let reduction = 1.0 - c.value;
        assert!((0.10..0.145).contains(&reduction), "{reduction}");
        assert_relative_eq!(c.err / c.value, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn t1_inversion() {
        let n = 100_000usize;
        let ones = (n as f64 * (-1.0f64).exp()).round() as usize;
        let bits: Vec<u8> = (0..n).map(|k| u8::from(k < ones)).collect();
        let t1 = effective_t1(&BinaryTrace::new(0, bits), 5.0).unwrap();
        assert_relative_eq!(t1, 5.0, max_relative = 1e-4);

        let ones = 93_940usize;
        let bits: Vec<u8> = (0..n).map(|k| u8::from(k < ones)).collect();
        let t1 = effective_t1(&BinaryTrace::new(0, bits), 5.0).unwrap();
        assert!((t1 - 80.0).abs() < 0.5, "{t1}");

        assert!(effective_t1(&BinaryTrace::new(0, vec![1; 10]), 5.0).is_err());
        assert!(effective_t1(&BinaryTrace::new(0, vec![0; 10]), 5.0).is_err());
    }

    #[test]
    fn impact_budget() {
        let dt = available_time(4e-3, 1e-3).unwrap().seconds();
        assert!((dt - 0.250).abs() / 0.250 < 0.02, "{dt}");
        assert_eq!(impact_probability(0.0, 123.0).unwrap(), 0.0);
        assert_relative_eq!(impact_probability(0.042, 0.17).unwrap(), 7.115e-3, max_relative = 1e-3);
        assert_eq!(available_time(0.0, 0.01).unwrap(), TimeBudget::Unbounded);
        assert!(available_time(1.0, 1.0).is_err());
    }
}
