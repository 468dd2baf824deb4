//! Binomial selection cuts separating radiation candidates from decay noise.
//!
//! Under the null hypothesis every record is an independent Bernoulli trial
//! with the run's measured `P(g)`. The signal cut is the smallest zero count
//! whose false-event rate stays below a target; the control cut keeps only
//! windows whose zero count is not itself improbable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{binomial_pmf, binomial_tail};
use crate::trigger::{Disposition, RejectReason, TriggerConfig, TriggeredEvent};

/// How the decay-noise rate behind the signal cut is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `R(n) = P(X >= n) / T_S` with `X ~ Bin(signal window, P(g))`.
    #[default]
    Unconditioned,
    /// `R(n) = p^k (1-p) / T_S · P(Y >= n - k)` with
    /// `Y ~ Bin(signal window - k, P(g))`: trigger rate times the chance the
    /// rest of the window completes the count.
    TriggerConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Target false-event rate, events per second.
    pub noise_rate_target: f64,
    /// Control-window counts with pointwise probability below this are rejected.
    pub control_pmf_cut: f64,
    pub noise_model: NoiseModel,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            noise_rate_target: 1e-4,
            control_pmf_cut: 0.01,
            noise_model: NoiseModel::Unconditioned,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_rate_target > 0.0) {
            return Err(Error::config("noise rate target must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.control_pmf_cut) {
            return Err(Error::config("control PMF cut must be a probability"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub p_ground: f64,
    pub sampling_period_us: f64,
    pub signal_window: usize,
    pub control_window: usize,
    pub noise_model: NoiseModel,
    pub noise_rate_target: f64,
    pub control_pmf_cut: f64,
    pub n_signal_min: usize,
    pub n_control_min: usize,
    pub n_control_max: usize,
    /// Modelled false-event rate at `n_signal_min`, events per second.
    pub achieved_noise_rate: f64,
}

fn check_p(p_ground: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p_ground) {
        return Err(Error::domain(format!("P(g) = {p_ground} outside [0, 1]")));
    }
    Ok(())
}

/// Modelled false-event rate (1/s) for a signal cut at `n` zeros.
pub fn noise_rate(
    p_ground: f64,
    sampling_period_us: f64,
    n: usize,
    trig: &TriggerConfig,
    model: NoiseModel,
) -> Result<f64> {
    check_p(p_ground)?;
    if !(sampling_period_us > 0.0) {
        return Err(Error::domain("sampling period must be > 0"));
    }
    let window = trig.signal_len() as u64;
    let ts_s = sampling_period_us * 1e-6;
    let per_window = match model {
        NoiseModel::Unconditioned => binomial_tail(window, p_ground, n as u64)?,
        NoiseModel::TriggerConditioned => {
            let k = trig.n_consecutive as u64;
            let rest = window - k;
            let need = (n as u64).saturating_sub(k).min(rest);
            p_ground.powi(k as i32) * (1.0 - p_ground) * binomial_tail(rest, p_ground, need)?
        }
    };
    Ok(per_window / ts_s)
}

/// Smallest signal-window zero count whose modelled noise rate is below
/// target, floored at the trigger run length.
pub fn compute_signal_threshold(
    p_ground: f64,
    sampling_period_us: f64,
    trig: &TriggerConfig,
    cfg: &SelectionConfig,
) -> Result<usize> {
    check_p(p_ground)?;
    let floor = trig.n_consecutive;
    if p_ground == 0.0 {
        return Ok(floor);
    }
    for n in floor..=trig.signal_len() {
        if noise_rate(p_ground, sampling_period_us, n, trig, cfg.noise_model)? < cfg.noise_rate_target {
            return Ok(n);
        }
    }
    Err(Error::Saturation(format!(
        "no signal cut reaches {:.1e}/s at P(g) = {p_ground}, T_S = {sampling_period_us} µs",
        cfg.noise_rate_target
    )))
}

/// Contiguous range of control zero counts whose binomial PMF is at least the cut.
pub fn compute_control_bounds(
    p_ground: f64,
    trig: &TriggerConfig,
    cfg: &SelectionConfig,
) -> Result<(usize, usize)> {
    check_p(p_ground)?;
    let n = trig.control_span as u64;
    let mut lo = None;
    let mut hi = None;
    for k in 0..=n {
        if binomial_pmf(n, p_ground, k)? >= cfg.control_pmf_cut {
            lo.get_or_insert(k as usize);
            hi = Some(k as usize);
        }
    }
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => Err(Error::DegenerateCut(format!(
            "no control count has PMF >= {} at P(g) = {p_ground}",
            cfg.control_pmf_cut
        ))),
    }
}

pub fn compute_thresholds(
    p_ground: f64,
    sampling_period_us: f64,
    trig: &TriggerConfig,
    cfg: &SelectionConfig,
) -> Result<SelectionThresholds> {
    trig.validate()?;
    cfg.validate()?;
    let n_signal_min = compute_signal_threshold(p_ground, sampling_period_us, trig, cfg)?;
    let (n_control_min, n_control_max) = compute_control_bounds(p_ground, trig, cfg)?;
    Ok(SelectionThresholds {
        p_ground,
        sampling_period_us,
        signal_window: trig.signal_len(),
        control_window: trig.control_span,
        noise_model: cfg.noise_model,
        noise_rate_target: cfg.noise_rate_target,
        control_pmf_cut: cfg.control_pmf_cut,
        n_signal_min,
        n_control_min,
        n_control_max,
        achieved_noise_rate: noise_rate(p_ground, sampling_period_us, n_signal_min, trig, cfg.noise_model)?,
    })
}

impl SelectionThresholds {
    pub fn judge(&self, n_signal: usize, n_control: usize) -> Disposition {
        if n_signal < self.n_signal_min {
            Disposition::Rejected(RejectReason::LowSignal)
        } else if n_control < self.n_control_min || n_control > self.n_control_max {
            Disposition::Rejected(RejectReason::ControlNoise)
        } else {
            Disposition::Accepted
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub accepted: usize,
    pub low_signal: usize,
    pub control_noise: usize,
}

/// Marks each event accepted or rejected; returns the accepted subset.
pub fn select_events(
    events: &mut [TriggeredEvent],
    thr: &SelectionThresholds,
) -> (Vec<TriggeredEvent>, RejectionStats) {
    let mut stats = RejectionStats::default();
    let mut accepted = Vec::new();
    for ev in events.iter_mut() {
        ev.disposition = thr.judge(ev.n_signal, ev.n_control);
        match ev.disposition {
            Disposition::Accepted => {
                stats.accepted += 1;
                accepted.push(ev.clone());
            }
            Disposition::Rejected(RejectReason::LowSignal) => stats.low_signal += 1,
            Disposition::Rejected(RejectReason::ControlNoise) => stats.control_noise += 1,
            Disposition::Pending => unreachable!("judge never returns pending"),
        }
    }
    (accepted, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::Snapshot;

    fn trig() -> TriggerConfig {
        TriggerConfig::default()
    }

    #[test]
    fn zero_noise_floor_rule() {
        let cfg = SelectionConfig::default();
        assert_eq!(compute_signal_threshold(0.0, 73.6, &trig(), &cfg).unwrap(), 4);
        assert_eq!(compute_signal_threshold(0.0, 1.0, &trig(), &cfg).unwrap(), 4);
    }

    #[test]
    fn certain_ground_saturates() {
        let cfg = SelectionConfig::default();
        assert!(matches!(
            compute_signal_threshold(1.0, 73.6, &trig(), &cfg),
            Err(Error::Saturation(_))
        ));
    }

    #[test]
    fn shielded_and_source_rows_within_one() {
        let cfg = SelectionConfig::default();
        let n = compute_signal_threshold(0.118, 73.6, &trig(), &cfg).unwrap();
        assert!(n.abs_diff(19) <= 1, "{n}");
        let n = compute_signal_threshold(0.145, 67.6, &trig(), &cfg).unwrap();
        assert!(n.abs_diff(21) <= 1, "{n}");
    }

    #[test]
    fn control_bounds_reference_rows() {
        let cfg = SelectionConfig::default();
        let (lo, hi) = compute_control_bounds(0.145, &trig(), &cfg).unwrap();
        assert!(lo.abs_diff(8) <= 1 && hi.abs_diff(24) <= 1, "({lo}, {hi})");
        let (lo, hi) = compute_control_bounds(0.118, &trig(), &cfg).unwrap();
        assert!(lo.abs_diff(6) <= 1 && hi.abs_diff(21) <= 1, "({lo}, {hi})");
    }

    #[test]
    fn impossible_control_cut() {
        let cfg = SelectionConfig {
            control_pmf_cut: 1.0,
            ..SelectionConfig::default()
        };
        assert!(matches!(
            compute_control_bounds(0.145, &trig(), &cfg),
            Err(Error::DegenerateCut(_))
        ));
    }

    #[test]
    fn conditioned_model_is_looser_or_equal() {
        let cfg = SelectionConfig::default();
        let cond = SelectionConfig {
            noise_model: NoiseModel::TriggerConditioned,
            ..cfg
        };
        for pg in [0.12, 0.15, 0.18] {
            let a = compute_signal_threshold(pg, 60.0, &trig(), &cfg).unwrap();
            let b = compute_signal_threshold(pg, 60.0, &trig(), &cond).unwrap();
            assert!(b <= a);
        }
    }

    fn event(n_signal: usize, n_control: usize) -> TriggeredEvent {
        TriggeredEvent {
            trace: 0,
            t: 200,
            n_control,
            n_signal,
            snapshot: Snapshot::from_bits(&[1; 145]),
            disposition: Disposition::Pending,
        }
    }

    #[test]
    fn dispositions() {
        let thr = compute_thresholds(0.145, 67.6, &trig(), &SelectionConfig::default()).unwrap();
        let mut evs = vec![
            event(40, 15),
            event(40, 60),
            event(thr.n_signal_min - 1, 15),
            event(thr.n_signal_min, thr.n_control_min),
        ];
        let (acc, stats) = select_events(&mut evs, &thr);
        assert_eq!(acc.len(), 2);
        assert_eq!(evs[0].disposition, Disposition::Accepted);
        assert_eq!(evs[1].disposition, Disposition::Rejected(RejectReason::ControlNoise));
        assert_eq!(evs[2].disposition, Disposition::Rejected(RejectReason::LowSignal));
        assert_eq!(evs[3].disposition, Disposition::Accepted);
        assert_eq!(
            stats,
            RejectionStats {
                accepted: 2,
                low_signal: 1,
                control_noise: 1
            }
        );
    }
}
