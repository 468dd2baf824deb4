//! Browser bindings: each export takes plain numbers and returns a JSON
//! string for the page script to draw.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qburst::discrimination::{optimal_threshold, BinaryTrace, Gauss1d};
use qburst::protocol::{ProtocolConfig, QubitModel, RadiationEnvironment, Records, Simulator, StreamMode};
use qburst::rates::{available_time, impact_probability};
use qburst::selection::{compute_thresholds, SelectionConfig};
use qburst::stats::normal_cdf;
use qburst::trigger::{scan_triggers, Disposition, TriggerConfig};

fn to_js<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: qburst::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct ThresholdView {
    threshold: f64,
    misid_g_to_e: f64,
    misid_e_to_g: f64,
    /// `(t, g density, e density, total misid)` across the plotted span.
    curve: Vec<[f64; 4]>,
}

/// Ground and excited readout Gaussians on the rotated I axis.
#[wasm_bindgen]
pub fn threshold_explorer(g_center: f64, g_sigma: f64, e_center: f64, e_sigma: f64) -> Result<String, JsValue> {
    if !(g_sigma > 0.0 && e_sigma > 0.0) {
        return Err(JsValue::from_str("widths must be positive"));
    }
    let g = Gauss1d { center: g_center, sigma: g_sigma };
    let e = Gauss1d { center: e_center, sigma: e_sigma };
    let best = optimal_threshold(g, e, 1000).map_err(js_err)?;
    let lo = g_center.min(e_center) - 4.0 * g_sigma.max(e_sigma);
    let hi = g_center.max(e_center) + 4.0 * g_sigma.max(e_sigma);
    let ground_below = g_center < e_center;
    let pdf = |x: f64, c: Gauss1d| {
        let z = (x - c.center) / c.sigma;
        (-0.5 * z * z).exp() / (c.sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let curve = (0..=300)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / 300.0;
            let below_g = normal_cdf((t - g_center) / g_sigma);
            let below_e = normal_cdf((t - e_center) / e_sigma);
            let misid = if ground_below {
                1.0 - below_g + below_e
            } else {
                below_g + 1.0 - below_e
            };
            [t, pdf(t, g), pdf(t, e), misid]
        })
        .collect();
    to_js(&ThresholdView {
        threshold: best.value,
        misid_g_to_e: best.misid_g_to_e,
        misid_e_to_g: best.misid_e_to_g,
        curve,
    })
}

#[derive(Serialize)]
struct EventView {
    t: usize,
    n_signal: usize,
    n_control: usize,
    accepted: bool,
}

#[derive(Serialize)]
struct TraceView {
    sampling_period_us: f64,
    p_ground: f64,
    n_signal_min: usize,
    n_control: [usize; 2],
    /// Zeros per block of `block` records.
    block: usize,
    zeros: Vec<u32>,
    impacts: Vec<usize>,
    events: Vec<EventView>,
}

/// Simulates one binary trace and runs the trigger and selection on it.
#[wasm_bindgen]
pub fn simulate_trace(
    sampling_period_us: f64,
    impact_rate_hz: f64,
    n_records: usize,
    seed: u32,
) -> Result<String, JsValue> {
    let protocol = ProtocolConfig::with_sampling_period(sampling_period_us).map_err(js_err)?;
    let sim = Simulator::new(
        protocol,
        QubitModel::typical(),
        RadiationEnvironment::with_rate(impact_rate_hz),
        StreamMode::Binary,
        seed.into(),
    )
    .and_then(|s| s.with_trace_len(n_records))
    .map_err(js_err)?;
    let trace = sim.trace(0);
    let Records::Binary(bits) = trace.records else {
        unreachable!("binary stream");
    };
    let binary = BinaryTrace::new(0, bits);
    let trig = TriggerConfig::default();
    let ts = sim.protocol().sampling_period_us();
    let thr = compute_thresholds(binary.ground_fraction(), ts, &trig, &SelectionConfig::default()).map_err(js_err)?;
    let events = scan_triggers(&binary, &trig)
        .map_err(js_err)?
        .into_iter()
        .map(|e| EventView {
            t: e.t,
            n_signal: e.n_signal,
            n_control: e.n_control,
            accepted: thr.judge(e.n_signal, e.n_control) == Disposition::Accepted,
        })
        .collect();
    let block = (n_records / 600).max(1);
    let zeros = binary
        .bits
        .chunks(block)
        .map(|c| c.iter().filter(|&&b| b == 0).count() as u32)
        .collect();
    let impacts = trace
        .impacts
        .iter()
        .map(|i| (i.first_cycle - trace.first_cycle) as usize)
        .collect();
    to_js(&TraceView {
        sampling_period_us: ts,
        p_ground: thr.p_ground,
        n_signal_min: thr.n_signal_min,
        n_control: [thr.n_control_min, thr.n_control_max],
        block,
        zeros,
        impacts,
        events,
    })
}

#[derive(Serialize)]
struct ImpactView {
    /// Seconds the computation may run at `p_max`; null when unbounded.
    available_s: Option<f64>,
    /// `(duration s, P_impact)` on a log grid.
    curve: Vec<[f64; 2]>,
}

/// Chance of at least one impact against computation time.
#[wasm_bindgen]
pub fn impact_curve(rate_hz: f64, p_max: f64) -> Result<String, JsValue> {
    let budget = available_time(rate_hz, p_max).map_err(js_err)?.seconds();
    let curve = (0..=200)
        .map(|k| {
            let dt = 10f64.powf(-5.0 + 7.0 * k as f64 / 200.0);
            impact_probability(rate_hz, dt).map(|p| [dt, p])
        })
        .collect::<Result<_, _>>()
        .map_err(js_err)?;
    to_js(&ImpactView {
        available_s: budget.is_finite().then_some(budget),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_threshold_sits_at_the_midpoint() {
        let v: serde_json::Value = serde_json::from_str(&threshold_explorer(-1.0, 1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(v["threshold"].as_f64().unwrap().abs() < 2e-3);
        let total = v["misid_g_to_e"].as_f64().unwrap() + v["misid_e_to_g"].as_f64().unwrap();
        assert!((total - 0.3173).abs() < 1e-3);
    }

    #[test]
    fn trace_view_has_blocks_and_cuts() {
        let v: serde_json::Value = serde_json::from_str(&simulate_trace(40.0, 2.0, 60_000, 3).unwrap()).unwrap();
        assert_eq!(v["zeros"].as_array().unwrap().len(), 600);
        assert!(v["n_signal_min"].as_u64().unwrap() >= 4);
    }

    #[test]
    fn impact_curve_reaches_the_budget() {
        let v: serde_json::Value = serde_json::from_str(&impact_curve(4e-3, 1e-3).unwrap()).unwrap();
        let t = v["available_s"].as_f64().unwrap();
        assert!((t - 0.25).abs() < 0.25 * 0.02);
        let v: serde_json::Value = serde_json::from_str(&impact_curve(0.0, 1e-3).unwrap()).unwrap();
        assert!(v["available_s"].is_null());
    }
}
