//! From raw I/Q records to quality-filtered binary traces.
//!
//! Per trace: locate the readout clusters, fit their I and Q projections
//! jointly with a sum of Gaussians sharing amplitudes, screen out traces
//! with too much leakage into higher levels, rotate the plane so the g→e
//! axis lies along I, and threshold the rotated I coordinate where the sum
//! of the two misidentification fractions is smallest.

pub mod fit;
pub mod histogram;
pub mod peaks;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Level;
use crate::stats::normal_cdf;
use fit::{fit_gaussian_sum, GaussianSum};
use histogram::Histogram;

/// Fewest records a trace must hold to be fitted.
pub const MIN_FIT_RECORDS: usize = 100_000;

/// One segment of an I/Q stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub index: u64,
    pub sampling_period_us: f64,
    pub records: Vec<[f32; 2]>,
}

/// Splits a record stream into traces of exactly `trace_len` records; a
/// shorter tail is dropped.
pub fn segment(records: &[[f32; 2]], trace_len: usize, sampling_period_us: f64) -> Vec<Trace> {
    records
        .chunks_exact(trace_len)
        .enumerate()
        .map(|(k, chunk)| Trace {
            index: k as u64,
            sampling_period_us,
            records: chunk.to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss1d {
    pub center: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterComponent {
    pub state: Level,
    pub center: [f64; 2],
    pub sigma: [f64; 2],
    pub amplitude: f64,
    pub population: f64,
    pub population_err: f64,
}

/// Outcome of the threshold scan on the rotated I axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// Fraction of the g distribution falling on the e side.
    pub misid_g_to_e: f64,
    /// Fraction of the e distribution falling on the g side.
    pub misid_e_to_g: f64,
    pub g: Gauss1d,
    pub e: Gauss1d,
}

impl Threshold {
    pub fn total_misid(&self) -> f64 {
        self.misid_g_to_e + self.misid_e_to_g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub components: Vec<ClusterComponent>,
    /// Rotation angle (radians) bringing the g→e axis onto +I.
    pub theta: f64,
    pub threshold: Option<Threshold>,
    pub chi2: f64,
    pub dof: usize,
}

impl ClusterModel {
    pub fn component(&self, level: Level) -> Option<&ClusterComponent> {
        self.components.iter().find(|c| c.state == level)
    }

    /// Population of `level`, zero when the level was not fitted.
    pub fn population(&self, level: Level) -> f64 {
        self.component(level).map_or(0.0, |c| c.population)
    }

    fn ge_centers(&self) -> Result<([f64; 2], [f64; 2])> {
        let g = self
            .component(Level::G)
            .ok_or_else(|| Error::degenerate("model has no g component"))?;
        let e = self
            .component(Level::E)
            .ok_or_else(|| Error::degenerate("model has no e component"))?;
        if g.center == e.center {
            return Err(Error::degenerate("g and e centers coincide"));
        }
        Ok((g.center, e.center))
    }
}

/// `θ = -atan2(ΔQ, ΔI)` for the g→e displacement.
pub fn rotation_angle(g: [f64; 2], e: [f64; 2]) -> Result<f64> {
    let (di, dq) = (e[0] - g[0], e[1] - g[1]);
    if di == 0.0 && dq == 0.0 {
        return Err(Error::degenerate("g and e centers coincide"));
    }
    Ok(-dq.atan2(di))
}

#[inline]
pub fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_states: usize,
    /// Multiplier on the Freeman–Diaconis bin width.
    pub bin_scale: f64,
    /// Approximate centers in g, e, f, h order used to label fitted modes.
    /// Without it the most populated mode is e, the next g, then f and h.
    pub reference_centers: Option<Vec<[f64; 2]>>,
    pub threshold_candidates: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_states: 3,
            bin_scale: 1.0,
            reference_centers: None,
            threshold_candidates: 1000,
        }
    }
}

fn label_peaks(peaks: &[peaks::Peak], reference: Option<&[[f64; 2]]>) -> Vec<Level> {
    let n = peaks.len();
    match reference {
        Some(refs) if refs.len() >= n => {
            let mut best = (f64::INFINITY, Vec::new());
            for_each_permutation(n, &mut |perm| {
                let cost: f64 = perm
                    .iter()
                    .enumerate()
                    .map(|(pk, &lv)| {
                        let (a, b) = (peaks[pk].center, refs[lv]);
                        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
                    })
                    .sum();
                if cost < best.0 {
                    best = (cost, perm.to_vec());
                }
            });
            best.1.into_iter().map(|k| Level::ALL[k]).collect()
        }
        _ => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| peaks[b].amplitude.total_cmp(&peaks[a].amplitude));
            let ranked = [Level::E, Level::G, Level::F, Level::H];
            let mut labels = vec![Level::G; n];
            for (rank, &pk) in order.iter().enumerate() {
                labels[pk] = ranked[rank];
            }
            labels
        }
    }
}

fn for_each_permutation(n: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(k: usize, items: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            rec(k + 1, items, f);
            items.swap(k, i);
        }
    }
    rec(0, &mut (0..n).collect(), f);
}

/// Fits `n_states` Gaussian clusters to the trace's I and Q projections.
pub fn fit_clusters(trace: &Trace, opts: &FitOptions) -> Result<ClusterModel> {
    let n_states = opts.n_states;
    if !(2..=4).contains(&n_states) {
        return Err(Error::domain(format!("n_states must be in 2..=4, got {n_states}")));
    }
    if trace.records.len() < MIN_FIT_RECORDS {
        return Err(Error::domain(format!(
            "trace has {} records, need at least {MIN_FIT_RECORDS}",
            trace.records.len()
        )));
    }
    let points: Vec<[f64; 2]> = trace
        .records
        .iter()
        .map(|r| [r[0] as f64, r[1] as f64])
        .collect();
    let mut found = peaks::find_peaks(&points);
    if found.len() < n_states {
        return Err(Error::degenerate(format!(
            "only {} resolvable modes for {n_states} states",
            found.len()
        )));
    }
    found.truncate(n_states);
    let labels = label_peaks(&found, opts.reference_centers.as_deref());

    let i_vals: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let q_vals: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let hists = [
        Histogram::freedman_diaconis(&i_vals, opts.bin_scale),
        Histogram::freedman_diaconis(&q_vals, opts.bin_scale),
    ];
    let total = points.len() as f64;
    let amp_sum: f64 = found.iter().map(|p| p.amplitude).sum();
    let amps: Vec<f64> = found.iter().map(|p| p.amplitude / amp_sum * total).collect();
    let axes: Vec<Vec<(f64, f64)>> = (0..2)
        .map(|a| found.iter().map(|p| (p.center[a], p.sigma[a])).collect())
        .collect();
    let outcome = fit_gaussian_sum(&hists, GaussianSum::new(&amps, &axes))?;
    let m = &outcome.model;

    let fitted_total: f64 = (0..n_states).map(|i| m.amplitude(i)).sum();
    if fitted_total <= 0.0 {
        return Err(Error::degenerate("all fitted amplitudes vanished"));
    }
    let mut components = Vec::with_capacity(n_states);
    for (i, &state) in labels.iter().enumerate().take(n_states) {
        let amp = m.amplitude(i);
        let pop = amp / fitted_total;
        // delta method on P_i = A_i / ΣA
        let mut var = 0.0;
        for a in 0..n_states {
            for b in 0..n_states {
                let da = (if a == i { 1.0 } else { 0.0 } - pop) / fitted_total;
                let db = (if b == i { 1.0 } else { 0.0 } - pop) / fitted_total;
                var += da * db * outcome.covariance[(a, b)];
            }
        }
        components.push(ClusterComponent {
            state,
            center: [m.mu(0, i), m.mu(1, i)],
            sigma: [m.sigma(0, i), m.sigma(1, i)],
            amplitude: amp,
            population: pop,
            population_err: var.max(0.0).sqrt(),
        });
    }
    components.sort_by_key(|c| c.state.index());
    for w in components.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let sep = ((a.center[0] - b.center[0]) / a.sigma[0].max(b.sigma[0])).hypot(
            (a.center[1] - b.center[1]) / a.sigma[1].max(b.sigma[1]),
        );
        if sep < 0.5 {
            return Err(Error::degenerate(format!(
                "fitted {} and {} clusters merged",
                a.state.name(),
                b.state.name()
            )));
        }
    }
    let mut model = ClusterModel {
        components,
        theta: 0.0,
        threshold: None,
        chi2: outcome.chi2,
        dof: outcome.dof,
    };
    let (g, e) = model.ge_centers()?;
    model.theta = rotation_angle(g, e)?;
    Ok(model)
}

/// Accepts the trace iff the combined f and h population is at most `max_leak`.
pub fn quality_filter(model: &ClusterModel, max_leak: f64) -> bool {
    model.population(Level::F) + model.population(Level::H) <= max_leak
}

/// Scans `candidates` evenly spaced thresholds between the two centers and
/// keeps the one with the smallest summed misidentification. Ground lies
/// below the threshold when `g.center < e.center`.
pub fn optimal_threshold(g: Gauss1d, e: Gauss1d, candidates: usize) -> Result<Threshold> {
    if g.center == e.center {
        return Err(Error::degenerate("g and e centers coincide"));
    }
    let candidates = candidates.max(2);
    let ground_below = g.center < e.center;
    let misid = |t: f64| {
        let g_tail = if ground_below {
            1.0 - normal_cdf((t - g.center) / g.sigma)
        } else {
            normal_cdf((t - g.center) / g.sigma)
        };
        let e_tail = if ground_below {
            normal_cdf((t - e.center) / e.sigma)
        } else {
            1.0 - normal_cdf((t - e.center) / e.sigma)
        };
        (g_tail, e_tail)
    };
    let mut best: Option<Threshold> = None;
    for k in 0..candidates {
        let t = g.center + (e.center - g.center) * k as f64 / (candidates - 1) as f64;
        let (mg, me) = misid(t);
        if best.is_none_or(|b| mg + me < b.total_misid()) {
            best = Some(Threshold {
                value: t,
                misid_g_to_e: mg,
                misid_e_to_g: me,
                g,
                e,
            });
        }
    }
    Ok(best.expect("at least two candidates"))
}

fn rotated_i(trace: &Trace, theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    trace
        .records
        .iter()
        .map(|r| r[0] as f64 * c - r[1] as f64 * s)
        .collect()
}

/// Fits g and e Gaussians to the rotated-I projection and stores the
/// optimal threshold in the returned model. Other levels are folded into
/// the e seed since they may project onto it. If the fit drifts more than
/// one width from the 2D projection, the projected Gaussians are used.
pub fn calibrate_threshold(trace: &Trace, model: &ClusterModel, opts: &FitOptions) -> Result<ClusterModel> {
    let (g, e) = model.ge_centers()?;
    let theta = rotation_angle(g, e)?;
    let values = rotated_i(trace, theta);
    let hist = Histogram::freedman_diaconis(&values, opts.bin_scale);
    let (s, c) = theta.sin_cos();
    let project = |level: Level| -> Result<Gauss1d> {
        let k = model
            .component(level)
            .ok_or_else(|| Error::degenerate("missing g/e component"))?;
        Ok(Gauss1d {
            center: rotate(k.center, theta)[0],
            sigma: ((k.sigma[0] * c).powi(2) + (k.sigma[1] * s).powi(2)).sqrt(),
        })
    };
    let (pg, pe) = (project(Level::G)?, project(Level::E)?);
    let g_amp = model.component(Level::G).map_or(0.0, |k| k.amplitude);
    let rest: f64 = model.components.iter().map(|k| k.amplitude).sum::<f64>() - g_amp;
    let seed = GaussianSum::new(&[g_amp, rest], &[vec![(pg.center, pg.sigma), (pe.center, pe.sigma)]]);
    let fitted = fit_gaussian_sum(std::slice::from_ref(&hist), seed).ok().map(|f| {
        let m = f.model;
        let at = |i| Gauss1d {
            center: m.mu(0, i),
            sigma: m.sigma(0, i),
        };
        (at(0), at(1))
    });
    let near = |a: Gauss1d, b: Gauss1d| (a.center - b.center).abs() <= b.sigma && a.sigma <= 2.0 * b.sigma && a.sigma >= 0.5 * b.sigma;
    let (fg, fe) = match fitted {
        Some((fg, fe)) if near(fg, pg) && near(fe, pe) => (fg, fe),
        _ => (pg, pe),
    };
    let threshold = optimal_threshold(fg, fe, opts.threshold_candidates)?;
    Ok(ClusterModel {
        theta,
        threshold: Some(threshold),
        ..model.clone()
    })
}

/// Thresholded 0/1 readout of one trace (0 = ground).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTrace {
    pub trace_index: u64,
    pub bits: Vec<u8>,
    pub accepted: bool,
}

impl BinaryTrace {
    pub fn new(trace_index: u64, bits: Vec<u8>) -> Self {
        Self {
            trace_index,
            bits,
            accepted: true,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    /// Measured `P(g)`: zeros over total records.
    pub fn ground_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.bits.len() as f64
        }
    }
}

/// Applies the model's rotation and threshold. A model without a stored
/// threshold is calibrated on this trace first.
pub fn rotate_and_threshold(trace: &Trace, model: &ClusterModel, opts: &FitOptions) -> Result<BinaryTrace> {
    let calibrated;
    let model = match model.threshold {
        Some(_) => model,
        None => {
            calibrated = calibrate_threshold(trace, model, opts)?;
            &calibrated
        }
    };
    let t = model.threshold.expect("calibrated");
    let ground_below = t.g.center < t.e.center;
    let bits = rotated_i(trace, model.theta)
        .into_iter()
        .map(|x| u8::from((x < t.value) != ground_below))
        .collect();
    Ok(BinaryTrace::new(trace.index, bits))
}

/// Full per-trace discrimination result.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminated {
    pub model: ClusterModel,
    pub binary: BinaryTrace,
}

/// Fit, screen and binarize one trace. Traces failing the leakage screen
/// still get a binary readout but are flagged as not accepted.
pub fn discriminate(trace: &Trace, opts: &FitOptions, max_leak: f64) -> Result<Discriminated> {
    let model = fit_clusters(trace, opts)?;
    let model = calibrate_threshold(trace, &model, opts)?;
    let mut binary = rotate_and_threshold(trace, &model, opts)?;
    binary.accepted = quality_filter(&model, max_leak);
    Ok(Discriminated { model, binary })
}
