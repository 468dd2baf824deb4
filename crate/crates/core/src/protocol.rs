//! Stochastic model of the fast decay detection protocol.
//!
//! Each cycle prepares the qubit in `|e>` with a conditional π-pulse, waits
//! `Δt_d`, reads the state out and cools down. Radiation impacts arrive as a
//! homogeneous Poisson process; each adds a relaxation rate
//! `Γ0·exp(-(t - t0)/τ)` on top of the baseline `1/T1`, which shows up in
//! the readout stream as a run of ground-state outcomes.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, threshold_u32, Purpose};

/// Number of readout records in one analysis trace.
pub const TRACE_LEN: usize = 1_000_000;

/// Sampled recovery times are clamped to this multiple of the mean so that
/// every burst has a finite horizon.
const MAX_RECOVERY_MULTIPLE: f64 = 20.0;

/// Added decay exponent below which a burst is considered over.
const BURST_NEGLIGIBLE: f64 = 1e-7;

/// Qubit energy levels resolved by the readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    G,
    E,
    F,
    H,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::G, Level::E, Level::F, Level::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::G => "g",
            Level::E => "e",
            Level::F => "f",
            Level::H => "h",
        }
    }
}

/// Timing of one protocol cycle, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub wait_us: f64,
    pub pi_pulse_us: f64,
    pub readout_us: f64,
    pub cooldown_us: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self::with_sampling_period(73.6).expect("valid default period")
    }
}

impl ProtocolConfig {
    pub fn new(wait_us: f64, pi_pulse_us: f64, readout_us: f64, cooldown_us: f64) -> Result<Self> {
        let cfg = Self {
            wait_us,
            pi_pulse_us,
            readout_us,
            cooldown_us,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 5 µs wait, 0.2 µs π-pulse, 7 µs readout, cooldown filling the rest
    /// of `sampling_period_us`.
    pub fn with_sampling_period(sampling_period_us: f64) -> Result<Self> {
        let (wait, pi, readout) = (5.0, 0.2, 7.0);
        Self::new(wait, pi, readout, sampling_period_us - wait - pi - readout)
    }

    /// `T_S`, the duration of one full cycle.
    pub fn sampling_period_us(&self) -> f64 {
        self.wait_us + self.pi_pulse_us + self.readout_us + self.cooldown_us
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wait", self.wait_us),
            ("pi_pulse", self.pi_pulse_us),
            ("readout", self.readout_us),
            ("cooldown", self.cooldown_us),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} duration must be > 0 µs, got {v}")));
            }
        }
        let ts = self.sampling_period_us();
        if !(1.0..=1000.0).contains(&ts) {
            return Err(Error::config(format!("sampling period {ts} µs outside [1, 1000]")));
        }
        Ok(())
    }

    /// Decay window `[start, end)` of cycle `cycle`, in µs since run start.
    fn decay_window(&self, cycle: u64) -> (f64, f64) {
        let start = cycle as f64 * self.sampling_period_us() + self.pi_pulse_us;
        (start, start + self.wait_us)
    }
}

/// A Gaussian readout cluster in the I/Q plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub sigma: [f64; 2],
}

impl Blob {
    pub fn new(i: f64, q: f64, sigma_i: f64, sigma_q: f64) -> Self {
        Self {
            center: [i, q],
            sigma: [sigma_i, sigma_q],
        }
    }

    fn normalized_distance2(&self, iq: [f64; 2]) -> f64 {
        let di = (iq[0] - self.center[0]) / self.sigma[0];
        let dq = (iq[1] - self.center[1]) / self.sigma[1];
        di * di + dq * dq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterGeometry {
    pub g: Blob,
    pub e: Blob,
    #[serde(default)]
    pub f: Option<Blob>,
}

impl ClusterGeometry {
    pub fn blob(&self, level: Level) -> Option<&Blob> {
        match level {
            Level::G => Some(&self.g),
            Level::E => Some(&self.e),
            Level::F => self.f.as_ref(),
            Level::H => None,
        }
    }
}

/// How the conditional π-pulse decides whether to act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    /// Each cycle starts in `|e>` with probability `reset_fidelity`,
    /// independently of earlier outcomes.
    #[default]
    Independent,
    /// The pulse acts on the previous *measured* outcome, so a misread
    /// leaves the qubit unprepared.
    MeasuredOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QubitModel {
    pub baseline_t1_us: f64,
    pub reset_fidelity: f64,
    pub reset_policy: ResetPolicy,
    pub misid_g_to_e: f64,
    pub misid_e_to_g: f64,
    pub leakage_prob_f: f64,
    pub leakage_dwell: u32,
    pub clusters: ClusterGeometry,
}

impl Default for QubitModel {
    fn default() -> Self {
        Self::typical()
    }
}

impl QubitModel {
    /// Device-like defaults: `T1` = 80 µs, 91% preparation fidelity,
    /// clusters about 6σ apart (0.1% misidentification) and under 1% of
    /// cycles spent in f, which puts `P(g)` near 0.145 at `Δt_d` = 5 µs.
    pub fn typical() -> Self {
        Self {
            baseline_t1_us: 80.0,
            reset_fidelity: 0.91,
            reset_policy: ResetPolicy::Independent,
            misid_g_to_e: 1e-3,
            misid_e_to_g: 1e-3,
            leakage_prob_f: 2e-3,
            leakage_dwell: 4,
            clusters: ClusterGeometry {
                g: Blob::new(-1.0, -0.6, 0.35, 0.35),
                e: Blob::new(1.0, 0.4, 0.35, 0.35),
                f: Some(Blob::new(2.2, -2.0, 0.35, 0.35)),
            },
        }
    }

    /// Noiseless readout and preparation.
    pub fn ideal(baseline_t1_us: f64) -> Self {
        Self {
            baseline_t1_us,
            reset_fidelity: 1.0,
            misid_g_to_e: 0.0,
            misid_e_to_g: 0.0,
            leakage_prob_f: 0.0,
            ..Self::typical()
        }
    }

    pub fn validate(&self, mode: StreamMode) -> Result<()> {
        if !(self.baseline_t1_us.is_finite() && self.baseline_t1_us > 0.0) {
            return Err(Error::config(format!("baseline T1 must be > 0, got {}", self.baseline_t1_us)));
        }
        for (name, p) in [
            ("reset_fidelity", self.reset_fidelity),
            ("misid_g_to_e", self.misid_g_to_e),
            ("misid_e_to_g", self.misid_e_to_g),
            ("leakage_prob_f", self.leakage_prob_f),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.leakage_prob_f > 0.0 && self.leakage_dwell == 0 {
            return Err(Error::config("leakage enabled with zero dwell"));
        }
        let c = &self.clusters;
        for blob in [Some(c.g), Some(c.e), c.f].into_iter().flatten() {
            if !(blob.sigma[0] > 0.0 && blob.sigma[1] > 0.0) {
                return Err(Error::config("cluster widths must be > 0"));
            }
        }
        if c.g.center == c.e.center {
            return Err(Error::config("g and e cluster centers coincide"));
        }
        if mode == StreamMode::Iq && self.leakage_prob_f > 0.0 && c.f.is_none() {
            return Err(Error::config("f-state leakage enabled but no f cluster geometry given"));
        }
        Ok(())
    }

    /// Stationary probability of reading `0` with no impacts, for the
    /// independent reset policy.
    pub fn expected_zero_fraction(&self, wait_us: f64) -> Result<f64> {
        let decay = expected_ground_probability(self.baseline_t1_us, wait_us)?;
        let ground = (1.0 - self.reset_fidelity) + self.reset_fidelity * decay;
        let read = ground * (1.0 - self.misid_g_to_e) + (1.0 - ground) * self.misid_e_to_g;
        Ok(read * (1.0 - self.f_occupancy()))
    }

    /// Long-run fraction of cycles spent in f.
    pub fn f_occupancy(&self) -> f64 {
        let l = self.leakage_prob_f;
        let d = self.leakage_dwell as f64;
        if l == 0.0 {
            0.0
        } else {
            l * d / (l * d + 1.0 - l)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoverySpread {
    /// Every burst recovers with exactly `recovery_time_us`.
    Fixed,
    /// Recovery times are exponentially distributed with mean
    /// `recovery_time_us` (clamped at 20× the mean).
    #[default]
    Exponential,
}

/// Impact rate and burst shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiationEnvironment {
    /// Impacts per second.
    pub impact_rate_hz: f64,
    /// Relaxation rate added at impact, 1/µs.
    pub burst_rate_per_us: f64,
    /// Mean recovery time constant, µs.
    pub recovery_time_us: f64,
    pub recovery_spread: RecoverySpread,
}

impl Default for RadiationEnvironment {
    fn default() -> Self {
        Self::quiet()
    }
}

impl RadiationEnvironment {
    pub fn quiet() -> Self {
        Self::with_rate(0.0)
    }

    /// Default burst shape (`Γ0` = 1/µs, mean `τ_rec` = 0.4 ms) at the given rate.
    pub fn with_rate(impact_rate_hz: f64) -> Self {
        Self {
            impact_rate_hz,
            burst_rate_per_us: 1.0,
            recovery_time_us: 400.0,
            recovery_spread: RecoverySpread::Exponential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.impact_rate_hz.is_finite() && self.impact_rate_hz >= 0.0) {
            return Err(Error::config(format!("impact rate must be >= 0, got {}", self.impact_rate_hz)));
        }
        if !(self.burst_rate_per_us.is_finite() && self.burst_rate_per_us >= 0.0) {
            return Err(Error::config("burst rate must be >= 0"));
        }
        if !(self.recovery_time_us.is_finite() && self.recovery_time_us > 0.0) {
            return Err(Error::config("recovery time must be > 0"));
        }
        Ok(())
    }

    /// Instantaneous `T1(t)` a time `dt_us` after an impact with recovery `tau_us`.
    pub fn t1_after_impact(&self, baseline_t1_us: f64, dt_us: f64, tau_us: f64) -> f64 {
        1.0 / (1.0 / baseline_t1_us + self.burst_rate_per_us * (-dt_us / tau_us).exp())
    }
}

/// `P(g) = 1 - exp(-Δt_d / T1)`: chance that a prepared `|e>` decays
/// during the wait.
pub fn expected_ground_probability(t1_us: f64, wait_us: f64) -> Result<f64> {
    if !(t1_us > 0.0) {
        return Err(Error::domain(format!("T1 must be > 0, got {t1_us}")));
    }
    if !(wait_us >= 0.0) {
        return Err(Error::domain(format!("wait must be >= 0, got {wait_us}")));
    }
    Ok(-(-wait_us / t1_us).exp_m1())
}

/// Number of consecutive zeros a burst of `burst_ms` produces at sampling
/// period `sampling_period_us`.
pub fn burst_zero_count(burst_ms: f64, sampling_period_us: f64) -> Result<u64> {
    if !(sampling_period_us > 0.0) {
        return Err(Error::domain(format!("sampling period must be > 0, got {sampling_period_us}")));
    }
    if !(burst_ms >= 0.0) {
        return Err(Error::domain("burst duration must be >= 0"));
    }
    Ok((burst_ms * 1000.0 / sampling_period_us).floor() as u64)
}

/// One injected radiation impact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub time_s: f64,
    pub recovery_time_us: f64,
    /// First cycle whose decay window ends after the impact.
    pub first_cycle: u64,
    /// Last cycle with `T1(t)` at most half the baseline (equal to
    /// `first_cycle` when the burst never halves `T1`).
    pub last_cycle: u64,
}

/// Ground truth of a simulated run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub impacts: Vec<Impact>,
}

impl TruthLog {
    pub fn len(&self) -> usize {
        self.impacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impacts.is_empty()
    }

    /// Impacts whose affected span intersects cycles `[start, end]`.
    pub fn overlapping(&self, start: u64, end: u64) -> impl Iterator<Item = (usize, &Impact)> {
        self.impacts
            .iter()
            .enumerate()
            .filter(move |(_, imp)| imp.first_cycle <= end && imp.last_cycle >= start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    /// Gaussian I/Q samples drawn around the true level's cluster.
    Iq,
    /// Direct 0/1 outcomes with misidentification applied.
    #[default]
    Binary,
}

/// Readout records of one trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Iq(Vec<[f32; 2]>),
    /// 0 = ground, 1 = anything else.
    Binary(Vec<u8>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Iq(v) => v.len(),
            Records::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrace {
    pub index: u64,
    pub first_cycle: u64,
    pub records: Records,
    /// Impacts whose affected span starts inside this trace.
    pub impacts: Vec<Impact>,
    /// How many records were emitted from each true level.
    pub level_counts: [u64; 4],
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    t0: f64,
    tau: f64,
    end: f64,
}

/// Immutable simulator; traces can be generated in any order or in parallel.
#[derive(Debug, Clone)]
pub struct Simulator {
    protocol: ProtocolConfig,
    qubit: QubitModel,
    env: RadiationEnvironment,
    mode: StreamMode,
    seed: u64,
    trace_len: usize,
}

impl Simulator {
    pub fn new(
        protocol: ProtocolConfig,
        qubit: QubitModel,
        env: RadiationEnvironment,
        mode: StreamMode,
        seed: u64,
    ) -> Result<Self> {
        protocol.validate()?;
        qubit.validate(mode)?;
        env.validate()?;
        Ok(Self {
            protocol,
            qubit,
            env,
            mode,
            seed,
            trace_len: TRACE_LEN,
        })
    }

    /// Overrides the segment length (default [`TRACE_LEN`]).
    pub fn with_trace_len(mut self, trace_len: usize) -> Result<Self> {
        if trace_len == 0 {
            return Err(Error::config("trace length must be >= 1"));
        }
        self.trace_len = trace_len;
        Ok(self)
    }

    pub fn protocol(&self) -> &ProtocolConfig {
        &self.protocol
    }

    pub fn qubit(&self) -> &QubitModel {
        &self.qubit
    }

    pub fn environment(&self) -> &RadiationEnvironment {
        &self.env
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn trace_len(&self) -> usize {
        self.trace_len
    }

    fn block_duration_us(&self) -> f64 {
        self.trace_len as f64 * self.protocol.sampling_period_us()
    }

    fn burst_end(&self, t0: f64, tau: f64) -> f64 {
        let strength = self.env.burst_rate_per_us * tau;
        if strength <= BURST_NEGLIGIBLE {
            t0
        } else {
            t0 + tau * (strength / BURST_NEGLIGIBLE).ln()
        }
    }

    /// Impacts whose arrival time falls in block `block`'s time interval.
    fn block_impacts(&self, block: u64) -> Vec<Impact> {
        let rate_per_us = self.env.impact_rate_hz * 1e-6;
        if rate_per_us <= 0.0 {
            return Vec::new();
        }
        let mut rng = substream(self.seed, block, Purpose::Impacts);
        let dur = self.block_duration_us();
        let start = block as f64 * dur;
        let end = start + dur;
        let mean_tau = self.env.recovery_time_us;
        let mut impacts = Vec::new();
        let mut t = start;
        loop {
            let gap: f64 = Exp1.sample(&mut rng);
            t += gap / rate_per_us;
            if t >= end {
                break;
            }
            let tau = match self.env.recovery_spread {
                RecoverySpread::Fixed => mean_tau,
                RecoverySpread::Exponential => {
                    let x: f64 = Exp1.sample(&mut rng);
                    (x * mean_tau).clamp(1e-6 * mean_tau, MAX_RECOVERY_MULTIPLE * mean_tau)
                }
            };
            impacts.push(self.describe_impact(t, tau));
        }
        impacts
    }

    fn describe_impact(&self, t0: f64, tau: f64) -> Impact {
        let ts = self.protocol.sampling_period_us();
        let offset = self.protocol.pi_pulse_us + self.protocol.wait_us;
        // first c with c*ts + offset > t0
        let first = ((t0 - offset) / ts).floor().max(-1.0) as i64 + 1;
        let first = first.max(0) as u64;
        let halving = self.env.burst_rate_per_us * self.qubit.baseline_t1_us;
        let last = if halving > 1.0 {
            let t_end = t0 + tau * halving.ln();
            // last c with c*ts + pi_pulse < t_end
            let c = ((t_end - self.protocol.pi_pulse_us) / ts).ceil() as i64 - 1;
            (c.max(0) as u64).max(first)
        } else {
            first
        };
        Impact {
            time_s: t0 * 1e-6,
            recovery_time_us: tau,
            first_cycle: first,
            last_cycle: last,
        }
    }

    /// Bursts that can affect cycles of block `block`, oldest first.
    fn bursts_for_block(&self, block: u64) -> (Vec<Burst>, Vec<Impact>) {
        if self.env.impact_rate_hz <= 0.0 {
            return (Vec::new(), Vec::new());
        }
        let dur = self.block_duration_us();
        let horizon = self.burst_end(0.0, MAX_RECOVERY_MULTIPLE * self.env.recovery_time_us);
        let lookback = (horizon / dur).ceil() as u64;
        let block_start = block as f64 * dur;
        let mut bursts = Vec::new();
        let mut own = Vec::new();
        for b in block.saturating_sub(lookback)..=block {
            for imp in self.block_impacts(b) {
                let t0 = imp.time_s * 1e6;
                let burst = Burst {
                    t0,
                    tau: imp.recovery_time_us,
                    end: self.burst_end(t0, imp.recovery_time_us),
                };
                if b == block {
                    own.push(imp);
                    bursts.push(burst);
                } else if burst.end > block_start {
                    bursts.push(burst);
                }
            }
        }
        (bursts, own)
    }

    /// All impacts injected during the first `n_cycles` cycles.
    pub fn truth_log(&self, n_cycles: u64) -> TruthLog {
        let ts = self.protocol.sampling_period_us();
        let run_end = n_cycles as f64 * ts;
        let blocks = n_cycles.div_ceil(self.trace_len as u64);
        let impacts = (0..blocks)
            .flat_map(|b| self.block_impacts(b))
            .filter(|imp| imp.time_s * 1e6 < run_end)
            .collect();
        TruthLog { impacts }
    }

    /// Generates trace `index` (cycles `index*trace_len ..`), truncated to
    /// `len` records.
    pub fn trace_with_len(&self, index: u64, len: usize) -> SimulatedTrace {
        let first_cycle = index * self.trace_len as u64;
        let (bursts, impacts) = self.bursts_for_block(index);
        let mut rng = substream(self.seed, index, Purpose::Qubit);
        let mut level_counts = [0u64; 4];
        let mut cycle = CycleState::new(&self.qubit);
        let records = match self.mode {
            StreamMode::Binary => {
                let mut out = Vec::with_capacity(len);
                let mut clock = BurstClock::new(self, bursts);
                for k in 0..len as u64 {
                    let decay = clock.decay_threshold(first_cycle + k);
                    let level = cycle.evolve(&mut rng, decay);
                    level_counts[level.index()] += 1;
                    let bit = cycle.read_binary(&mut rng, level);
                    cycle.last_measured_ground = bit == 0;
                    out.push(bit);
                }
                Records::Binary(out)
            }
            StreamMode::Iq => {
                let mut out = Vec::with_capacity(len);
                let mut clock = BurstClock::new(self, bursts);
                let geometry = self.qubit.clusters;
                for k in 0..len as u64 {
                    let decay = clock.decay_threshold(first_cycle + k);
                    let level = cycle.evolve(&mut rng, decay);
                    level_counts[level.index()] += 1;
                    let blob = geometry.blob(level).unwrap_or(&geometry.e);
                    let zi: f64 = StandardNormal.sample(&mut rng);
                    let zq: f64 = StandardNormal.sample(&mut rng);
                    let iq = [
                        blob.center[0] + blob.sigma[0] * zi,
                        blob.center[1] + blob.sigma[1] * zq,
                    ];
                    cycle.last_measured_ground =
                        geometry.g.normalized_distance2(iq) < geometry.e.normalized_distance2(iq);
                    out.push([iq[0] as f32, iq[1] as f32]);
                }
                Records::Iq(out)
            }
        };
        SimulatedTrace {
            index,
            first_cycle,
            records,
            impacts,
            level_counts,
        }
    }

    pub fn trace(&self, index: u64) -> SimulatedTrace {
        self.trace_with_len(index, self.trace_len)
    }

    /// Simulates `n_cycles` cycles as consecutive traces. The final trace is
    /// shorter when `n_cycles` is not a multiple of the trace length.
    pub fn simulate_run(&self, n_cycles: u64) -> Result<(Vec<SimulatedTrace>, TruthLog)> {
        if n_cycles == 0 {
            return Err(Error::domain("n_cycles must be >= 1"));
        }
        let len = self.trace_len as u64;
        let n_traces = n_cycles.div_ceil(len);
        let make = |i: u64| {
            let this_len = (n_cycles - i * len).min(len) as usize;
            self.trace_with_len(i, this_len)
        };
        #[cfg(feature = "parallel")]
        let traces: Vec<_> = {
            use rayon::prelude::*;
            (0..n_traces).into_par_iter().map(make).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let traces: Vec<_> = (0..n_traces).map(make).collect();
        Ok((traces, self.truth_log(n_cycles)))
    }
}

/// Per-cycle decay probability including active bursts.
struct BurstClock<'a> {
    protocol: &'a ProtocolConfig,
    base_exponent: f64,
    base_threshold: u64,
    burst_rate: f64,
    pending: std::vec::IntoIter<Burst>,
    next: Option<Burst>,
    active: Vec<Burst>,
}

impl<'a> BurstClock<'a> {
    fn new(sim: &'a Simulator, mut bursts: Vec<Burst>) -> Self {
        bursts.sort_by(|a, b| a.t0.total_cmp(&b.t0));
        let base_exponent = sim.protocol.wait_us / sim.qubit.baseline_t1_us;
        let mut pending = bursts.into_iter();
        let next = pending.next();
        Self {
            protocol: &sim.protocol,
            base_exponent,
            base_threshold: threshold_u32(-(-base_exponent).exp_m1()),
            burst_rate: sim.env.burst_rate_per_us,
            pending,
            next,
            active: Vec::new(),
        }
    }

    #[inline]
    fn decay_threshold(&mut self, cycle: u64) -> u64 {
        if self.active.is_empty() && self.next.is_none() {
            return self.base_threshold;
        }
        let (a, b) = self.protocol.decay_window(cycle);
        while let Some(burst) = self.next {
            if burst.t0 < b {
                self.active.push(burst);
                self.next = self.pending.next();
            } else {
                break;
            }
        }
        self.active.retain(|burst| burst.end > a);
        if self.active.is_empty() {
            return self.base_threshold;
        }
        let mut exponent = self.base_exponent;
        for burst in &self.active {
            let lo = a.max(burst.t0);
            exponent += self.burst_rate
                * burst.tau
                * ((-(lo - burst.t0) / burst.tau).exp() - (-(b - burst.t0) / burst.tau).exp());
        }
        threshold_u32(-(-exponent).exp_m1())
    }
}

/// Mutable per-trace qubit state.
struct CycleState {
    reset_threshold: u64,
    policy: ResetPolicy,
    leak_threshold: u64,
    leak_dwell: u32,
    misread_g: u64,
    misread_e: u64,
    leak_remaining: u32,
    excited_after_readout: bool,
    last_measured_ground: bool,
}

impl CycleState {
    fn new(qubit: &QubitModel) -> Self {
        Self {
            reset_threshold: threshold_u32(qubit.reset_fidelity),
            policy: qubit.reset_policy,
            leak_threshold: threshold_u32(qubit.leakage_prob_f),
            leak_dwell: qubit.leakage_dwell,
            misread_g: threshold_u32(qubit.misid_g_to_e),
            misread_e: threshold_u32(qubit.misid_e_to_g),
            leak_remaining: 0,
            excited_after_readout: true,
            last_measured_ground: false,
        }
    }

    /// Preparation, leakage and decay for one cycle; returns the level at readout.
    #[inline]
    fn evolve(&mut self, rng: &mut ChaCha8Rng, decay_threshold: u64) -> Level {
        let draw = rng.next_u64();
        let (u_reset, u_decay) = (draw & 0xffff_ffff, draw >> 32);
        let draw2 = rng.next_u64();
        let u_leak = draw2 >> 32;

        if self.leak_remaining > 0 {
            self.leak_remaining -= 1;
            self.excited_after_readout = true;
            return Level::F;
        }
        if u_leak < self.leak_threshold {
            self.leak_remaining = self.leak_dwell - 1;
            self.excited_after_readout = true;
            return Level::F;
        }

        let pulse_ok = u_reset < self.reset_threshold;
        let excited = match self.policy {
            ResetPolicy::Independent => pulse_ok,
            ResetPolicy::MeasuredOutcome => {
                if self.last_measured_ground {
                    // π-pulse flips whatever is there
                    self.excited_after_readout != pulse_ok
                } else {
                    self.excited_after_readout
                }
            }
        };
        let excited = excited && u_decay >= decay_threshold;
        self.excited_after_readout = excited;
        if excited {
            Level::E
        } else {
            Level::G
        }
    }

    #[inline]
    fn read_binary(&self, rng: &mut ChaCha8Rng, level: Level) -> u8 {
        let u = rng.next_u64() >> 32;
        match level {
            Level::G => u8::from(u < self.misread_g),
            Level::E => u8::from(u >= self.misread_e),
            Level::F | Level::H => 1,
        }
    }
}
