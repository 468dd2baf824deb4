//! Run-of-zeros trigger with fixed control/signal windows and dead time.
//!
//! Window geometry around a trigger at index `t` (first zero of the run):
//!
//! ```text
//! [t-110 ........ t-6][t-5 ... t ... t+34]
//!  control (105)        signal (40)
//! ```

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::discrimination::BinaryTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub n_consecutive: usize,
    pub window_total: usize,
    pub control_span: usize,
    pub signal_pre: usize,
    pub signal_post: usize,
    pub dead_time: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            n_consecutive: 4,
            window_total: 145,
            control_span: 105,
            signal_pre: 5,
            signal_post: 35,
            dead_time: 35,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_span + self.signal_pre + self.signal_post != self.window_total {
            return Err(Error::config(format!(
                "control {} + pre {} + post {} != window {}",
                self.control_span, self.signal_pre, self.signal_post, self.window_total
            )));
        }
        if self.n_consecutive < 2 {
            return Err(Error::config("n_consecutive must be >= 2"));
        }
        if self.n_consecutive > self.signal_post {
            return Err(Error::config("trigger run must fit inside the signal window"));
        }
        Ok(())
    }

    /// Samples in the signal window.
    pub fn signal_len(&self) -> usize {
        self.signal_pre + self.signal_post
    }

    /// Offset of the window start before the trigger index.
    pub fn lead(&self) -> usize {
        self.control_span + self.signal_pre
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    LowSignal,
    ControlNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Disposition {
    #[default]
    Pending,
    Accepted,
    Rejected(RejectReason),
}

/// 145-sample window bit-packed little-endian within bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    len: usize,
    packed: Vec<u8>,
}

impl Snapshot {
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut packed = vec![0u8; bits.len().div_ceil(8)];
        for (k, &b) in bits.iter().enumerate() {
            if b != 0 {
                packed[k / 8] |= 1 << (k % 8);
            }
        }
        Self {
            len: bits.len(),
            packed,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, k: usize) -> u8 {
        (self.packed[k / 8] >> (k % 8)) & 1
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len).map(|k| self.bit(k)).collect()
    }

    pub fn zeros_in(&self, range: std::ops::Range<usize>) -> usize {
        range.filter(|&k| self.bit(k) == 0).count()
    }

    pub fn to_base64(&self) -> String {
        B64.encode(&self.packed)
    }

    pub fn from_base64(s: &str, len: usize) -> Result<Self> {
        let packed = B64
            .decode(s)
            .map_err(|e| Error::format(0, format!("bad snapshot encoding: {e}")))?;
        if packed.len() != len.div_ceil(8) {
            return Err(Error::format(0, "snapshot length mismatch"));
        }
        Ok(Self { len, packed })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggeredEvent {
    pub trace: u64,
    /// First index of the qualifying run of zeros.
    pub t: usize,
    pub n_control: usize,
    pub n_signal: usize,
    pub snapshot: Snapshot,
    pub disposition: Disposition,
}

impl TriggeredEvent {
    /// Recounts control and signal zeros from the stored snapshot.
    pub fn recount(&self, cfg: &TriggerConfig) -> (usize, usize) {
        (
            self.snapshot.zeros_in(0..cfg.control_span),
            self.snapshot.zeros_in(cfg.control_span..cfg.window_total),
        )
    }
}

/// Streaming scanner over one binary trace; yields events lazily with
/// O(1) state beyond the trace itself.
pub struct TriggerScanner<'a> {
    bits: &'a [u8],
    trace: u64,
    cfg: TriggerConfig,
    pos: usize,
    /// Earliest index at which a new trigger may fire.
    armed_from: usize,
}

impl<'a> TriggerScanner<'a> {
    pub fn new(bits: &'a [u8], trace: u64, cfg: TriggerConfig) -> Self {
        Self {
            bits,
            trace,
            cfg,
            pos: cfg.lead(),
            armed_from: 0,
        }
    }
}

impl Iterator for TriggerScanner<'_> {
    type Item = TriggeredEvent;

    fn next(&mut self) -> Option<TriggeredEvent> {
        let cfg = &self.cfg;
        let bits = self.bits;
        let n = cfg.n_consecutive;
        // last trigger index with a full signal window
        let last = bits.len().checked_sub(cfg.signal_post)?;
        let mut t = self.pos.max(self.armed_from);
        while t <= last {
            if bits[t] != 0 {
                t += 1;
                continue;
            }
            let run = bits[t..].iter().take(n).take_while(|&&b| b == 0).count();
            if run < n {
                // no index inside this short run can start a full one
                t += run;
                continue;
            }
            let start = t - cfg.lead();
            let window = &bits[start..start + cfg.window_total];
            let snapshot = Snapshot::from_bits(window);
            let n_control = window[..cfg.control_span].iter().filter(|&&b| b == 0).count();
            let n_signal = window[cfg.control_span..].iter().filter(|&&b| b == 0).count();
            self.armed_from = t + cfg.dead_time + 1;
            self.pos = self.armed_from;
            return Some(TriggeredEvent {
                trace: self.trace,
                t,
                n_control,
                n_signal,
                snapshot,
                disposition: Disposition::Pending,
            });
        }
        self.pos = bits.len();
        None
    }
}

/// All triggers of one binary trace, in index order.
pub fn scan_triggers(binary: &BinaryTrace, cfg: &TriggerConfig) -> Result<Vec<TriggeredEvent>> {
    cfg.validate()?;
    Ok(TriggerScanner::new(&binary.bits, binary.trace_index, *cfg).collect())
}

/// JSON-lines representation of a triggered event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub trace: u64,
    pub t: usize,
    pub n_control: usize,
    pub n_signal: usize,
    pub snapshot: String,
    pub disposition: Disposition,
}

impl From<&TriggeredEvent> for EventRecord {
    fn from(ev: &TriggeredEvent) -> Self {
        Self {
            trace: ev.trace,
            t: ev.t,
            n_control: ev.n_control,
            n_signal: ev.n_signal,
            snapshot: ev.snapshot.to_base64(),
            disposition: ev.disposition,
        }
    }
}

impl EventRecord {
    pub fn into_event(self, cfg: &TriggerConfig) -> Result<TriggeredEvent> {
        Ok(TriggeredEvent {
            trace: self.trace,
            t: self.t,
            n_control: self.n_control,
            n_signal: self.n_signal,
            snapshot: Snapshot::from_base64(&self.snapshot, cfg.window_total)?,
            disposition: self.disposition,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(bits: Vec<u8>) -> BinaryTrace {
        BinaryTrace::new(0, bits)
    }

    #[test]
    fn all_ones_never_triggers() {
        let ev = scan_triggers(&trace_of(vec![1; 5000]), &TriggerConfig::default()).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn three_zeros_do_not_trigger_four() {
        let mut bits = vec![1; 1000];
        bits[400..403].fill(0);
        assert!(scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn forty_zero_block() {
        let mut bits = vec![1; 2000];
        bits[500..540].fill(0);
        let ev = scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap();
        // the run outlasts the dead time, so 536..539 fires again
        assert_eq!(ev.iter().map(|e| e.t).collect::<Vec<_>>(), vec![500, 536]);
        let e = &ev[0];
        assert_eq!(e.n_control, 0);
        // signal = [495, 534]: five leading ones, then 35 zeros
        assert_eq!(e.n_signal, 35);
        let snap = e.snapshot.bits();
        assert_eq!(snap.len(), 145);
        assert!(snap[..110].iter().all(|&b| b == 1));
        assert!(snap[110..].iter().all(|&b| b == 0));
    }

    #[test]
    fn edge_triggers_are_skipped() {
        let mut bits = vec![1; 300];
        bits[50..60].fill(0); // no room for the control window
        bits[280..290].fill(0); // no room for the signal window
        assert!(scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn dead_time_blocks_retrigger() {
        let mut bits = vec![1; 1000];
        bits[200..204].fill(0);
        bits[230..234].fill(0); // inside (200, 235]
        bits[236..240].fill(0); // first index after dead time
        let ev = scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap();
        let ts: Vec<usize> = ev.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![200, 236]);
    }

    #[test]
    fn run_straddling_the_lead_fires_at_first_full_index() {
        let mut bits = vec![1; 1000];
        bits[100..120].fill(0);
        let ev = scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap();
        assert_eq!(ev.iter().map(|e| e.t).collect::<Vec<_>>(), vec![110]);
    }

    #[test]
    fn long_run_retriggers_after_dead_time() {
        let mut bits = vec![1; 1000];
        bits[300..380].fill(0);
        let ev = scan_triggers(&trace_of(bits), &TriggerConfig::default()).unwrap();
        assert_eq!(ev.iter().map(|e| e.t).collect::<Vec<_>>(), vec![300, 336, 372]);
    }

    #[test]
    fn three_zero_trigger_supported() {
        let mut bits = vec![1; 1000];
        bits[400..403].fill(0);
        let cfg = TriggerConfig {
            n_consecutive: 3,
            ..TriggerConfig::default()
        };
        assert_eq!(scan_triggers(&trace_of(bits), &cfg).unwrap().len(), 1);
    }

    #[test]
    fn inconsistent_geometry_rejected() {
        let cfg = TriggerConfig {
            control_span: 100,
            ..TriggerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn snapshot_base64_roundtrip() {
        let bits: Vec<u8> = (0..145).map(|k| u8::from(k % 3 == 0)).collect();
        let s = Snapshot::from_bits(&bits);
        let back = Snapshot::from_base64(&s.to_base64(), 145).unwrap();
        assert_eq!(back.bits(), bits);
    }
}
