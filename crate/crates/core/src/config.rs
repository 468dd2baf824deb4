//! TOML run configuration.
//!
//! Every section is optional and falls back to the module defaults, so a
//! minimal file only needs what differs:
//!
//! ```toml
//! label = "surface-74us"
//! n_cycles = 100_000_000
//! sampling_period_us = 73.6
//!
//! [environment]
//! impact_rate_hz = 0.042
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discrimination::FitOptions;
use crate::error::{Error, Result};
use crate::protocol::{ProtocolConfig, QubitModel, RadiationEnvironment, StreamMode, TRACE_LEN};
use crate::selection::SelectionConfig;
use crate::trigger::TriggerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Analyze,
    #[default]
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminationConfig {
    pub n_states: usize,
    pub bin_scale: f64,
    pub reference_centers: Option<Vec<[f64; 2]>>,
    pub threshold_candidates: usize,
    /// Traces whose f + h population exceeds this are dropped from live time.
    pub max_leak: f64,
}

impl Default for DiscriminationConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            n_states: fit.n_states,
            bin_scale: fit.bin_scale,
            reference_centers: fit.reference_centers,
            threshold_candidates: fit.threshold_candidates,
            max_leak: 0.01,
        }
    }
}

impl DiscriminationConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            n_states: self.n_states,
            bin_scale: self.bin_scale,
            reference_centers: self.reference_centers.clone(),
            threshold_candidates: self.threshold_candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub label: String,
    pub seed: u64,
    /// Cycles to simulate; rounded down to whole traces.
    pub n_cycles: u64,
    pub trace_len: usize,
    pub stream: StreamMode,
    /// Shorthand that sets the cooldown so the cycle lasts this long.
    pub sampling_period_us: Option<f64>,
    pub protocol: ProtocolConfig,
    pub qubit: QubitModel,
    pub environment: RadiationEnvironment,
    pub discrimination: DiscriminationConfig,
    pub trigger: TriggerConfig,
    pub selection: SelectionConfig,
    /// Trace file read in analyze mode.
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Persist raw simulated records (large).
    pub write_traces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pipeline,
            label: "run".into(),
            seed: 0,
            n_cycles: 10 * TRACE_LEN as u64,
            trace_len: TRACE_LEN,
            stream: StreamMode::Binary,
            sampling_period_us: None,
            protocol: ProtocolConfig::default(),
            qubit: QubitModel::default(),
            environment: RadiationEnvironment::default(),
            discrimination: DiscriminationConfig::default(),
            trigger: TriggerConfig::default(),
            selection: SelectionConfig::default(),
            input: None,
            output_dir: PathBuf::from("out"),
            write_traces: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies the sampling-period shorthand and re-validates every section.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(ts) = self.sampling_period_us {
            let p = self.protocol;
            self.protocol = ProtocolConfig::new(
                p.wait_us,
                p.pi_pulse_us,
                p.readout_us,
                ts - p.wait_us - p.pi_pulse_us - p.readout_us,
            )?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.qubit.validate(self.stream)?;
        self.environment.validate()?;
        self.trigger.validate()?;
        self.selection.validate()?;
        if self.trace_len <= self.trigger.window_total {
            return Err(Error::config(format!(
                "trace length {} cannot hold a {}-sample window",
                self.trace_len, self.trigger.window_total
            )));
        }
        if !(2..=4).contains(&self.discrimination.n_states) {
            return Err(Error::config("discrimination.n_states must be 2, 3 or 4"));
        }
        if !(0.0..=1.0).contains(&self.discrimination.max_leak) {
            return Err(Error::config("discrimination.max_leak must be a probability"));
        }
        match self.mode {
            Mode::Analyze => match &self.input {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::config(format!("input {} does not exist", p.display()))),
                None => return Err(Error::config("analyze mode needs an input trace file")),
            },
            Mode::Simulate | Mode::Pipeline => {
                if self.n_traces() == 0 {
                    return Err(Error::config(format!(
                        "n_cycles = {} is less than one trace ({} records)",
                        self.n_cycles, self.trace_len
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_traces(&self) -> u64 {
        self.n_cycles / self.trace_len as u64
    }

    pub fn sampling_period(&self) -> f64 {
        self.protocol.sampling_period_us()
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\nsampling_period_us = 40.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert!((cfg.sampling_period() - 40.0).abs() < 1e-12);
        assert_eq!(cfg.trigger, TriggerConfig::default());
    }

    #[test]
    fn nested_override() {
        let cfg = RunConfig::from_toml_str("[environment]\nimpact_rate_hz = 0.042\n[trigger]\nn_consecutive = 3\n").unwrap();
        assert_eq!(cfg.environment.impact_rate_hz, 0.042);
        assert_eq!(cfg.environment.recovery_time_us, RadiationEnvironment::default().recovery_time_us);
        assert_eq!(cfg.trigger.n_consecutive, 3);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "sampling_period_us = 5000.0",
            "unknown_key = 1",
            "[qubit]\nreset_fidelity = 1.5",
            "mode = \"analyze\"",
            "n_cycles = 10",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
