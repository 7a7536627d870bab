//! Scenario configuration: a sectioned TOML document, validated in full
//! before any run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{InterfererConfig, JammerConfig};
use crate::consensus::Injection;
use crate::engine::SimTime;
use crate::mac::MacParams;
use crate::powergrid::{GridTopology, LoadProfile, PrimaryParams, SecondaryParams};
use crate::protocol::{SchedulingMode, SchedulingPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("[{section}] {key}: {reason}")]
    Invalid {
        section: &'static str,
        key: &'static str,
        reason: String,
    },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

fn invalid(section: &'static str, key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        section,
        key,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// Units on a ring, each also tied to one central load node.
    RingCentralLoad,
    SingleUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub topology: TopologyKind,
    pub n_units: usize,
    /// Ohms per link.
    pub line_resistance: f64,
    /// Ohms.
    pub load_resistance: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            topology: TopologyKind::RingCentralLoad,
            n_units: 6,
            line_resistance: 0.1,
            load_resistance: 4.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSection {
    pub epsilon: f64,
    pub t_ca_ms: f64,
    pub t_u_ms: f64,
    pub injection: Injection,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        Self {
            epsilon: 0.025,
            t_ca_ms: 25.0,
            t_u_ms: 25.0,
            injection: Injection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacSection {
    pub slot_us: f64,
    pub difs_us: f64,
    pub data_rate_bps: u64,
    pub phy_us: f64,
    pub mac_header_bits: u64,
    pub cw: u32,
    pub propagation_us: f64,
}

impl Default for MacSection {
    fn default() -> Self {
        Self {
            slot_us: 20.0,
            difs_us: 32.0,
            data_rate_bps: 1_000_000,
            phy_us: 96.0,
            mac_header_bits: 272,
            cw: 32,
            propagation_us: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub mode: SchedulingMode,
    pub t_e_ms: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            mode: SchedulingMode::Baseline,
            t_e_ms: 12.0,
        }
    }
}

/// Agents are numbered from 1 in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JammerSection {
    pub q: f64,
    pub attacked_agents: Vec<usize>,
    /// Agents the jammer can sniff; empty means the attacked agents.
    pub sniffed_agents: Vec<usize>,
    pub payload_bytes: usize,
}

impl Default for JammerSection {
    fn default() -> Self {
        let d = JammerConfig::default();
        Self {
            q: d.q,
            attacked_agents: d.attacked_set.iter().map(|i| i + 1).collect(),
            sniffed_agents: Vec::new(),
            payload_bytes: d.payload_bytes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    pub at_s: f64,
    pub resistance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimelineSection {
    pub activation_s: f64,
    pub run_length_s: f64,
    pub plant_step_us: f64,
    /// Fraction of the run, at its end, averaged for the steady state.
    pub steady_window: f64,
    /// Convergence band, relative to the final value.
    pub convergence_band: f64,
    pub load_steps: Vec<LoadStep>,
}

impl Default for TimelineSection {
    fn default() -> Self {
        Self {
            activation_s: 1.0,
            run_length_s: 3.0,
            plant_step_us: 100.0,
            steady_window: 0.1,
            convergence_band: 0.005,
            load_steps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub base: u64,
    pub replicas: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self { base: 1, replicas: 100 }
    }
}

/// The document as written. Every section is optional and falls back to
/// the reference values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub grid: GridSection,
    pub primary: PrimaryParams,
    pub secondary: SecondaryParams,
    pub consensus: ConsensusSection,
    pub mac: MacSection,
    pub protocol: ProtocolSection,
    pub interferer: Option<InterfererConfig>,
    pub jammer: Option<JammerSection>,
    pub timeline: TimelineSection,
    pub seeds: SeedsSection,
}

/// A validated scenario with times in simulation units.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub file: ScenarioFile,
    pub n_units: usize,
    pub mac: MacParams,
    pub policy: SchedulingPolicy,
    pub t_ca: SimTime,
    pub t_u: SimTime,
    pub activation: SimTime,
    pub run_length: SimTime,
    pub plant_step: SimTime,
    pub interferer: Option<InterfererConfig>,
    pub jammer: Option<JammerConfig>,
}

fn time_from(section: &'static str, key: &'static str, value: f64, scale: f64) -> Result<SimTime, ConfigError> {
    SimTime::from_secs_f64(value * scale)
        .filter(|t| *t > SimTime::ZERO)
        .ok_or_else(|| invalid(section, key, format!("must be a positive duration, got {value}")))
}

fn positive(section: &'static str, key: &'static str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(section, key, format!("must be positive and finite, got {value}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ScenarioFile = toml::from_str(text)?;
        Self::validate(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(file: ScenarioFile) -> Result<Self, ConfigError> {
        let g = &file.grid;
        let n_units = match g.topology {
            TopologyKind::SingleUnit => 1,
            TopologyKind::RingCentralLoad => g.n_units,
        };
        if n_units == 0 {
            return Err(invalid("grid", "n_units", "at least one unit required"));
        }
        positive("grid", "line_resistance", g.line_resistance)?;
        positive("grid", "load_resistance", g.load_resistance)?;
        file.primary
            .validate()
            .map_err(|e| invalid("primary", "-", e.to_string()))?;
        file.secondary
            .validate()
            .map_err(|e| invalid("secondary", "-", e.to_string()))?;

        let c = &file.consensus;
        if !(c.epsilon.is_finite() && c.epsilon > 0.0) {
            return Err(invalid("consensus", "epsilon", format!("must be positive, got {}", c.epsilon)));
        }
        if n_units > 1 && c.epsilon * (n_units - 1) as f64 >= 1.0 {
            return Err(invalid(
                "consensus",
                "epsilon",
                format!("must be below 1/(N-1) = {} for a full mesh", 1.0 / (n_units - 1) as f64),
            ));
        }
        let t_ca = time_from("consensus", "t_ca_ms", c.t_ca_ms, 1e-3)?;
        let t_u = time_from("consensus", "t_u_ms", c.t_u_ms, 1e-3)?;
        if t_u > t_ca {
            return Err(invalid("consensus", "t_u_ms", "exchange window cannot exceed the period"));
        }

        let m = &file.mac;
        let mac = MacParams {
            slot: time_from("mac", "slot_us", m.slot_us, 1e-6)?,
            difs: time_from("mac", "difs_us", m.difs_us, 1e-6)?,
            data_rate_bps: m.data_rate_bps,
            phy_duration: time_from("mac", "phy_us", m.phy_us, 1e-6)?,
            mac_header_bits: m.mac_header_bits,
            cw: m.cw,
            propagation: time_from("mac", "propagation_us", m.propagation_us, 1e-6)?,
        };
        mac.validate().map_err(|e| invalid("mac", "-", e.to_string()))?;

        let policy = SchedulingPolicy {
            mode: file.protocol.mode,
            sigma: mac.slot,
            t_e: time_from("protocol", "t_e_ms", file.protocol.t_e_ms, 1e-3)?,
            t_ca,
            n: n_units,
        };
        policy
            .validate()
            .map_err(|e| invalid("protocol", "t_e_ms", e.to_string()))?;

        if let Some(ui) = &file.interferer {
            ui.validate().map_err(|e| invalid("interferer", "-", e.to_string()))?;
        }
        let jammer = match &file.jammer {
            None => None,
            Some(j) => {
                let to_index = |key: &'static str, agents: &[usize]| -> Result<Vec<usize>, ConfigError> {
                    agents
                        .iter()
                        .map(|&a| {
                            if a == 0 || a > n_units {
                                Err(invalid("jammer", key, format!("agent {a} outside 1..={n_units}")))
                            } else {
                                Ok(a - 1)
                            }
                        })
                        .collect()
                };
                let attacked_set = to_index("attacked_agents", &j.attacked_agents)?;
                let sniffed = to_index("sniffed_agents", &j.sniffed_agents)?;
                let cfg = JammerConfig {
                    q: j.q,
                    attacked_set,
                    sniff_set: (!sniffed.is_empty()).then_some(sniffed),
                    payload_bytes: j.payload_bytes,
                };
                cfg.validate(n_units).map_err(|e| invalid("jammer", "-", e.to_string()))?;
                Some(cfg)
            }
        };

        let tl = &file.timeline;
        let activation = SimTime::from_secs_f64(tl.activation_s)
            .ok_or_else(|| invalid("timeline", "activation_s", "must be a non-negative time"))?;
        let run_length = time_from("timeline", "run_length_s", tl.run_length_s, 1.0)?;
        if activation >= run_length {
            return Err(invalid("timeline", "activation_s", "must precede the end of the run"));
        }
        let plant_step = time_from("timeline", "plant_step_us", tl.plant_step_us, 1e-6)?;
        if !(tl.steady_window > 0.0 && tl.steady_window <= 1.0) {
            return Err(invalid("timeline", "steady_window", "must lie in (0, 1]"));
        }
        positive("timeline", "convergence_band", tl.convergence_band)?;
        for s in &tl.load_steps {
            positive("timeline", "load_steps.resistance", s.resistance)?;
            if !(s.at_s.is_finite() && s.at_s >= 0.0) {
                return Err(invalid("timeline", "load_steps.at_s", "must be a non-negative time"));
            }
        }
        if file.seeds.replicas == 0 {
            return Err(invalid("seeds", "replicas", "at least one replica required"));
        }

        Ok(Self {
            name: file.name.clone().unwrap_or_else(|| "custom".to_string()),
            n_units,
            mac,
            policy,
            t_ca,
            t_u,
            activation,
            run_length,
            plant_step,
            interferer: file.interferer.clone(),
            jammer,
            file,
        })
    }

    pub fn topology(&self) -> GridTopology {
        match self.file.grid.topology {
            TopologyKind::SingleUnit => GridTopology::single_unit(),
            TopologyKind::RingCentralLoad => GridTopology::ring_with_central_load(self.n_units, self.file.grid.line_resistance)
                .expect("validated topology"),
        }
    }

    pub fn load_profile(&self) -> LoadProfile {
        let g0 = 1.0 / self.file.grid.load_resistance;
        let steps = self
            .file
            .timeline
            .load_steps
            .iter()
            .map(|s| (SimTime::from_secs_f64(s.at_s).expect("validated"), 1.0 / s.resistance))
            .collect();
        LoadProfile::with_steps(g0, steps).expect("validated load steps")
    }

    pub fn seeds(&self) -> std::ops::Range<u64> {
        let s = &self.file.seeds;
        s.base..s.base + s.replicas
    }

    pub fn with_seeds(mut self, base: u64, replicas: u64) -> Self {
        self.file.seeds = SeedsSection { base, replicas };
        self
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario serializes")
    }
}
