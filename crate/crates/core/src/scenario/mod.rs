//! Experiment orchestration: configuration, single runs, seeded batches and
//! batch comparison.

mod batch;
mod compare;
mod config;
mod metrics;
mod sim;

pub use batch::{run_batch, wilson_interval, BatchResult, Envelope, Exceedance, BANDS};
pub use compare::{compare, BandComparison, BatchSummary, CompareError, Comparison};
pub use config::{
    ConfigError, ConsensusSection, GridSection, JammerSection, LoadStep, MacSection, ProtocolSection, ScenarioConfig,
    ScenarioFile, SeedsSection, TimelineSection, TopologyKind,
};
pub use metrics::{
    convergence_time, RunMetrics, AGREEMENT_CURRENT_TOLERANCE, AGREEMENT_VOLTAGE_TOLERANCE, VALIDITY_TOLERANCE,
};
pub use sim::{run_once, ChannelStats, Ev, RunFailure, RunOptions, RunOutput, RunTraces, SimError, UI_ADDRESS};

/// Shipped scenarios: name, description, document.
pub const PRESETS: [(&str, &str, &str); 4] = [
    ("clean", "no interferer, no jammer", include_str!("../../presets/clean.toml")),
    (
        "paper_baseline",
        "Poisson interferer sharing the channel, no jammer",
        include_str!("../../presets/paper_baseline.toml"),
    ),
    (
        "jammed_baseline",
        "interferer plus reactive jammer on agents 4 and 5, slot-staggered submissions",
        include_str!("../../presets/jammed_baseline.toml"),
    ),
    (
        "jammed_spread",
        "as jammed_baseline with submissions spread over 12 ms",
        include_str!("../../presets/jammed_spread.toml"),
    ),
];

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let (_, _, text) = PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    ScenarioConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_carry_their_name() {
        for (name, _, _) in PRESETS {
            assert_eq!(preset(name).unwrap().name, name);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn paper_baseline_has_interferer_only() {
        let cfg = preset("paper_baseline").unwrap();
        assert!(cfg.interferer.is_some() && cfg.jammer.is_none());
        assert_eq!(cfg.file.consensus.epsilon, 0.025);
        assert_eq!(cfg.file.secondary.k_isv, 2.0);
    }
}
