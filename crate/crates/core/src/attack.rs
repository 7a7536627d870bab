//! Channel adversaries: a Poisson interferer that plays by DCF rules and a
//! reactive jammer that estimates the consensus period and fires on the first
//! frame of each burst.

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngStream, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("interferer rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("jammer correction factor must lie in (0, 1], got {0}")]
    Correction(f64),
    #[error("agent index {index} out of range for {n_agents} agents")]
    AgentIndex { index: usize, n_agents: usize },
    #[error("payload must be at least one byte")]
    Payload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererConfig {
    /// Mean arrivals per second.
    pub lambda: f64,
    #[serde(default = "default_adversary_payload")]
    pub payload_bytes: usize,
}

pub(crate) fn default_adversary_payload() -> usize {
    512
}

impl Default for InterfererConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            payload_bytes: default_adversary_payload(),
        }
    }
}

impl InterfererConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(AttackError::Rate(self.lambda));
        }
        if self.payload_bytes == 0 {
            return Err(AttackError::Payload);
        }
        Ok(())
    }
}

/// I.i.d. exponential inter-arrival gaps, rounded to the nanosecond.
pub struct PoissonArrivals {
    rng: RngStream,
    gap: Exp<f64>,
}

impl PoissonArrivals {
    pub fn new(lambda: f64, rng: RngStream) -> Result<Self, AttackError> {
        let gap = Exp::new(lambda).map_err(|_| AttackError::Rate(lambda))?;
        Ok(Self { rng, gap })
    }

    pub fn next_gap(&mut self) -> SimTime {
        let secs = self.gap.sample(&mut self.rng);
        SimTime::from_nanos(((secs * 1e9).round() as u64).max(1))
    }

    pub fn next_arrival(&mut self, now: SimTime) -> SimTime {
        now + self.next_gap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JammerConfig {
    /// Fraction of the estimated period between a trigger and the next arming.
    pub q: f64,
    /// Zero-based indices of agents within jamming range.
    pub attacked_set: Vec<usize>,
    /// Zero-based indices of agents the jammer can sniff. Defaults to the attacked set.
    pub sniff_set: Option<Vec<usize>>,
    pub payload_bytes: usize,
}

impl Default for JammerConfig {
    fn default() -> Self {
        Self {
            q: 0.8,
            attacked_set: vec![3, 4],
            sniff_set: None,
            payload_bytes: default_adversary_payload(),
        }
    }
}

impl JammerConfig {
    pub fn validate(&self, n_agents: usize) -> Result<(), AttackError> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(AttackError::Correction(self.q));
        }
        if self.payload_bytes == 0 {
            return Err(AttackError::Payload);
        }
        for &index in self.attacked_set.iter().chain(self.sniffed().iter()) {
            if index >= n_agents {
                return Err(AttackError::AgentIndex { index, n_agents });
            }
        }
        Ok(())
    }

    pub fn sniffed(&self) -> &[usize] {
        self.sniff_set.as_deref().unwrap_or(&self.attacked_set)
    }
}

/// What the co-simulation must do after the jammer saw a frame start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct JammerAction {
    /// Transmit a jam frame at this instant.
    pub jam_at: Option<SimTime>,
    /// Cancel any pending arming and arm at this instant instead.
    pub rearm_at: Option<SimTime>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryRecord {
    pub time: SimTime,
    pub action: &'static str,
    /// Estimate in nanoseconds after the action, if defined.
    pub tca_hat_ns: Option<f64>,
}

pub struct JammerState {
    q: f64,
    last_seen: Vec<Option<SimTime>>,
    sample_sum_ns: u128,
    sample_count: u64,
    started: bool,
    armed: bool,
    anchor: Option<SimTime>,
    arm_at: Option<SimTime>,
    jams: u64,
    trace: Option<Vec<AdversaryRecord>>,
}

impl JammerState {
    pub fn new(cfg: &JammerConfig, n_agents: usize) -> Self {
        Self {
            q: cfg.q,
            last_seen: vec![None; n_agents],
            sample_sum_ns: 0,
            sample_count: 0,
            started: false,
            armed: false,
            anchor: None,
            arm_at: None,
            jams: 0,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<AdversaryRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Cumulative mean of all per-agent inter-transmission intervals, in seconds.
    pub fn tca_hat(&self) -> Option<f64> {
        self.tca_hat_ns().map(|ns| ns * 1e-9)
    }

    fn tca_hat_ns(&self) -> Option<f64> {
        (self.sample_count > 0).then(|| self.sample_sum_ns as f64 / self.sample_count as f64)
    }

    pub fn samples(&self) -> u64 {
        self.sample_count
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    pub fn has_started(&self) -> bool {
        self.started
    }

    pub fn jams_sent(&self) -> u64 {
        self.jams
    }

    pub fn pending_arm(&self) -> Option<SimTime> {
        self.arm_at
    }

    fn log(&mut self, time: SimTime, action: &'static str) {
        let tca = self.tca_hat_ns();
        if let Some(t) = self.trace.as_mut() {
            t.push(AdversaryRecord {
                time,
                action,
                tca_hat_ns: tca,
            });
        }
    }

    fn next_arm(&self, now: SimTime) -> Option<SimTime> {
        let anchor = self.anchor?;
        let tca = self.tca_hat_ns()?;
        let at = anchor + SimTime::from_nanos((self.q * tca).round() as u64);
        Some(at.max(now))
    }

    /// The jammer sensed the start of a frame from `agent` at `now`.
    pub fn observe_frame(&mut self, agent: usize, now: SimTime, propagation: SimTime) -> JammerAction {
        let had_estimate = self.sample_count > 0;
        if let Some(prev) = self.last_seen[agent] {
            self.sample_sum_ns += u128::from((now - prev).as_nanos());
            self.sample_count += 1;
        }
        self.last_seen[agent] = Some(now);
        self.log(now, "observe");

        let mut action = JammerAction::default();
        if !self.started {
            self.started = true;
            self.anchor = Some(now);
            self.log(now, "start");
        }
        if self.armed {
            self.armed = false;
            self.jams += 1;
            let at = now + propagation;
            action.jam_at = Some(at);
            self.anchor = Some(now);
            self.log(at, "jam");
        } else if !had_estimate && self.sample_count > 0 {
            // the first estimate anchors the arming clock
            self.anchor = Some(now);
        }
        if !self.armed {
            let next = self.next_arm(now);
            if next != self.arm_at {
                self.arm_at = next;
                action.rearm_at = next;
            }
        }
        action
    }

    /// The arming timer fired.
    pub fn arm(&mut self, now: SimTime) {
        debug_assert_eq!(self.arm_at, Some(now));
        self.arm_at = None;
        self.armed = true;
        self.log(now, "arm");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::streams;

    const PROP: SimTime = SimTime::from_nanos(2_000);

    #[test]
    fn interferer_validation() {
        assert!(InterfererConfig { lambda: 0.0, payload_bytes: 512 }.validate().is_err());
        assert!(InterfererConfig::default().validate().is_ok());
    }

    #[test]
    fn poisson_mean_gap() {
        let mut p = PoissonArrivals::new(100.0, RngStream::new(4, streams::INTERFERER_ARRIVALS)).unwrap();
        let mut t = SimTime::ZERO;
        let mut n = 0u32;
        while t < SimTime::from_secs(3) {
            t = p.next_arrival(t);
            n += 1;
        }
        assert!((240..=360).contains(&n), "{n} arrivals");
    }

    #[test]
    fn single_sample_estimate() {
        let mut j = JammerState::new(&JammerConfig::default(), 6);
        j.observe_frame(0, SimTime::from_millis(10), PROP);
        assert_eq!(j.tca_hat(), None);
        j.observe_frame(0, SimTime::from_millis(35), PROP);
        assert_eq!(j.tca_hat(), Some(0.025));
    }

    #[test]
    fn mean_of_samples() {
        let mut j = JammerState::new(&JammerConfig::default(), 6);
        let us = SimTime::from_micros;
        for t in [0, 24_800, 49_900, 75_000] {
            j.observe_frame(1, us(t), PROP);
        }
        assert!((j.tca_hat().unwrap() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn arms_at_q_fraction_and_fires_once() {
        let mut j = JammerState::new(&JammerConfig::default(), 6);
        let ms = SimTime::from_millis;
        assert_eq!(j.observe_frame(3, ms(0), PROP), JammerAction::default());
        let a = j.observe_frame(3, ms(25), PROP);
        assert_eq!(a.jam_at, None);
        assert_eq!(a.rearm_at, Some(ms(45)));
        // an unarmed jammer ignores frames
        let a = j.observe_frame(4, ms(26), PROP);
        assert_eq!(a.jam_at, None);
        j.arm(ms(45));
        let a = j.observe_frame(3, ms(50), PROP);
        assert_eq!(a.jam_at, Some(ms(50) + PROP));
        assert!(!j.is_armed());
        // next arming from the trigger; the estimate is still 25 ms
        assert_eq!(a.rearm_at, Some(ms(70)));
        let a = j.observe_frame(4, ms(50) + SimTime::from_micros(40), PROP);
        assert_eq!(a.jam_at, None);
        assert_eq!(j.jams_sent(), 1);
    }

    #[test]
    fn trace_records_actions() {
        let mut j = JammerState::new(&JammerConfig::default(), 6);
        j.enable_trace();
        j.observe_frame(3, SimTime::ZERO, PROP);
        let tr = j.take_trace();
        assert_eq!(tr.iter().map(|r| r.action).collect::<Vec<_>>(), vec!["observe", "start"]);
    }

    #[test]
    fn jammer_config_validation() {
        let cfg = JammerConfig {
            attacked_set: vec![6],
            ..JammerConfig::default()
        };
        assert!(matches!(cfg.validate(6), Err(AttackError::AgentIndex { index: 6, .. })));
        let cfg = JammerConfig {
            q: 1.5,
            ..JammerConfig::default()
        };
        assert!(cfg.validate(6).is_err());
    }
}
