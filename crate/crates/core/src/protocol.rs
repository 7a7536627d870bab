//! Agent-side transmission scheduling: when in each period an agent hands
//! its update to the MAC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("agent {index} out of range 1..={n}")]
    AgentIndex { index: usize, n: usize },
    #[error("spread window {t_e} must lie in (0, {t_ca}]")]
    SpreadWindow { t_e: SimTime, t_ca: SimTime },
    #[error("at least one agent required")]
    NoAgents,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// One slot of stagger per agent id.
    Baseline,
    /// Submissions spread evenly over the first `t_e` of the period.
    Spread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulingPolicy {
    pub mode: SchedulingMode,
    pub sigma: SimTime,
    pub t_e: SimTime,
    pub t_ca: SimTime,
    pub n: usize,
}

impl SchedulingPolicy {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n == 0 {
            return Err(ProtocolError::NoAgents);
        }
        if self.mode == SchedulingMode::Spread && (self.t_e == SimTime::ZERO || self.t_e > self.t_ca) {
            return Err(ProtocolError::SpreadWindow {
                t_e: self.t_e,
                t_ca: self.t_ca,
            });
        }
        Ok(())
    }

    /// Delay between period start and submission for agent `i`, numbered from 1.
    pub fn artificial_delay(&self, i: usize) -> Result<SimTime, ProtocolError> {
        if i == 0 || i > self.n {
            return Err(ProtocolError::AgentIndex { index: i, n: self.n });
        }
        let rank = (i - 1) as u64;
        Ok(match self.mode {
            SchedulingMode::Baseline => self.sigma.mul(rank),
            SchedulingMode::Spread => SimTime::from_nanos(rank * self.t_e.as_nanos() / self.n as u64),
        })
    }

    /// Submission instants of every agent in period `k`, in agent order.
    pub fn submissions(&self, k: u64, t0: SimTime) -> Result<Vec<SimTime>, ProtocolError> {
        let start = t0 + self.t_ca.mul(k);
        (1..=self.n).map(|i| Ok(start + self.artificial_delay(i)?)).collect()
    }
}

/// End-to-end delay of one update: artificial delay, DCF access delay and
/// airtime. Queueing and receive processing are zero in this model.
pub fn total_delay(t_ad: SimTime, t_dcf: SimTime, t_p: SimTime) -> SimTime {
    t_ad + t_dcf + t_p
}
