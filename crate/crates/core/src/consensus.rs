//! Distributed averaging of the DG output current and bus voltage.
//!
//! Every period each agent refreshes its state with the change in its local
//! measurement, broadcasts it, and at the deadline applies
//!
//! ```text
//! x_i <- x_i + ε Σ_{j ∈ N_i} (x_j - x_i)
//! ```
//!
//! only if a payload from *every* neighbour arrived. Otherwise all received
//! payloads are discarded and the agent falls back to the output of its last
//! successful step.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A consensus state or a local measurement: `(ī_L, v̄_DC)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub current: f64,
    pub voltage: f64,
}

impl Estimate {
    pub const fn new(current: f64, voltage: f64) -> Self {
        Self { current, voltage }
    }

    pub fn is_finite(&self) -> bool {
        self.current.is_finite() && self.voltage.is_finite()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.current.abs().max(self.voltage.abs())
    }
}

impl Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate::new(self.current + rhs.current, self.voltage + rhs.voltage)
    }
}

impl AddAssign for Estimate {
    fn add_assign(&mut self, rhs: Estimate) {
        self.current += rhs.current;
        self.voltage += rhs.voltage;
    }
}

impl Sub for Estimate {
    type Output = Estimate;
    fn sub(self, rhs: Estimate) -> Estimate {
        Estimate::new(self.current - rhs.current, self.voltage - rhs.voltage)
    }
}

impl Mul<f64> for Estimate {
    type Output = Estimate;
    fn mul(self, k: f64) -> Estimate {
        Estimate::new(self.current * k, self.voltage * k)
    }
}

/// Serialized size of an update on the air.
pub const PAYLOAD_BYTES: usize = 10;

/// One agent's broadcast for one period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdatePayload {
    pub sender: usize,
    /// Incremental packet id, one per generated update.
    pub seq: u16,
    /// Period the update belongs to. Not on the wire; receivers recover it
    /// from the sequence number.
    pub period: u64,
    pub x: Estimate,
}

impl UpdatePayload {
    /// Wire layout: `seq: u16 | current: f32 | voltage: f32`, little endian.
    /// The sender travels in the MAC header.
    pub fn encode(&self) -> [u8; PAYLOAD_BYTES] {
        let mut out = [0u8; PAYLOAD_BYTES];
        out[0..2].copy_from_slice(&self.seq.to_le_bytes());
        out[2..6].copy_from_slice(&(self.x.current as f32).to_le_bytes());
        out[6..10].copy_from_slice(&(self.x.voltage as f32).to_le_bytes());
        out
    }

    pub fn decode(sender: usize, bytes: &[u8; PAYLOAD_BYTES]) -> Self {
        let seq = u16::from_le_bytes([bytes[0], bytes[1]]);
        let current = f32::from_le_bytes(bytes[2..6].try_into().expect("4 bytes"));
        let voltage = f32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        Self {
            sender,
            seq,
            period: u64::from(seq),
            x: Estimate::new(f64::from(current), f64::from(voltage)),
        }
    }
}

/// How fresh local measurements enter the consensus state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// `x += m(k) - m(k-1)` every period, whatever happened at the last deadline.
    #[default]
    PerPeriod,
    /// Like `PerPeriod`, but a failed step also rolls the measurement baseline
    /// back to the one paired with the memory, so the increments measured
    /// during a run of failed steps are re-applied at the next refresh.
    MemoryAnchored,
}

/// What happened to an incoming payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reception {
    Accepted,
    /// Belongs to a period whose deadline already passed.
    Late,
    NotNeighbor,
    Duplicate,
    /// Arrived before this agent opened the payload's period.
    Early,
}

#[derive(Clone, Debug)]
pub struct AgentState {
    index: usize,
    neighbors: Vec<usize>,
    epsilon: f64,
    injection: Injection,
    x: Estimate,
    memory: Estimate,
    memory_measurement: Estimate,
    last_measurement: Option<Estimate>,
    output: Estimate,
    received: BTreeMap<usize, Estimate>,
    open_period: Option<u64>,
    next_seq: u16,
}

impl AgentState {
    pub fn new(index: usize, neighbors: Vec<usize>, epsilon: f64, injection: Injection) -> Self {
        assert!(!neighbors.contains(&index), "an agent is not its own neighbour");
        Self {
            index,
            neighbors,
            epsilon,
            injection,
            x: Estimate::default(),
            memory: Estimate::default(),
            memory_measurement: Estimate::default(),
            last_measurement: None,
            output: Estimate::default(),
            received: BTreeMap::new(),
            open_period: None,
            next_seq: 0,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn x(&self) -> Estimate {
        self.x
    }

    pub fn memory(&self) -> Estimate {
        self.memory
    }

    /// The estimate the secondary controller uses: the result of the latest
    /// deadline, or the first measurement before any deadline.
    pub fn output(&self) -> Estimate {
        self.output
    }

    pub fn is_active(&self) -> bool {
        self.last_measurement.is_some()
    }

    pub fn received_count(&self) -> usize {
        self.received.len()
    }

    /// Refreshes the state with the new measurement and produces this
    /// period's broadcast. Must be called once per period, at its start.
    pub fn generate_update(&mut self, measurement: Estimate, k: u64) -> UpdatePayload {
        match self.last_measurement {
            None => {
                self.x = measurement;
                self.memory = measurement;
                self.memory_measurement = measurement;
                self.output = measurement;
            }
            Some(last) => self.x += measurement - last,
        }
        self.last_measurement = Some(measurement);
        self.received.clear();
        self.open_period = Some(k);
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        UpdatePayload {
            sender: self.index,
            seq,
            period: k,
            x: self.x,
        }
    }

    pub fn receive(&mut self, payload: &UpdatePayload) -> Reception {
        if !self.neighbors.contains(&payload.sender) {
            return Reception::NotNeighbor;
        }
        match self.open_period {
            Some(k) if payload.period == k => {}
            Some(k) if payload.period < k => return Reception::Late,
            None => return Reception::Late,
            Some(_) => return Reception::Early,
        }
        if self.received.contains_key(&payload.sender) {
            return Reception::Duplicate;
        }
        self.received.insert(payload.sender, payload.x);
        Reception::Accepted
    }

    /// Deadline of period `k`. Returns `true` when the step faulted.
    pub fn consensus_step(&mut self, k: u64) -> bool {
        debug_assert_eq!(self.open_period, Some(k), "deadline for a period that is not open");
        let complete = self.neighbors.iter().all(|j| self.received.contains_key(j));
        let faulted = if complete {
            let mut pull = Estimate::default();
            for j in &self.neighbors {
                pull += self.received[j] - self.x;
            }
            self.x += pull * self.epsilon;
            self.memory = self.x;
            self.memory_measurement = self.last_measurement.unwrap_or_default();
            false
        } else {
            self.x = self.memory;
            if self.injection == Injection::MemoryAnchored {
                self.last_measurement = Some(self.memory_measurement);
            }
            true
        };
        self.output = self.x;
        self.received.clear();
        self.open_period = None;
        faulted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    None,
    Coordinated,
    Uncoordinated,
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultClass::None => "none",
            FaultClass::Coordinated => "coordinated",
            FaultClass::Uncoordinated => "uncoordinated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultRecord {
    pub period: u64,
    pub faulted: Vec<bool>,
    pub classification: FaultClass,
}

pub fn classify_faults(period: u64, faulted: &[bool]) -> FaultRecord {
    let count = faulted.iter().filter(|&&f| f).count();
    let classification = if count == 0 {
        FaultClass::None
    } else if count == faulted.len() {
        FaultClass::Coordinated
    } else {
        FaultClass::Uncoordinated
    };
    FaultRecord {
        period,
        faulted: faulted.to_vec(),
        classification,
    }
}

/// All agents of the microgrid.
#[derive(Clone, Debug)]
pub struct ConsensusLayer {
    agents: Vec<AgentState>,
}

impl ConsensusLayer {
    pub fn full_mesh(n: usize, epsilon: f64, injection: Injection) -> Self {
        let agents = (0..n)
            .map(|i| AgentState::new(i, (0..n).filter(|&j| j != i).collect(), epsilon, injection))
            .collect();
        Self { agents }
    }

    pub fn from_neighbors(neighbors: Vec<Vec<usize>>, epsilon: f64, injection: Injection) -> Self {
        let agents = neighbors
            .into_iter()
            .enumerate()
            .map(|(i, nb)| AgentState::new(i, nb, epsilon, injection))
            .collect();
        Self { agents }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agent(&self, i: usize) -> &AgentState {
        &self.agents[i]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut AgentState {
        &mut self.agents[i]
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn outputs(&self) -> Vec<Estimate> {
        self.agents.iter().map(AgentState::output).collect()
    }

    pub fn states(&self) -> Vec<Estimate> {
        self.agents.iter().map(AgentState::x).collect()
    }

    pub fn generate_all(&mut self, measurements: &[Estimate], k: u64) -> Vec<UpdatePayload> {
        self.agents
            .iter_mut()
            .zip(measurements)
            .map(|(a, m)| a.generate_update(*m, k))
            .collect()
    }

    pub fn step_all(&mut self, k: u64) -> FaultRecord {
        let flags: Vec<bool> = self.agents.iter_mut().map(|a| a.consensus_step(k)).collect();
        classify_faults(k, &flags)
    }

    /// Largest pairwise gap between agent states, per component.
    pub fn disagreement(&self) -> Estimate {
        let (mut lo, mut hi) = (
            Estimate::new(f64::INFINITY, f64::INFINITY),
            Estimate::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for a in &self.agents {
            let x = a.output();
            lo = Estimate::new(lo.current.min(x.current), lo.voltage.min(x.voltage));
            hi = Estimate::new(hi.current.max(x.current), hi.voltage.max(x.voltage));
        }
        hi - lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless_round(layer: &mut ConsensusLayer, measurements: &[Estimate], k: u64) -> FaultRecord {
        let payloads = layer.generate_all(measurements, k);
        for p in &payloads {
            for i in 0..layer.len() {
                if i != p.sender {
                    assert_eq!(layer.agent_mut(i).receive(p), Reception::Accepted);
                }
            }
        }
        layer.step_all(k)
    }

    #[test]
    fn fixed_point_when_all_equal() {
        let mut layer = ConsensusLayer::full_mesh(6, 0.025, Injection::PerPeriod);
        let m = [Estimate::new(2.0, 47.5); 6];
        for k in 0..5 {
            let rec = lossless_round(&mut layer, &m, k);
            assert_eq!(rec.classification, FaultClass::None);
        }
        assert!(layer.outputs().iter().all(|x| *x == Estimate::new(2.0, 47.5)));
    }

    #[test]
    fn two_agent_hand_value() {
        let mut layer = ConsensusLayer::full_mesh(2, 0.025, Injection::PerPeriod);
        lossless_round(&mut layer, &[Estimate::new(0.0, 0.0), Estimate::new(1.0, 1.0)], 0);
        assert!((layer.agent(0).output().current - 0.025).abs() < 1e-15);
        assert!((layer.agent(1).output().current - 0.975).abs() < 1e-15);
    }

    #[test]
    fn first_update_is_the_measurement() {
        let mut a = AgentState::new(0, vec![1], 0.025, Injection::PerPeriod);
        let p = a.generate_update(Estimate::new(1.5, 47.0), 0);
        assert_eq!(p.x, Estimate::new(1.5, 47.0));
        assert_eq!(a.output(), Estimate::new(1.5, 47.0));
        assert_eq!(p.seq, 0);
    }

    #[test]
    fn measurement_jump_is_injected() {
        let mut a = AgentState::new(0, vec![1], 0.025, Injection::PerPeriod);
        a.generate_update(Estimate::new(1.5, 47.0), 0);
        a.consensus_step(0);
        let p = a.generate_update(Estimate::new(2.5, 47.0), 1);
        assert_eq!(p.x.current - 1.5, 1.0);
        assert_eq!(p.x.voltage, 47.0);
        assert_eq!(p.seq, 1);
    }

    #[test]
    fn missing_neighbor_holds_memory() {
        let mut layer = ConsensusLayer::full_mesh(3, 0.025, Injection::PerPeriod);
        let m = [Estimate::new(1.0, 47.0), Estimate::new(2.0, 48.0), Estimate::new(3.0, 49.0)];
        lossless_round(&mut layer, &m, 0);
        let payloads = layer.generate_all(&m, 1);
        // agent 2 misses agent 0's payload
        for p in &payloads {
            for i in 0..3 {
                if i != p.sender && !(i == 2 && p.sender == 0) {
                    layer.agent_mut(i).receive(p);
                }
            }
        }
        let memory = layer.agent(2).memory();
        let rec = layer.step_all(1);
        assert_eq!(rec.faulted, vec![false, false, true]);
        assert_eq!(rec.classification, FaultClass::Uncoordinated);
        assert_eq!(layer.agent(2).output().current.to_bits(), memory.current.to_bits());
        assert_eq!(layer.agent(2).output().voltage.to_bits(), memory.voltage.to_bits());
    }

    #[test]
    fn late_and_foreign_payloads() {
        let mut a = AgentState::new(0, vec![1], 0.025, Injection::PerPeriod);
        a.generate_update(Estimate::default(), 0);
        a.consensus_step(0);
        a.generate_update(Estimate::default(), 1);
        let stale = UpdatePayload { sender: 1, seq: 0, period: 0, x: Estimate::default() };
        assert_eq!(a.receive(&stale), Reception::Late);
        let foreign = UpdatePayload { sender: 7, seq: 1, period: 1, x: Estimate::default() };
        assert_eq!(a.receive(&foreign), Reception::NotNeighbor);
        let ok = UpdatePayload { sender: 1, seq: 1, period: 1, x: Estimate::default() };
        assert_eq!(a.receive(&ok), Reception::Accepted);
        assert_eq!(a.receive(&ok), Reception::Duplicate);
    }

    #[test]
    fn classification() {
        assert_eq!(classify_faults(0, &[false; 6]).classification, FaultClass::None);
        assert_eq!(classify_faults(0, &[true; 6]).classification, FaultClass::Coordinated);
        let flags = [false, false, false, true, true, false];
        assert_eq!(classify_faults(0, &flags).classification, FaultClass::Uncoordinated);
    }

    #[test]
    fn wire_format_is_ten_bytes() {
        let p = UpdatePayload { sender: 3, seq: 513, period: 513, x: Estimate::new(1.75, 48.0) };
        let bytes = p.encode();
        assert_eq!(bytes.len(), PAYLOAD_BYTES);
        let back = UpdatePayload::decode(3, &bytes);
        assert_eq!(back, p);
    }

    #[test]
    fn memory_anchored_reapplies_lost_increments() {
        let run = |injection| {
            let mut a = AgentState::new(0, vec![1], 0.025, injection);
            a.generate_update(Estimate::new(1.0, 47.0), 0);
            a.consensus_step(0); // faults: nothing received
            a.generate_update(Estimate::new(1.0, 47.5), 1);
            a.consensus_step(1);
            a.generate_update(Estimate::new(1.0, 47.5), 2).x
        };
        assert_eq!(run(Injection::PerPeriod).voltage, 47.0);
        assert_eq!(run(Injection::MemoryAnchored).voltage, 47.5);
    }
}
