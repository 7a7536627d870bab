//! Per-run metrics: steady-state voltage error, convergence and the three
//! consensus properties (termination, validity, agreement).

use std::fmt::Write as _;

use crate::consensus::{ConsensusLayer, FaultClass, FaultRecord};
use crate::engine::SimTime;
use crate::powergrid::PlantState;

use super::config::ScenarioConfig;
use super::sim::ChannelStats;

/// Validity: every agent's voltage estimate within this fraction of `V_r`.
pub const VALIDITY_TOLERANCE: f64 = 0.005;
/// Agreement: voltage estimates within this fraction of `V_r` of each other.
pub const AGREEMENT_VOLTAGE_TOLERANCE: f64 = 0.005;
/// Agreement: current estimates within this fraction of their mean.
pub const AGREEMENT_CURRENT_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    /// Steady-state bus voltage per unit.
    pub steady_state_voltage: Vec<f64>,
    /// Mean of the per-unit steady-state voltages.
    pub mean_voltage: f64,
    pub abs_error_pct: f64,
    /// (max − min) / mean of the steady-state unit currents, in percent.
    pub current_sharing_pct: f64,
    /// Absolute time after which every unit stays inside the convergence band.
    pub convergence_time: Option<f64>,
    /// P1: settled before the steady-state window opens.
    pub converged: bool,
    /// Largest |voltage estimate − V_r| over agents.
    pub validity_error: f64,
    pub agreement_voltage: f64,
    pub agreement_current: f64,
    pub p2_validity: bool,
    pub p3_agreement: bool,
    pub periods: u64,
    pub faults_coordinated: u64,
    pub faults_uncoordinated: u64,
    pub late_updates: u64,
    pub dropped_updates: u64,
    pub lost_to_jam: u64,
    pub agent_collisions: u64,
    pub jams: u64,
    pub tca_hat: Option<f64>,
}

impl RunMetrics {
    pub fn properties_hold(&self) -> bool {
        self.converged && self.p2_validity && self.p3_agreement
    }

    pub fn csv_header() -> &'static str {
        "seed,mean_voltage,abs_error_pct,v_min,v_max,current_sharing_pct,converged,convergence_time_s,\
validity_error,p2,agreement_voltage,agreement_current,p3,periods,faults_coordinated,faults_uncoordinated,\
late_updates,dropped_updates,lost_to_jam,agent_collisions,jams,tca_hat_ms"
    }

    pub fn csv_row(&self) -> String {
        let vmin = self.steady_state_voltage.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = self.steady_state_voltage.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.mean_voltage,
            self.abs_error_pct,
            vmin,
            vmax,
            self.current_sharing_pct,
            u8::from(self.converged),
            self.convergence_time.map(|t| format!("{t:.4}")).unwrap_or_default(),
            self.validity_error,
            u8::from(self.p2_validity),
            self.agreement_voltage,
            self.agreement_current,
            u8::from(self.p3_agreement),
            self.periods,
            self.faults_coordinated,
            self.faults_uncoordinated,
            self.late_updates,
            self.dropped_updates,
            self.lost_to_jam,
            self.agent_collisions,
            self.jams,
            self.tca_hat.map(|t| format!("{:.6}", t * 1e3)).unwrap_or_default(),
        );
        s
    }
}

/// Accumulates plant and consensus observations during a run.
pub(crate) struct MetricsRecorder {
    seed: u64,
    n: usize,
    v_ref: f64,
    activation: SimTime,
    window_start: SimTime,
    band: f64,
    window_v: Vec<f64>,
    window_i: Vec<f64>,
    window_samples: u64,
    times: Vec<SimTime>,
    trajectory: Vec<f64>,
    periods: u64,
    coordinated: u64,
    uncoordinated: u64,
}

impl MetricsRecorder {
    pub(crate) fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let len = cfg.run_length.as_nanos() as f64;
        let window = SimTime::from_nanos((len * cfg.file.timeline.steady_window).round() as u64);
        Self {
            seed,
            n: cfg.n_units,
            v_ref: cfg.file.secondary.v_ref,
            activation: cfg.activation,
            window_start: cfg.run_length.saturating_sub(window),
            band: cfg.file.timeline.convergence_band,
            window_v: vec![0.0; cfg.n_units],
            window_i: vec![0.0; cfg.n_units],
            window_samples: 0,
            times: Vec::new(),
            trajectory: Vec::new(),
            periods: 0,
            coordinated: 0,
            uncoordinated: 0,
        }
    }

    pub(crate) fn record_plant(&mut self, now: SimTime, state: &PlantState) {
        if now > self.window_start {
            for u in 0..self.n {
                self.window_v[u] += state.v_dc[u];
                self.window_i[u] += state.i_l[u];
            }
            self.window_samples += 1;
        }
        if now >= self.activation {
            self.times.push(now);
            self.trajectory.extend_from_slice(&state.v_dc);
        }
    }

    pub(crate) fn record_faults(&mut self, record: &FaultRecord) {
        self.periods += 1;
        match record.classification {
            FaultClass::None => {}
            FaultClass::Coordinated => self.coordinated += 1,
            FaultClass::Uncoordinated => self.uncoordinated += 1,
        }
    }

    pub(crate) fn finish(self, consensus: &ConsensusLayer, stats: &ChannelStats, tca_hat: Option<f64>, jams: u64) -> RunMetrics {
        let samples = self.window_samples.max(1) as f64;
        let v: Vec<f64> = self.window_v.iter().map(|s| s / samples).collect();
        let i: Vec<f64> = self.window_i.iter().map(|s| s / samples).collect();
        let mean_voltage = v.iter().sum::<f64>() / self.n as f64;
        let abs_error_pct = (mean_voltage - self.v_ref).abs() / self.v_ref * 100.0;
        let i_mean = i.iter().sum::<f64>() / self.n as f64;
        let i_spread = i.iter().copied().fold(f64::NEG_INFINITY, f64::max) - i.iter().copied().fold(f64::INFINITY, f64::min);
        let current_sharing_pct = if i_mean.abs() > 0.0 { i_spread / i_mean.abs() * 100.0 } else { 0.0 };

        let convergence_time = convergence_time(&self.times, &self.trajectory, &v, self.band);
        let converged = convergence_time.is_some_and(|t| t <= self.window_start.as_secs_f64());

        let outputs = consensus.outputs();
        let validity_error = outputs
            .iter()
            .map(|x| (x.voltage - self.v_ref).abs())
            .fold(0.0, f64::max);
        let spread = consensus.disagreement();
        let est_current = outputs.iter().map(|x| x.current).sum::<f64>() / outputs.len().max(1) as f64;
        RunMetrics {
            seed: self.seed,
            steady_state_voltage: v,
            mean_voltage,
            abs_error_pct,
            current_sharing_pct,
            convergence_time,
            converged,
            validity_error,
            agreement_voltage: spread.voltage,
            agreement_current: spread.current,
            p2_validity: validity_error <= VALIDITY_TOLERANCE * self.v_ref,
            p3_agreement: spread.voltage <= AGREEMENT_VOLTAGE_TOLERANCE * self.v_ref
                && spread.current <= AGREEMENT_CURRENT_TOLERANCE * est_current.abs(),
            periods: self.periods,
            faults_coordinated: self.coordinated,
            faults_uncoordinated: self.uncoordinated,
            late_updates: stats.late,
            dropped_updates: stats.dropped_updates,
            lost_to_jam: stats.lost_to_jam,
            agent_collisions: stats.agent_collisions,
            jams,
            tca_hat,
        }
    }
}

/// First sample time after which every unit stays within `band` of its
/// final value. `trajectory` holds one row of unit voltages per time.
pub fn convergence_time(times: &[SimTime], trajectory: &[f64], finals: &[f64], band: f64) -> Option<f64> {
    let n = finals.len();
    let mut settled_from = None;
    for (row, t) in trajectory.chunks_exact(n).zip(times) {
        let inside = row.iter().zip(finals).all(|(v, f)| (v - f).abs() < band * f.abs());
        match (inside, settled_from) {
            (true, None) => settled_from = Some(*t),
            (false, Some(_)) => settled_from = None,
            _ => {}
        }
    }
    settled_from.map(SimTime::as_secs_f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_requires_staying_inside() {
        let t: Vec<SimTime> = (1..=5).map(SimTime::from_secs).collect();
        let traj = [40.0, 48.0, 50.0, 48.1, 48.0];
        assert_eq!(convergence_time(&t, &traj, &[48.0], 0.005), Some(4.0));
        let never = [40.0, 41.0, 42.0, 43.0, 44.0];
        assert_eq!(convergence_time(&t, &never, &[48.0], 0.005), None);
    }
}
