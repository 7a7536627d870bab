//! Quasi-static electrical model of an islanded DC microgrid.
//!
//! Each distributed generator (DG) is an ideal voltage source behind its
//! virtual (droop) resistance `R_d`. The source reference is the nominal
//! voltage plus the two secondary compensation terms. Buses are joined by
//! resistive lines and one node carries the load. The inner voltage/current
//! loops are assumed ideally fast, so a plant step is one linear nodal solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::Estimate;
use crate::engine::SimTime;

/// Largest tolerated net current into any node after a solve.
pub const KIRCHHOFF_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("conductance system is singular")]
    Singular,
    #[error("non-finite {what} at unit {unit}")]
    NonFinite { what: &'static str, unit: usize },
    #[error("Kirchhoff residual {residual:e} A at node {node} exceeds tolerance")]
    Kirchhoff { node: usize, residual: f64 },
}

/// Electrical layout. DG `i` sits at node `i`; nodes `n_units..` are passive.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTopology {
    n_units: usize,
    conductance: DMatrix<f64>,
    load_node: usize,
}

impl GridTopology {
    pub fn new(n_units: usize, conductance: DMatrix<f64>, load_node: usize) -> Result<Self, GridError> {
        let n = conductance.nrows();
        if n_units == 0 {
            return Err(GridError::Topology("at least one DG is required".into()));
        }
        if conductance.ncols() != n || n < n_units {
            return Err(GridError::Topology(format!(
                "conductance matrix is {}x{}, need a square matrix with at least {n_units} nodes",
                n,
                conductance.ncols()
            )));
        }
        if load_node >= n {
            return Err(GridError::Topology(format!("load node {load_node} out of range")));
        }
        for a in 0..n {
            for b in 0..n {
                let g = conductance[(a, b)];
                if !g.is_finite() || g < 0.0 {
                    return Err(GridError::Topology(format!("conductance ({a},{b}) = {g} is not a non-negative number")));
                }
                if a != b && g != conductance[(b, a)] {
                    return Err(GridError::Topology(format!("conductance matrix not symmetric at ({a},{b})")));
                }
            }
        }
        let topology = Self {
            n_units,
            conductance,
            load_node,
        };
        if !topology.is_connected() {
            return Err(GridError::Topology("electrical graph is disconnected".into()));
        }
        Ok(topology)
    }

    /// DG buses in a ring, each bus also tied to a central load node, every
    /// link with the same resistance. Fully symmetric for `n_units >= 3`.
    pub fn ring_with_central_load(n_units: usize, line_resistance: f64) -> Result<Self, GridError> {
        if !(line_resistance > 0.0) || !line_resistance.is_finite() {
            return Err(GridError::Parameter(format!("line resistance {line_resistance} must be positive")));
        }
        let g = 1.0 / line_resistance;
        let n = n_units + 1;
        let mut c = DMatrix::zeros(n, n);
        if n_units >= 2 {
            for i in 0..n_units {
                let j = (i + 1) % n_units;
                if i != j {
                    c[(i, j)] = g;
                    c[(j, i)] = g;
                }
            }
        }
        for i in 0..n_units {
            c[(i, n_units)] = g;
            c[(n_units, i)] = g;
        }
        Self::new(n_units, c, n_units)
    }

    /// One DG feeding the load directly on its own bus.
    pub fn single_unit() -> Self {
        Self::new(1, DMatrix::zeros(1, 1), 0).expect("one node is connected")
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_nodes(&self) -> usize {
        self.conductance.nrows()
    }

    pub fn load_node(&self) -> usize {
        self.load_node
    }

    pub fn conductance(&self) -> &DMatrix<f64> {
        &self.conductance
    }

    fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if !seen[b] && self.conductance[(a, b)] > 0.0 {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Nodal admittance matrix with each DG's `1/R_d` and the load on the diagonal.
    fn admittance(&self, r_d: f64, load_conductance: f64) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut y = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let g = self.conductance[(a, b)];
                    y[(a, b)] -= g;
                    y[(a, a)] += g;
                }
            }
        }
        for i in 0..self.n_units {
            y[(i, i)] += 1.0 / r_d;
        }
        y[(self.load_node, self.load_node)] += load_conductance;
        y
    }
}

/// Piecewise-constant load conductance.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadProfile {
    initial: f64,
    steps: Vec<(SimTime, f64)>,
}

impl LoadProfile {
    pub fn constant(conductance: f64) -> Self {
        Self {
            initial: conductance,
            steps: Vec::new(),
        }
    }

    pub fn with_steps(initial: f64, mut steps: Vec<(SimTime, f64)>) -> Result<Self, GridError> {
        steps.sort_by_key(|(t, _)| *t);
        for g in std::iter::once(initial).chain(steps.iter().map(|(_, g)| *g)) {
            if !g.is_finite() || g < 0.0 {
                return Err(GridError::Parameter(format!("load conductance {g} must be non-negative")));
            }
        }
        Ok(Self { initial, steps })
    }

    pub fn at(&self, t: SimTime) -> f64 {
        self.steps
            .iter()
            .take_while(|(at, _)| *at <= t)
            .last()
            .map_or(self.initial, |(_, g)| *g)
    }
}

/// Droop stage. The inner-loop gains are carried for completeness but the
/// quasi-static plant does not use them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrimaryParams {
    pub r_d: f64,
    pub k_pv: f64,
    pub k_iv: f64,
    pub k_pc: f64,
    pub k_ic: f64,
}

impl Default for PrimaryParams {
    fn default() -> Self {
        Self {
            r_d: 0.2,
            k_pv: 4.0,
            k_iv: 800.0,
            k_pc: 1.0,
            k_ic: 97.0,
        }
    }
}

impl PrimaryParams {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.r_d > 0.0) || !self.r_d.is_finite() {
            return Err(GridError::Parameter(format!("R_d = {} must be positive", self.r_d)));
        }
        Ok(())
    }
}

/// Secondary PI compensators: current sharing (`*sc`) and voltage restoration (`*sv`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondaryParams {
    pub v_ref: f64,
    pub k_psc: f64,
    pub k_isc: f64,
    pub k_psv: f64,
    pub k_isv: f64,
}

impl Default for SecondaryParams {
    fn default() -> Self {
        Self {
            v_ref: 48.0,
            k_psc: 0.02,
            k_isc: 1.0,
            k_psv: 0.02,
            k_isv: 2.0,
        }
    }
}

impl SecondaryParams {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.v_ref > 0.0) || !self.v_ref.is_finite() {
            return Err(GridError::Parameter(format!("V_r = {} must be positive", self.v_ref)));
        }
        for (name, k) in [
            ("K_psc", self.k_psc),
            ("K_isc", self.k_isc),
            ("K_psv", self.k_psv),
            ("K_isv", self.k_isv),
        ] {
            if !k.is_finite() || k < 0.0 {
                return Err(GridError::Parameter(format!("{name} = {k} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub i_l: Vec<f64>,
    pub v_dc: Vec<f64>,
    pub int_i: Vec<f64>,
    pub int_v: Vec<f64>,
    pub dv_i: Vec<f64>,
    pub dv_dc: Vec<f64>,
    pub secondary_enabled: bool,
}

impl PlantState {
    fn zeroed(n: usize) -> Self {
        Self {
            i_l: vec![0.0; n],
            v_dc: vec![0.0; n],
            int_i: vec![0.0; n],
            int_v: vec![0.0; n],
            dv_i: vec![0.0; n],
            dv_dc: vec![0.0; n],
            secondary_enabled: false,
        }
    }

    /// Local measurement `(i_L, v_DC)` of one unit.
    pub fn measurement(&self, unit: usize) -> Estimate {
        Estimate::new(self.i_l[unit], self.v_dc[unit])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSolution {
    /// Every node voltage, DG buses first.
    pub node_voltage: Vec<f64>,
    pub i_l: Vec<f64>,
    pub v_dc: Vec<f64>,
    pub load_current: f64,
}

/// Solves the resistive network for given source references.
pub fn solve_network(
    topology: &GridTopology,
    references: &[f64],
    r_d: f64,
    load_conductance: f64,
) -> Result<NetworkSolution, GridError> {
    let y = topology.admittance(r_d, load_conductance);
    let chol = Cholesky::new(y.clone()).ok_or(GridError::Singular)?;
    solve_with(topology, &y, &chol, references, r_d, load_conductance)
}

fn solve_with(
    topology: &GridTopology,
    y: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
    references: &[f64],
    r_d: f64,
    load_conductance: f64,
) -> Result<NetworkSolution, GridError> {
    let n = topology.n_nodes();
    let units = topology.n_units();
    assert_eq!(references.len(), units, "one reference per DG");
    let mut rhs = DVector::zeros(n);
    for (i, r) in references.iter().enumerate() {
        if !r.is_finite() {
            return Err(GridError::NonFinite { what: "reference", unit: i });
        }
        rhs[i] = r / r_d;
    }
    let v = chol.solve(&rhs);
    let residual = y * &v - &rhs;
    for (node, r) in residual.iter().enumerate() {
        if !(r.abs() < KIRCHHOFF_TOLERANCE) {
            return Err(GridError::Kirchhoff { node, residual: *r });
        }
    }
    let node_voltage: Vec<f64> = v.iter().copied().collect();
    let i_l: Vec<f64> = (0..units).map(|i| (references[i] - node_voltage[i]) / r_d).collect();
    let v_dc = node_voltage[..units].to_vec();
    for i in 0..units {
        if !i_l[i].is_finite() || !v_dc[i].is_finite() {
            return Err(GridError::NonFinite { what: "bus solution", unit: i });
        }
    }
    let load_current = node_voltage[topology.load_node()] * load_conductance;
    Ok(NetworkSolution {
        node_voltage,
        i_l,
        v_dc,
        load_current,
    })
}

struct Factorization {
    load_conductance: f64,
    admittance: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

/// The microgrid plant: network, droop stage and secondary compensators.
pub struct Plant {
    topology: GridTopology,
    primary: PrimaryParams,
    secondary: SecondaryParams,
    load: LoadProfile,
    state: PlantState,
    factorization: Option<Factorization>,
}

impl Plant {
    /// Builds the plant and solves the primary-only operating point at `t = 0`.
    pub fn new(
        topology: GridTopology,
        primary: PrimaryParams,
        secondary: SecondaryParams,
        load: LoadProfile,
    ) -> Result<Self, GridError> {
        primary.validate()?;
        secondary.validate()?;
        let n = topology.n_units();
        let mut plant = Self {
            topology,
            primary,
            secondary,
            load,
            state: PlantState::zeroed(n),
            factorization: None,
        };
        plant.resolve(SimTime::ZERO)?;
        Ok(plant)
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    pub fn secondary_params(&self) -> &SecondaryParams {
        &self.secondary
    }

    pub fn n_units(&self) -> usize {
        self.topology.n_units()
    }

    pub fn enable_secondary(&mut self) {
        self.state.secondary_enabled = true;
    }

    /// Advances one unit's PI compensators by `dt` seconds against its current
    /// consensus estimate and returns `(δv_I, δv_DC)`.
    ///
    /// Forward-Euler integration, no anti-windup. With the secondary stage
    /// disabled this returns `(0, 0)` and leaves the integrators at zero.
    pub fn compensation_step(&mut self, unit: usize, estimate: Estimate, dt: f64) -> Result<(f64, f64), GridError> {
        assert!(dt > 0.0, "plant step must be positive");
        if !estimate.current.is_finite() || !estimate.voltage.is_finite() {
            return Err(GridError::NonFinite { what: "consensus estimate", unit });
        }
        let s = &mut self.state;
        if !s.secondary_enabled {
            s.dv_i[unit] = 0.0;
            s.dv_dc[unit] = 0.0;
            return Ok((0.0, 0.0));
        }
        let p = &self.secondary;
        let current_error = estimate.current - s.i_l[unit];
        s.int_i[unit] += p.k_isc * current_error * dt;
        let dv_i = s.int_i[unit] + p.k_psc * current_error;

        let voltage_error = p.v_ref - estimate.voltage;
        s.int_v[unit] += p.k_isv * voltage_error * dt;
        let dv_dc = s.int_v[unit] + p.k_psv * voltage_error;

        if !dv_i.is_finite() || !dv_dc.is_finite() {
            return Err(GridError::NonFinite { what: "compensation", unit });
        }
        s.dv_i[unit] = dv_i;
        s.dv_dc[unit] = dv_dc;
        Ok((dv_i, dv_dc))
    }

    /// One quasi-static step: compensators per unit, then the network solve.
    /// `estimates` are ignored while the secondary stage is disabled.
    pub fn step(&mut self, t: SimTime, estimates: &[Estimate], dt: f64) -> Result<&PlantState, GridError> {
        if self.state.secondary_enabled {
            assert_eq!(estimates.len(), self.n_units(), "one estimate per unit");
            for (unit, est) in estimates.iter().enumerate() {
                self.compensation_step(unit, *est, dt)?;
            }
        }
        self.resolve(t)?;
        Ok(&self.state)
    }

    pub fn references(&self) -> Vec<f64> {
        let s = &self.state;
        (0..self.n_units())
            .map(|i| self.secondary.v_ref + s.dv_dc[i] + s.dv_i[i])
            .collect()
    }

    fn resolve(&mut self, t: SimTime) -> Result<(), GridError> {
        let g_load = self.load.at(t);
        let stale = self
            .factorization
            .as_ref()
            .is_none_or(|f| f.load_conductance != g_load);
        if stale {
            let admittance = self.topology.admittance(self.primary.r_d, g_load);
            let cholesky = Cholesky::new(admittance.clone()).ok_or(GridError::Singular)?;
            self.factorization = Some(Factorization {
                load_conductance: g_load,
                admittance,
                cholesky,
            });
        }
        let f = self.factorization.as_ref().expect("factorized above");
        let refs = self.references();
        let sol = solve_with(&self.topology, &f.admittance, &f.cholesky, &refs, self.primary.r_d, g_load)?;
        self.state.i_l = sol.i_l;
        self.state.v_dc = sol.v_dc;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_plant(load_ohm: f64) -> Plant {
        Plant::new(
            GridTopology::ring_with_central_load(6, 0.1).unwrap(),
            PrimaryParams::default(),
            SecondaryParams::default(),
            LoadProfile::constant(1.0 / load_ohm),
        )
        .unwrap()
    }

    #[test]
    fn zero_error_leaves_compensation_at_zero() {
        let mut plant = default_plant(4.6);
        plant.enable_secondary();
        let m = plant.state().measurement(0);
        let est = Estimate::new(m.current, 48.0);
        let (dvi, dvdc) = plant.compensation_step(0, est, 1e-4).unwrap();
        assert_eq!((dvi, dvdc), (0.0, 0.0));
    }

    #[test]
    fn discrete_pi_hand_value() {
        // zero integrators, ī_L - i_L = 1 A, dt = 1e-4, K_isc = 1, K_psc = 0.02
        let mut plant = default_plant(4.6);
        plant.enable_secondary();
        let m = plant.state().measurement(2);
        let est = Estimate::new(m.current + 1.0, 48.0);
        let (dvi, dvdc) = plant.compensation_step(2, est, 1e-4).unwrap();
        assert_abs_diff_eq!(dvi, 0.0201, epsilon = 1e-12);
        assert_eq!(dvdc, 0.0);
    }

    #[test]
    fn disabled_secondary_is_inert() {
        let mut plant = default_plant(4.6);
        let est = Estimate::new(100.0, 0.0);
        assert_eq!(plant.compensation_step(1, est, 1e-4).unwrap(), (0.0, 0.0));
        assert_eq!(plant.state().int_i[1], 0.0);
        assert_eq!(plant.state().int_v[1], 0.0);
        let before = plant.state().clone();
        for k in 1..50 {
            plant.step(SimTime::from_micros(100 * k), &[est; 6], 1e-4).unwrap();
        }
        assert_eq!(plant.state(), &before);
    }

    #[test]
    fn non_finite_estimate_aborts() {
        let mut plant = default_plant(4.6);
        plant.enable_secondary();
        let err = plant.compensation_step(0, Estimate::new(f64::NAN, 48.0), 1e-4).unwrap_err();
        assert!(matches!(err, GridError::NonFinite { .. }));
    }

    #[test]
    fn single_unit_divider() {
        // 48 V behind 0.2 Ω into 4.6 Ω
        let topo = GridTopology::single_unit();
        let sol = solve_network(&topo, &[48.0], 0.2, 1.0 / 4.6).unwrap();
        assert_abs_diff_eq!(sol.i_l[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.v_dc[0], 46.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_grid_shares_equally() {
        let topo = GridTopology::ring_with_central_load(6, 0.1).unwrap();
        let sol = solve_network(&topo, &[48.0; 6], 0.2, 1.0 / 4.6).unwrap();
        for i in 1..6 {
            assert_abs_diff_eq!(sol.i_l[i], sol.i_l[0], epsilon = 1e-12);
            assert_abs_diff_eq!(sol.v_dc[i], sol.v_dc[0], epsilon = 1e-12);
        }
        assert!(sol.v_dc[0] < 48.0);
        let total: f64 = sol.i_l.iter().sum();
        assert_abs_diff_eq!(total, sol.load_current, epsilon = 1e-9);
    }

    #[test]
    fn primary_only_voltage_sags() {
        let plant = default_plant(4.6);
        assert!(plant.state().v_dc.iter().all(|&v| v < 48.0));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 1)] = 1.0;
        c[(1, 0)] = 1.0;
        let err = GridTopology::new(2, c, 2).unwrap_err();
        assert!(matches!(err, GridError::Topology(_)));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 1)] = 1.0;
        c[(1, 0)] = 2.0;
        assert!(GridTopology::new(2, c, 1).is_err());
    }

    #[test]
    fn load_profile_steps() {
        let p = LoadProfile::with_steps(0.5, vec![(SimTime::from_secs(2), 0.25)]).unwrap();
        assert_eq!(p.at(SimTime::ZERO), 0.5);
        assert_eq!(p.at(SimTime::from_secs(2)), 0.25);
    }

    #[test]
    fn restoration_with_ideal_estimates() {
        // Secondary loop fed with the true averages converges to V_r and equal sharing.
        let mut plant = default_plant(4.6);
        plant.enable_secondary();
        let dt = 1e-4;
        for k in 1..=40_000u64 {
            let s = plant.state();
            let n = s.i_l.len() as f64;
            let avg = Estimate::new(s.i_l.iter().sum::<f64>() / n, s.v_dc.iter().sum::<f64>() / n);
            plant.step(SimTime::from_micros(100 * k), &[avg; 6], dt).unwrap();
        }
        let s = plant.state();
        let mean_v = s.v_dc.iter().sum::<f64>() / 6.0;
        assert_abs_diff_eq!(mean_v, 48.0, epsilon = 1e-3);
    }
}
