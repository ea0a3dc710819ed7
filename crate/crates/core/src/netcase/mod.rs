//! Static grid description: buses, branches, generators and their machine data.
//!
//! Buses are stored in an internal order with generator buses first
//! (`0..G`) followed by load-only buses (`G..N`). Generator `i` always sits
//! on internal bus `i`. External (file) bus ids are kept on each [`Bus`] for
//! reporting and serialization.

mod machines;
mod matpower;
mod ybus;

pub use machines::{parse_machines, MachineBase, MachineSpec};
pub use matpower::{parse_case, write_case, write_machines};
pub use ybus::{build_ybus, AdmittanceMatrix};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External bus id as it appears in the case file.
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    /// Base real demand, pu on the system base.
    pub p_load0: f64,
    /// Base reactive demand, pu on the system base.
    pub q_load0: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    /// Voltage magnitude from the case file (pu).
    pub v0: f64,
    /// Voltage angle from the case file (rad).
    pub theta0: f64,
    pub base_kv: f64,
    pub area: usize,
}

/// π-model branch between two internal bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub series_r: f64,
    pub series_x: f64,
    pub charging_b: f64,
    /// Off-nominal tap ratio, 1.0 when the branch is a plain line.
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub phase_shift: f64,
}

/// Fourth-order machine and governor constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineParams {
    /// Inertia M (pu·s²).
    pub inertia: f64,
    /// Damping D (pu·s).
    pub damping: f64,
    /// Direct-axis open-circuit time constant (s).
    pub tau_d: f64,
    /// Prime-mover charging time (s).
    pub tau_c: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_prime: f64,
    /// Governor regulation constant R (Hz/pu).
    pub droop: f64,
}

impl MachineParams {
    pub const TYPICAL: MachineParams = MachineParams {
        inertia: 0.2,
        damping: 0.0,
        tau_d: 5.0,
        tau_c: 0.2,
        x_d: 0.7,
        x_q: 0.5,
        x_d_prime: 0.07,
        droop: 0.02,
    };

    /// Converts constants on a machine base of `ratio` times the system
    /// base to the system base.
    pub fn to_system_base(self, ratio: f64) -> MachineParams {
        MachineParams {
            inertia: self.inertia * ratio,
            damping: self.damping * ratio,
            x_d: self.x_d / ratio,
            x_q: self.x_q / ratio,
            x_d_prime: self.x_d_prime / ratio,
            droop: self.droop / ratio,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self;
        let all = [
            m.inertia,
            m.damping,
            m.tau_d,
            m.tau_c,
            m.x_d,
            m.x_q,
            m.x_d_prime,
            m.droop,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCase("non-finite machine parameter".into()));
        }
        if m.tau_d <= 0.0 || m.tau_c <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "nonpositive time constant (tau_d = {}, tau_c = {})",
                m.tau_d, m.tau_c
            )));
        }
        if m.inertia <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "nonpositive inertia M = {}",
                m.inertia
            )));
        }
        if m.x_d_prime <= 0.0 || m.x_d < m.x_d_prime || m.x_q <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "reactances must satisfy x_d >= x_d' > 0 and x_q > 0 (x_d = {}, x_d' = {}, x_q = {})",
                m.x_d, m.x_d_prime, m.x_q
            )));
        }
        if m.droop <= 0.0 {
            return Err(Error::InvalidCase(format!(
                "nonpositive droop R = {}",
                m.droop
            )));
        }
        if m.damping < 0.0 {
            return Err(Error::InvalidCase(format!(
                "negative damping D = {}",
                m.damping
            )));
        }
        Ok(())
    }
}

/// Quadratic generation cost and operating limits, all in pu on the system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenCost {
    /// $/(pu²·h)
    pub c2: f64,
    /// $/(pu·h)
    pub c1: f64,
    /// $/h
    pub c0: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl GenCost {
    pub fn eval(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Dispatch from the case file (pu).
    pub p0: f64,
    pub q0: f64,
    /// Voltage setpoint from the case file (pu).
    pub v_set: f64,
    pub cost: GenCost,
    /// Machine constants on the system base.
    pub machine: MachineParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Generator `i` is connected to internal bus `i`.
    pub generators: Vec<Generator>,
    /// Internal index of the slack bus (always a generator bus).
    pub slack: usize,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    /// Internal index of the bus with external id `id`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Total generation cost c(a) for the given generator outputs (pu).
    pub fn generation_cost(&self, p_gen: &[f64]) -> f64 {
        self.generators
            .iter()
            .zip(p_gen)
            .map(|(g, &p)| g.cost.eval(p))
            .sum()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load0, q + b.q_load0))
    }

    /// Checks the structural invariants of the case.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_bus();
        let g = self.n_gen();
        if g == 0 {
            return Err(Error::InvalidCase("no generators".into()));
        }
        if g > n {
            return Err(Error::InvalidCase("more generators than buses".into()));
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slacks == 0 {
            return Err(Error::InvalidCase("no slack bus".into()));
        }
        if slacks > 1 {
            return Err(Error::InvalidCase("multiple slack buses".into()));
        }
        if self.slack >= g || self.buses[self.slack].kind != BusKind::Slack {
            return Err(Error::InvalidCase(
                "slack bus must carry a generator".into(),
            ));
        }
        for (i, b) in self.buses.iter().enumerate() {
            let is_gen_bus = i < g;
            if is_gen_bus == (b.kind == BusKind::Load) {
                return Err(Error::InvalidCase(format!(
                    "bus {} kind {:?} inconsistent with generator ordering",
                    b.id, b.kind
                )));
            }
            if b.v_min > b.v_max {
                return Err(Error::InvalidCase(format!("bus {}: v_min > v_max", b.id)));
            }
        }
        let mut ids: Vec<usize> = self.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCase("duplicate bus ids".into()));
        }
        for br in &self.branches {
            if br.from >= n || br.to >= n {
                return Err(Error::InvalidCase("branch references unknown bus".into()));
            }
            if br.from == br.to {
                return Err(Error::InvalidCase(format!(
                    "branch connects bus {} to itself",
                    self.buses[br.from].id
                )));
            }
            if br.series_r == 0.0 && br.series_x == 0.0 {
                return Err(Error::InvalidCase(format!(
                    "zero series impedance on branch {}-{}",
                    self.buses[br.from].id, self.buses[br.to].id
                )));
            }
        }
        for gen in &self.generators {
            gen.machine.validate()?;
            let c = &gen.cost;
            if c.c2 < 0.0 || c.p_min > c.p_max || c.q_min > c.q_max {
                return Err(Error::InvalidCase(
                    "inconsistent generator cost or limits".into(),
                ));
            }
        }
        Ok(())
    }
}
