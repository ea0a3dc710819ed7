//! Area control error and the AGC integrator acting on governor references.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::dae::PowerSystem;
use crate::error::{Error, Result};

pub const DEFAULT_AGC_GAIN: f64 = 1.0;

/// A tie branch seen from one area: the area exports the real power that
/// leaves through its own terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TieTerminal {
    pub branch: usize,
    pub at_from: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaConfig {
    /// External area ids, indexed by internal area number.
    pub area_ids: Vec<usize>,
    /// Internal area number of every bus.
    pub bus_area: Vec<usize>,
    /// Generators of each area.
    pub gens: Vec<Vec<usize>>,
    pub ties: Vec<Vec<TieTerminal>>,
    /// Frequency bias `Σ (1/R_i + D_i)` per area (pu/Hz).
    pub bias: Vec<f64>,
    /// Integrator gain `K_a` per area (1/s).
    pub gain: Vec<f64>,
    /// Participation factor of every generator; they sum to one per area.
    pub participation: Vec<f64>,
    /// Equilibrium dispatch the AGC steers towards.
    pub p_eq: Vec<f64>,
}

/// Parses `bus_id area_id` lines into an external area id per internal bus.
pub fn parse_partition(sys: &PowerSystem, text: &str) -> Result<Vec<usize>> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(idx + 1, "expected 'bus_id area_id'"));
        }
        let bus: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("bad bus id '{}'", fields[0])))?;
        let area: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("bad area id '{}'", fields[1])))?;
        if sys.case.bus_index(bus).is_none() {
            return Err(Error::parse(idx + 1, format!("unknown bus {bus}")));
        }
        if map.insert(bus, area).is_some() {
            return Err(Error::parse(idx + 1, format!("bus {bus} listed twice")));
        }
    }
    sys.case
        .buses
        .iter()
        .map(|b| {
            map.get(&b.id).copied().ok_or_else(|| {
                Error::Config(format!("bus {} has no area in the partition file", b.id))
            })
        })
        .collect()
}

impl AreaConfig {
    /// One area covering the whole network.
    pub fn single_area(sys: &PowerSystem, p_eq: &[f64], gain: f64) -> Result<Self> {
        Self::new(sys, &vec![1; sys.layout.n], p_eq, gain)
    }

    /// Areas from an external area id per internal bus.
    pub fn new(sys: &PowerSystem, bus_area_ids: &[usize], p_eq: &[f64], gain: f64) -> Result<Self> {
        let l = sys.layout;
        if bus_area_ids.len() != l.n || p_eq.len() != l.g {
            return Err(Error::Dimension("area assignment".into()));
        }
        if !(gain >= 0.0) || !gain.is_finite() {
            return Err(Error::Config(format!(
                "AGC gain must be nonnegative, got {gain}"
            )));
        }
        let mut area_ids: Vec<usize> = bus_area_ids.to_vec();
        area_ids.sort_unstable();
        area_ids.dedup();
        let index = |id: usize| area_ids.binary_search(&id).expect("area id present");
        let bus_area: Vec<usize> = bus_area_ids.iter().map(|&id| index(id)).collect();
        let na = area_ids.len();

        let mut gens = vec![Vec::new(); na];
        for i in 0..l.g {
            gens[bus_area[i]].push(i);
        }
        if let Some(a) = gens.iter().position(|g| g.is_empty()) {
            return Err(Error::Config(format!(
                "area {} has no generator",
                area_ids[a]
            )));
        }

        let mut ties = vec![Vec::new(); na];
        for (k, br) in sys.case.branches.iter().enumerate() {
            let (af, at) = (bus_area[br.from], bus_area[br.to]);
            if af != at {
                ties[af].push(TieTerminal {
                    branch: k,
                    at_from: true,
                });
                ties[at].push(TieTerminal {
                    branch: k,
                    at_from: false,
                });
            }
        }

        let mut bias = vec![0.0; na];
        let mut participation = vec![0.0; l.g];
        for (a, members) in gens.iter().enumerate() {
            let total: f64 = members.iter().map(|&i| p_eq[i]).sum();
            for &i in members {
                let m = &sys.case.generators[i].machine;
                bias[a] += 1.0 / m.droop + m.damping;
                participation[i] = if total.abs() > 1e-12 {
                    p_eq[i] / total
                } else {
                    1.0 / members.len() as f64
                };
            }
        }
        Ok(AreaConfig {
            area_ids,
            bus_area,
            gens,
            ties,
            bias,
            gain: vec![gain; na],
            participation,
            p_eq: p_eq.to_vec(),
        })
    }

    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    /// `Σ_{i∈𝒢_a} p_i^eq` per area; also the equilibrium AGC state.
    pub fn scheduled_generation(&self) -> Vec<f64> {
        self.gens
            .iter()
            .map(|m| m.iter().map(|&i| self.p_eq[i]).sum())
            .collect()
    }

    /// Net real power exported by each area over its tie branches.
    pub fn tie_exports(&self, sys: &PowerSystem, a: &DVector<f64>) -> Vec<f64> {
        let l = sys.layout;
        let voltage = |k: usize| Complex64::from_polar(a[l.v(k)], a[l.theta(k)]);
        self.ties
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|t| {
                        let br = &sys.case.branches[t.branch];
                        let ys = Complex64::new(br.series_r, br.series_x).inv();
                        let yc = Complex64::new(0.0, br.charging_b / 2.0);
                        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
                        let (vf, vt) = (voltage(br.from), voltage(br.to));
                        if t.at_from {
                            let i = (ys + yc) / (br.tap_ratio * br.tap_ratio) * vf
                                - ys / tap.conj() * vt;
                            (vf * i.conj()).re
                        } else {
                            let i = (ys + yc) * vt - ys / tap * vf;
                            (vt * i.conj()).re
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Area control error: tie export deviation plus the frequency bias
    /// times the area's mean frequency deviation in Hz.
    pub fn ace(
        &self,
        sys: &PowerSystem,
        x: &DVector<f64>,
        a: &DVector<f64>,
        tie_eq: &[f64],
    ) -> Vec<f64> {
        let l = sys.layout;
        let ws = sys.omega_s();
        let exports = self.tie_exports(sys, a);
        (0..self.n_areas())
            .map(|ar| {
                let members = &self.gens[ar];
                let mean_dw =
                    members.iter().map(|&i| x[l.omega(i)] - ws).sum::<f64>() / members.len() as f64;
                (exports[ar] - tie_eq[ar]) + self.bias[ar] * mean_dw / (2.0 * PI)
            })
            .collect()
    }

    /// `ẏ_a = K_a (−y_a − ACE_a + Σ p^eq)` and `r_i = K_i y_a`.
    pub fn agc_step(&self, y: &[f64], ace: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sched = self.scheduled_generation();
        let ydot = (0..self.n_areas())
            .map(|ar| self.gain[ar] * (-y[ar] - ace[ar] + sched[ar]))
            .collect();
        let mut r = vec![0.0; self.participation.len()];
        for (ar, members) in self.gens.iter().enumerate() {
            for &i in members {
                r[i] = self.participation[i] * y[ar];
            }
        }
        (ydot, r)
    }
}
