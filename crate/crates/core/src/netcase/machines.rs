//! Key-value machine parameter files.
//!
//! ```text
//! typical = true
//!
//! [bus 2]
//! M = 0.25
//! x_d_prime = 0.08
//! ```
//!
//! Sections are keyed by external generator bus id (`[2]` or `[bus 2]`).
//! Keys missing from a section, and generators without a section, fall back
//! to [`MachineParams::TYPICAL`].
//!
//! Values are per unit on the machine's own rating unless the file says
//! `base = system`. A section may set the rating with `mva = ...`; otherwise
//! the generator's `Pmax` is used.

use std::collections::BTreeMap;

use super::MachineParams;
use crate::error::{Error, Result};

/// Per-unit base the machine constants are expressed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MachineBase {
    #[default]
    Machine,
    System,
}

#[derive(Debug, Clone, Default)]
pub struct MachineSpec {
    pub typical: bool,
    pub base: MachineBase,
    pub sections: BTreeMap<usize, MachineParams>,
    /// Machine ratings (MVA) given in the file.
    pub ratings: BTreeMap<usize, f64>,
}

impl MachineSpec {
    /// Constants on the system base for the generator at `bus_id`, whose
    /// default rating is `p_max_mw`.
    pub fn system_params(&self, bus_id: usize, p_max_mw: f64, base_mva: f64) -> MachineParams {
        let params = self.params_for(bus_id);
        match self.base {
            MachineBase::System => params,
            MachineBase::Machine => {
                let rating = self.ratings.get(&bus_id).copied().unwrap_or(p_max_mw);
                params.to_system_base(rating / base_mva)
            }
        }
    }

    pub fn params_for(&self, bus_id: usize) -> MachineParams {
        self.sections
            .get(&bus_id)
            .copied()
            .unwrap_or(MachineParams::TYPICAL)
    }

    /// Rejects sections naming buses without a generator.
    pub fn check_buses(&self, gen_buses: impl Iterator<Item = usize>) -> Result<()> {
        let gens: Vec<usize> = gen_buses.collect();
        for id in self.sections.keys() {
            if !gens.contains(id) {
                return Err(Error::InvalidCase(format!(
                    "machine data given for bus {id}, which has no generator"
                )));
            }
        }
        Ok(())
    }
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::parse(
            line,
            format!("expected a boolean, found '{v}'"),
        )),
    }
}

/// Parses a machine file. The bare word `typical` is accepted as shorthand
/// for `typical = true`.
pub fn parse_machines(text: &str) -> Result<MachineSpec> {
    let mut spec = MachineSpec::default();
    let mut current: Option<(usize, MachineParams)> = None;

    let flush =
        |spec: &mut MachineSpec, cur: Option<(usize, MachineParams)>, line: usize| -> Result<()> {
            if let Some((id, params)) = cur {
                params
                    .validate()
                    .map_err(|e| Error::parse(line, format!("bus {id}: {e}")))?;
                if spec.sections.insert(id, params).is_some() {
                    return Err(Error::parse(
                        line,
                        format!("duplicate section for bus {id}"),
                    ));
                }
            }
            Ok(())
        };

    let mut last_line = 0;
    for (idx, full) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = full.split(['#', '%']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(lineno, "unterminated section header"))?
                .trim();
            let inner = inner.strip_prefix("bus").unwrap_or(inner).trim();
            let id: usize = inner
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad section id '{inner}'")))?;
            flush(&mut spec, current.take(), lineno)?;
            current = Some((id, MachineParams::TYPICAL));
            continue;
        }
        if line.eq_ignore_ascii_case("typical") {
            spec.typical = true;
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(lineno, format!("expected 'key = value', found '{line}'"))
        })?;
        let key = key.trim();
        let value = value.trim();

        let Some((id, params)) = current.as_mut() else {
            match key {
                "typical" => spec.typical = parse_bool(value, lineno)?,
                "base" => {
                    spec.base = match value.to_ascii_lowercase().as_str() {
                        "machine" => MachineBase::Machine,
                        "system" => MachineBase::System,
                        _ => {
                            return Err(Error::parse(
                                lineno,
                                format!("base must be 'machine' or 'system', found '{value}'"),
                            ))
                        }
                    }
                }
                _ => {
                    return Err(Error::parse(
                        lineno,
                        format!("key '{key}' outside a section"),
                    ))
                }
            }
            continue;
        };
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad value '{value}' for {key}")))?;
        match key {
            "M" => params.inertia = v,
            "D" => params.damping = v,
            "tau_d" => params.tau_d = v,
            "tau_c" => params.tau_c = v,
            "x_d" => params.x_d = v,
            "x_q" => params.x_q = v,
            "x_d_prime" => params.x_d_prime = v,
            "R_droop" => params.droop = v,
            "mva" => {
                if !(v > 0.0) {
                    return Err(Error::parse(
                        lineno,
                        format!("machine rating must be positive, got {v}"),
                    ));
                }
                spec.ratings.insert(*id, v);
            }
            _ => return Err(Error::parse(lineno, format!("unknown machine key '{key}'"))),
        }
    }
    flush(&mut spec, current, last_line)?;
    Ok(spec)
}
