//! Bundled test networks and case/machine file resolution.
//!
//! A case is named either by a path or by a bundled name (`case9`, `case14`,
//! `case39`, `case57`). Bundled names are looked up in `$GRIDLQR_DATA` when
//! that variable is set, otherwise the copies compiled into the crate are used.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::netcase::{parse_case, NetworkCase};

pub const BUNDLED_CASES: [&str; 4] = ["case9", "case14", "case39", "case57"];

pub const DATA_ENV: &str = "GRIDLQR_DATA";

const TYPICAL_MACHINES: &str = "typical = true\n";

fn embedded(name: &str) -> Option<&'static str> {
    match name {
        "case9" => Some(include_str!("../data/case9.m")),
        "case14" => Some(include_str!("../data/case14.m")),
        "case39" => Some(include_str!("../data/case39.m")),
        "case57" => Some(include_str!("../data/case57.m")),
        _ => None,
    }
}

/// Directory searched for bundled names, if overridden through the environment.
pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_ENV).map(PathBuf::from)
}

/// Returns the case text for a path or bundled name.
pub fn read_case_text(spec: &str) -> Result<String> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(std::fs::read_to_string(path)?);
    }
    let name = spec.strip_suffix(".m").unwrap_or(spec);
    if let Some(dir) = data_dir() {
        let candidate = dir.join(format!("{name}.m"));
        if candidate.is_file() {
            return Ok(std::fs::read_to_string(candidate)?);
        }
    }
    embedded(name).map(str::to_owned).ok_or_else(|| {
        Error::Config(format!(
            "case '{spec}' is neither a file nor a bundled case"
        ))
    })
}

/// Returns machine-file text; `None` or `typical` selects typical parameters.
pub fn read_machine_text(spec: Option<&str>) -> Result<String> {
    match spec {
        None | Some("typical") => Ok(TYPICAL_MACHINES.to_string()),
        Some(p) => {
            let path = Path::new(p);
            if !path.is_file() {
                return Err(Error::Config(format!("machine file '{p}' not found")));
            }
            Ok(std::fs::read_to_string(path)?)
        }
    }
}

/// Loads and validates a case by path or bundled name.
pub fn load_case(case: &str, machines: Option<&str>) -> Result<NetworkCase> {
    let text = read_case_text(case)?;
    let m = read_machine_text(machines)?;
    parse_case(&text, &m)
}
