//! Reader and writer for the MATPOWER `.m` case subset.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::machines::{self, MachineSpec};
use super::{Branch, Bus, BusKind, GenCost, Generator, NetworkCase};
use crate::error::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 10;

#[derive(Debug, Default)]
struct RawCase {
    name: String,
    base_mva: Option<f64>,
    matrices: HashMap<String, (usize, Vec<Vec<f64>>)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad number '{t}'")))
        })
        .collect()
}

fn scan(text: &str) -> Result<RawCase> {
    let mut raw = RawCase::default();
    // (name, first line, rows)
    let mut open: Option<(String, usize, Vec<Vec<f64>>)> = None;

    for (idx, full) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = strip_comment(full).trim();
        if line.is_empty() {
            continue;
        }

        if open.is_none() {
            if let Some(rest) = line.strip_prefix("function") {
                if let Some((_, name)) = rest.split_once('=') {
                    raw.name = name.trim().trim_end_matches(';').to_string();
                }
                continue;
            }
            let Some(rest) = line.strip_prefix("mpc.") else {
                return Err(Error::parse(
                    lineno,
                    format!("unexpected statement '{line}'"),
                ));
            };
            let Some((key, value)) = rest.split_once('=') else {
                return Err(Error::parse(lineno, "expected assignment"));
            };
            let key = key.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((key, lineno, Vec::new()));
                line = body;
            } else {
                if key == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    let base = v
                        .parse::<f64>()
                        .map_err(|_| Error::parse(lineno, format!("bad baseMVA '{v}'")))?;
                    if !(base > 0.0) {
                        return Err(Error::parse(lineno, "baseMVA must be positive"));
                    }
                    raw.base_mva = Some(base);
                }
                // other scalars (version, strings) are ignored
                continue;
            }
        }

        let (key, start, rows) = open.as_mut().expect("matrix is open");
        let (body, closed) = match line.find(']') {
            Some(i) => (&line[..i], true),
            None => (line, false),
        };
        for chunk in body.split(';') {
            let row = parse_row(chunk, lineno)?;
            if !row.is_empty() {
                rows.push(row);
            }
        }
        if closed {
            let (key, start, rows) = (std::mem::take(key), *start, std::mem::take(rows));
            if let Some(first) = rows.first() {
                let width = first.len();
                if rows.iter().any(|r| r.len() != width) {
                    return Err(Error::parse(
                        start,
                        format!("rows of '{key}' have different lengths"),
                    ));
                }
            }
            raw.matrices.insert(key, (start, rows));
            open = None;
        }
    }
    if let Some((key, start, _)) = open {
        return Err(Error::parse(start, format!("matrix '{key}' is not closed")));
    }
    Ok(raw)
}

fn matrix<'a>(raw: &'a RawCase, key: &str, min_cols: usize) -> Result<(usize, &'a [Vec<f64>])> {
    let (line, rows) = raw
        .matrices
        .get(key)
        .ok_or_else(|| Error::InvalidCase(format!("missing matrix mpc.{key}")))?;
    if let Some(r) = rows.first() {
        if r.len() < min_cols {
            return Err(Error::parse(
                *line,
                format!(
                    "mpc.{key} needs at least {min_cols} columns, found {}",
                    r.len()
                ),
            ));
        }
    }
    Ok((*line, rows))
}

fn as_id(v: f64, line: usize, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::parse(line, format!("invalid {what} '{v}'")))
    }
}

/// Parses a MATPOWER case together with its machine-parameter text.
///
/// All quantities are converted to per-unit on the case base, and buses are
/// reordered so that generator buses come first.
pub fn parse_case(case_text: &str, machine_text: &str) -> Result<NetworkCase> {
    let raw = scan(case_text)?;
    let spec = machines::parse_machines(machine_text)?;
    assemble(&raw, &spec)
}

fn assemble(raw: &RawCase, spec: &MachineSpec) -> Result<NetworkCase> {
    let base = raw.base_mva.unwrap_or(100.0);
    let (bus_line, bus_rows) = matrix(raw, "bus", BUS_COLS)?;
    let (gen_line, gen_rows) = matrix(raw, "gen", GEN_COLS)?;
    let (br_line, br_rows) = matrix(raw, "branch", BRANCH_COLS)?;
    let (gc_line, gc_rows) = matrix(raw, "gencost", 4)?;

    if gc_rows.len() != gen_rows.len() {
        return Err(Error::parse(
            gc_line,
            format!(
                "gencost has {} rows but gen has {}",
                gc_rows.len(),
                gen_rows.len()
            ),
        ));
    }

    // External id -> file row.
    let mut bus_row: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, r) in bus_rows.iter().enumerate() {
        let id = as_id(r[0], bus_line + k, "bus id")?;
        if bus_row.insert(id, k).is_some() {
            return Err(Error::InvalidCase(format!("duplicate bus id {id}")));
        }
        if r[1] == 4.0 {
            return Err(Error::InvalidCase(format!(
                "isolated bus {id} is not supported"
            )));
        }
    }

    // In-service generators with positive capacity, in file order.
    let mut gens: Vec<(usize, usize)> = Vec::new(); // (bus id, gen row)
    let mut seen = BTreeMap::new();
    for (k, r) in gen_rows.iter().enumerate() {
        let id = as_id(r[0], gen_line + k, "generator bus")?;
        if !bus_row.contains_key(&id) {
            return Err(Error::InvalidCase(format!("generator on unknown bus {id}")));
        }
        let in_service = r[7] > 0.0;
        let p_max = r[8];
        if !in_service || p_max <= 0.0 {
            continue;
        }
        if seen.insert(id, k).is_some() {
            return Err(Error::InvalidCase(format!(
                "multiple generators on bus {id}; aggregate them first"
            )));
        }
        gens.push((id, k));
    }

    let slack_ids: Vec<usize> = bus_rows
        .iter()
        .filter(|r| r[1] == 3.0)
        .map(|r| r[0] as usize)
        .collect();
    if slack_ids.is_empty() {
        return Err(Error::InvalidCase("no slack bus".into()));
    }
    if slack_ids.len() > 1 {
        return Err(Error::InvalidCase("multiple slack buses".into()));
    }
    let slack_id = slack_ids[0];
    let slack = gens
        .iter()
        .position(|&(id, _)| id == slack_id)
        .ok_or_else(|| Error::InvalidCase(format!("slack bus {slack_id} has no generator")))?;

    let mut order: Vec<usize> = gens.iter().map(|&(id, _)| id).collect();
    for r in bus_rows {
        let id = r[0] as usize;
        if !seen.contains_key(&id) {
            order.push(id);
        }
    }
    let internal: HashMap<usize, usize> =
        order.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let buses: Vec<Bus> = order
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let r = &bus_rows[bus_row[&id]];
            let kind = if i == slack {
                BusKind::Slack
            } else if i < gens.len() {
                BusKind::Generator
            } else {
                BusKind::Load
            };
            Bus {
                id,
                kind,
                v_min: r[12],
                v_max: r[11],
                p_load0: r[2] / base,
                q_load0: r[3] / base,
                shunt_g: r[4] / base,
                shunt_b: r[5] / base,
                v0: r[7],
                theta0: r[8].to_radians(),
                base_kv: r[9],
                area: if r[6] >= 1.0 { r[6] as usize } else { 1 },
            }
        })
        .collect();

    let mut branches = Vec::with_capacity(br_rows.len());
    for (k, r) in br_rows.iter().enumerate() {
        let line = br_line + k;
        if r.len() > 10 && r[10] <= 0.0 {
            continue;
        }
        let f = as_id(r[0], line, "branch from-bus")?;
        let t = as_id(r[1], line, "branch to-bus")?;
        let (Some(&from), Some(&to)) = (internal.get(&f), internal.get(&t)) else {
            return Err(Error::parse(
                line,
                format!("branch {f}-{t} references an unknown bus"),
            ));
        };
        let tap = if r[8] == 0.0 { 1.0 } else { r[8] };
        branches.push(Branch {
            from,
            to,
            series_r: r[2],
            series_x: r[3],
            charging_b: r[4],
            tap_ratio: tap,
            phase_shift: r[9].to_radians(),
        });
    }

    let mut generators = Vec::with_capacity(gens.len());
    for &(id, k) in &gens {
        let r = &gen_rows[k];
        let c = &gc_rows[k];
        let line = gc_line + k;
        if c[0] != 2.0 {
            return Err(Error::parse(
                line,
                "only polynomial generator costs are supported",
            ));
        }
        let n = c[3] as usize;
        if c.len() < 4 + n {
            return Err(Error::parse(
                line,
                "gencost row shorter than its coefficient count",
            ));
        }
        let coeffs = &c[4..4 + n];
        let (c2, c1, c0) = match n {
            0 => (0.0, 0.0, 0.0),
            1 => (0.0, 0.0, coeffs[0]),
            2 => (0.0, coeffs[0], coeffs[1]),
            3 => (coeffs[0], coeffs[1], coeffs[2]),
            _ => {
                if coeffs[..n - 3].iter().any(|&v| v != 0.0) {
                    return Err(Error::parse(
                        line,
                        "cost polynomials above degree 2 are not supported",
                    ));
                }
                (coeffs[n - 3], coeffs[n - 2], coeffs[n - 1])
            }
        };
        generators.push(Generator {
            p0: r[1] / base,
            q0: r[2] / base,
            v_set: r[5],
            cost: GenCost {
                c2: c2 * base * base,
                c1: c1 * base,
                c0,
                p_min: r[9] / base,
                p_max: r[8] / base,
                q_min: r[4] / base,
                q_max: r[3] / base,
            },
            machine: spec.system_params(id, r[8], base),
        });
    }
    spec.check_buses(gens.iter().map(|&(id, _)| id))?;

    let case = NetworkCase {
        name: if raw.name.is_empty() {
            "case".into()
        } else {
            raw.name.clone()
        },
        base_mva: base,
        buses,
        branches,
        generators,
        slack,
    };
    case.validate()?;
    Ok(case)
}

/// The file value that converts back to `target` exactly, searched in the
/// ulp neighbourhood of `guess`.
fn preimage(target: f64, guess: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if !guess.is_finite() || forward(guess) == target {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..64 {
        up = up.next_up();
        down = down.next_down();
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
    }
    guess
}

/// Serializes a case back to MATPOWER text, buses in internal order.
pub fn write_case(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let mw = |v: f64| preimage(v, v * base, |w| w / base);
    let deg = |v: f64| preimage(v, v.to_degrees(), f64::to_radians);
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", case.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {:?};", base);

    s.push_str(
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n",
    );
    for b in &case.buses {
        let ty = match b.kind {
            BusKind::Slack => 3,
            BusKind::Generator => 2,
            BusKind::Load => 1,
        };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?};",
            b.id,
            ty,
            mw(b.p_load0),
            mw(b.q_load0),
            mw(b.shunt_g),
            mw(b.shunt_b),
            b.area,
            b.v0,
            deg(b.theta0),
            b.base_kv,
            b.v_max,
            b.v_min
        );
    }
    s.push_str("];\n\n");

    s.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
    for (i, g) in case.generators.iter().enumerate() {
        let c = &g.cost;
        let _ = writeln!(
            s,
            "\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?};",
            case.buses[i].id,
            mw(g.p0),
            mw(g.q0),
            mw(c.q_max),
            mw(c.q_min),
            g.v_set,
            base,
            mw(c.p_max),
            mw(c.p_min)
        );
    }
    s.push_str("];\n\n");

    s.push_str(
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\nmpc.branch = [\n",
    );
    for br in &case.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0\t0\t0\t{:?}\t{:?}\t1;",
            case.buses[br.from].id,
            case.buses[br.to].id,
            br.series_r,
            br.series_x,
            br.charging_b,
            br.tap_ratio,
            deg(br.phase_shift)
        );
    }
    s.push_str("];\n\n");

    s.push_str("mpc.gencost = [\n");
    for g in &case.generators {
        let c = &g.cost;
        let _ = writeln!(
            s,
            "\t2\t0\t0\t3\t{:?}\t{:?}\t{:?};",
            preimage(c.c2, c.c2 / (base * base), |w| w * base * base),
            preimage(c.c1, c.c1 / base, |w| w * base),
            c.c0
        );
    }
    s.push_str("];\n");
    s
}

/// Serializes the machine data of every generator as a machine file.
pub fn write_machines(case: &NetworkCase) -> String {
    let mut s = String::from("base = system\n\n");
    for (i, g) in case.generators.iter().enumerate() {
        let m = &g.machine;
        let _ = writeln!(s, "[bus {}]", case.buses[i].id);
        let _ = writeln!(s, "M = {:?}", m.inertia);
        let _ = writeln!(s, "D = {:?}", m.damping);
        let _ = writeln!(s, "tau_d = {:?}", m.tau_d);
        let _ = writeln!(s, "tau_c = {:?}", m.tau_c);
        let _ = writeln!(s, "x_d = {:?}", m.x_d);
        let _ = writeln!(s, "x_q = {:?}", m.x_q);
        let _ = writeln!(s, "x_d_prime = {:?}", m.x_d_prime);
        let _ = writeln!(s, "R_droop = {:?}", m.droop);
        s.push('\n');
    }
    s
}
