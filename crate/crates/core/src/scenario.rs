//! End-to-end workflow: build the system, dispatch with ALQR-OPF and the
//! baseline OPF, simulate each setpoint under the chosen controllers and
//! assemble the reports.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::agc::{parse_partition, AreaConfig, DEFAULT_AGC_GAIN};
use crate::dae::{PowerSystem, SystemPoint};
use crate::data::load_case;
use crate::dispatch::{alqr_opf, baseline_opf, DispatchConfig, DispatchSolution, Method};
use crate::error::{Error, Result, StageContext};
use crate::linearize::{linearize, LinearizedSystem};
use crate::lqr::build_qr;
use crate::simulator::{
    apply_step_load, simulate, ControlLaw, ControllerKind, SimConfig, SimResult, Trajectory,
};
use crate::steady_state::base_point;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Case file path or bundled case name.
    pub case: String,
    /// Machine file path, or `None` for typical constants.
    pub machines: Option<String>,
    /// Area partition text (`bus_id area_id` lines); single area when absent.
    pub areas: Option<String>,
    pub step_frac: f64,
    pub power_factor: f64,
    pub dispatch: DispatchConfig,
    /// Integration settings; `t_lqr` is taken from `dispatch.weights`.
    pub sim: SimConfig,
    pub agc_gain: f64,
    pub methods: Vec<Method>,
    pub controllers: Vec<ControllerKind>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            case: "case9".into(),
            machines: None,
            areas: None,
            step_frac: 0.1,
            power_factor: 0.9,
            dispatch: DispatchConfig::default(),
            sim: SimConfig::default(),
            agc_gain: DEFAULT_AGC_GAIN,
            methods: vec![Method::Alqr, Method::Baseline],
            controllers: vec![ControllerKind::Lqr, ControllerKind::Agc],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dispatch.weights.validate()?;
        self.sim.validate()?;
        if self.methods.is_empty() || self.controllers.is_empty() {
            return Err(Error::Config(
                "at least one method and one controller are required".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the cost comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub case: String,
    pub method: Method,
    pub controller: ControllerKind,
    pub steady_state_cost: f64,
    pub estimated_control_cost: f64,
    pub simulated_control_cost: f64,
    /// Steady-state plus simulated control cost.
    pub total_cost: f64,
    pub max_freq_dev_hz: f64,
    pub max_volt_dev_pu: f64,
    pub steps: usize,
    /// Solver wall-times in seconds; kept out of the report CSV.
    pub dispatch_seconds: f64,
    pub simulation_seconds: f64,
}

/// Everything a scenario run produces.
#[derive(Debug)]
pub struct ScenarioOutput {
    pub sys: PowerSystem,
    pub z0: SystemPoint,
    pub lin: LinearizedSystem,
    pub d_s: DVector<f64>,
    pub dispatch: Vec<DispatchSolution>,
    pub reports: Vec<ScenarioReport>,
    /// Trajectory per report row, in the same order.
    pub trajectories: Vec<Trajectory>,
    /// External area ids for the ACE columns.
    pub area_ids: Vec<usize>,
}

/// The static part of a scenario: system, base point, linearization and load step.
pub struct Prepared {
    pub sys: PowerSystem,
    pub z0: SystemPoint,
    pub lin: LinearizedSystem,
    pub d_s: DVector<f64>,
    pub dd: DVector<f64>,
    pub bus_areas: Vec<usize>,
}

pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    let case = load_case(&cfg.case, cfg.machines.as_deref()).stage("loading case")?;
    let sys = PowerSystem::new(case).stage("building system")?;
    let z0 = base_point(&sys).stage("base load flow")?;
    let lin = linearize(&sys, &z0).stage("linearization")?;
    let (_, d_s, dd) = apply_step_load(&sys, &z0.d, cfg.step_frac, cfg.power_factor)?;
    let bus_areas = match &cfg.areas {
        Some(text) => parse_partition(&sys, text).stage("area partition")?,
        None => vec![1; sys.layout.n],
    };
    Ok(Prepared {
        sys,
        z0,
        lin,
        d_s,
        dd,
        bus_areas,
    })
}

fn dispatch(prep: &Prepared, method: Method, cfg: &DispatchConfig) -> Result<DispatchSolution> {
    match method {
        Method::Alqr => alqr_opf(&prep.sys, &prep.lin, &prep.dd, cfg),
        Method::Baseline => baseline_opf(&prep.sys, &prep.lin, &prep.dd, cfg),
    }
}

/// Simulates one dispatch solution under one controller.
pub fn simulate_solution(
    prep: &Prepared,
    sol: &DispatchSolution,
    controller: ControllerKind,
    cfg: &ScenarioConfig,
) -> Result<(SimResult, Vec<usize>)> {
    let sys = &prep.sys;
    let l = sys.layout;
    let weights = build_qr(sys, &sol.z_eq.a, &cfg.dispatch.weights)?;
    let p_eq: Vec<f64> = (0..l.g).map(|i| sol.z_eq.a[l.pg(i)]).collect();
    let areas = AreaConfig::new(sys, &prep.bus_areas, &p_eq, cfg.agc_gain)?;
    let law = match controller {
        ControllerKind::Lqr => ControlLaw::Lqr(&sol.controller.k),
        ControllerKind::Agc => ControlLaw::Agc(&areas, &sol.controller.k),
        ControllerKind::Open => ControlLaw::Open,
    };
    let sim = SimConfig {
        t_lqr: cfg.dispatch.weights.t_lqr,
        ..cfg.sim
    };
    let res = simulate(sys, &prep.z0.x, &prep.z0.a, &sol.z_eq, law, &weights, &sim)?;
    Ok((res, areas.area_ids.clone()))
}

/// Runs the full workflow. Dispatch problems and simulations run in
/// parallel; rows come back in `methods × controllers` order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let case_name = prep.sys.case.name.clone();

    let solved: Vec<Result<(DispatchSolution, f64)>> = cfg
        .methods
        .par_iter()
        .map(|&m| {
            let start = Instant::now();
            let sol = dispatch(&prep, m, &cfg.dispatch).stage(m.label())?;
            Ok((sol, start.elapsed().as_secs_f64()))
        })
        .collect();
    let solved: Vec<(DispatchSolution, f64)> = solved.into_iter().collect::<Result<_>>()?;
    for (sol, _) in &solved {
        info!(
            "{}: steady-state cost {:.4}, estimated control cost {:.4}",
            sol.method, sol.steady_cost, sol.estimated_control_cost
        );
    }

    let jobs: Vec<(usize, ControllerKind)> = (0..solved.len())
        .flat_map(|i| cfg.controllers.iter().map(move |&c| (i, c)))
        .collect();
    let runs: Vec<Result<(ScenarioReport, Trajectory, Vec<usize>)>> = jobs
        .par_iter()
        .map(|&(i, controller)| {
            let (sol, dispatch_seconds) = &solved[i];
            let label = format!("simulation ({}, {})", sol.method, controller);
            let start = Instant::now();
            let (res, area_ids) = simulate_solution(&prep, sol, controller, cfg).stage(&label)?;
            let elapsed = start.elapsed().as_secs_f64();
            let res = res.into_result().stage(&label)?;
            let report = ScenarioReport {
                case: case_name.clone(),
                method: sol.method,
                controller,
                steady_state_cost: sol.steady_cost,
                estimated_control_cost: sol.estimated_control_cost,
                simulated_control_cost: res.control_cost,
                total_cost: sol.steady_cost + res.control_cost,
                max_freq_dev_hz: res.max_freq_dev_hz,
                max_volt_dev_pu: res.max_volt_dev_pu,
                steps: res.steps,
                dispatch_seconds: *dispatch_seconds,
                simulation_seconds: elapsed,
            };
            Ok((report, res.trajectory, area_ids))
        })
        .collect();

    let mut reports = Vec::new();
    let mut trajectories = Vec::new();
    let mut area_ids = Vec::new();
    for run in runs {
        let (r, t, ids) = run?;
        reports.push(r);
        trajectories.push(t);
        area_ids = ids;
    }
    Ok(ScenarioOutput {
        sys: prep.sys,
        z0: prep.z0,
        lin: prep.lin,
        d_s: prep.d_s,
        dispatch: solved.into_iter().map(|(s, _)| s).collect(),
        reports,
        trajectories,
        area_ids,
    })
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "case",
    "method",
    "controller",
    "steady_state_cost",
    "control_est_cost",
    "control_cost",
    "total_cost",
    "max_freq_dev_hz",
    "max_volt_dev_pu",
    "steps",
    "status",
];

const TABLE_HEADERS: [&str; 9] = [
    "Case",
    "Method",
    "Controller",
    "Steady-state cost ($)",
    "Control est. cost ($)",
    "Control cost ($)",
    "Total ($)",
    "Max freq. dev. (Hz)",
    "Max volt. dev. (pu)",
];

/// Report rows as CSV (no wall-times, so output is reproducible).
pub fn write_report_csv<W: Write>(reports: &[ScenarioReport], mut w: W) -> Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.8},{:.8},{},ok",
            r.case,
            r.method.label(),
            r.controller.label(),
            r.steady_state_cost,
            r.estimated_control_cost,
            r.simulated_control_cost,
            r.total_cost,
            r.max_freq_dev_hz,
            r.max_volt_dev_pu,
            r.steps
        )?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write>(reports: &[ScenarioReport], mut w: W) -> Result<()> {
    writeln!(
        w,
        "case,method,controller,dispatch_seconds,simulation_seconds"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{:.4},{:.4}",
            r.case,
            r.method.label(),
            r.controller.label(),
            r.dispatch_seconds,
            r.simulation_seconds
        )?;
    }
    Ok(())
}

/// Aligned text table with the cost comparison column names.
pub fn format_report_table(reports: &[ScenarioReport]) -> String {
    let rows: Vec<[String; 9]> = reports
        .iter()
        .map(|r| {
            [
                r.case.clone(),
                r.method.label().to_string(),
                r.controller.label().to_string(),
                format!("{:.2}", r.steady_state_cost),
                format!("{:.2}", r.estimated_control_cost),
                format!("{:.2}", r.simulated_control_cost),
                format!("{:.2}", r.total_cost),
                format!("{:.4}", r.max_freq_dev_hz),
                format!("{:.4}", r.max_volt_dev_pu),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = TABLE_HEADERS.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let text: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, &w))| {
                if j < 3 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", text.join("  ").trim_end());
    };
    line(&mut out, &TABLE_HEADERS.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &rows {
        line(&mut out, row);
    }
    out
}

/// Control costs of both methods at one coupling coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub alqr_estimated: f64,
    pub alqr_simulated: f64,
    pub baseline_estimated: f64,
    pub baseline_simulated: f64,
}

/// Repeats the dispatch and an LQR simulation for every α.
pub fn sweep_alpha(cfg: &ScenarioConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::Config("no alpha values given".into()));
    }
    let mut base = cfg.clone();
    base.controllers = vec![ControllerKind::Lqr];
    base.validate()?;
    let prep = prepare(&base)?;
    alphas
        .par_iter()
        .map(|&alpha| {
            let mut c = base.clone();
            c.dispatch.weights.alpha = alpha;
            c.validate()?;
            let label = format!("alpha = {alpha}");
            let mut costs = [0.0; 4];
            for (j, method) in [Method::Alqr, Method::Baseline].into_iter().enumerate() {
                let sol = dispatch(&prep, method, &c.dispatch).stage(&label)?;
                let (res, _) =
                    simulate_solution(&prep, &sol, ControllerKind::Lqr, &c).stage(&label)?;
                let res = res.into_result().stage(&label)?;
                costs[2 * j] = sol.estimated_control_cost;
                costs[2 * j + 1] = res.control_cost;
            }
            Ok(SweepRow {
                alpha,
                alqr_estimated: costs[0],
                alqr_simulated: costs[1],
                baseline_estimated: costs[2],
                baseline_simulated: costs[3],
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "alpha,alqr_control_est_cost,alqr_control_cost,opf_control_est_cost,opf_control_cost"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.alpha, r.alqr_estimated, r.alqr_simulated, r.baseline_estimated, r.baseline_simulated
        )?;
    }
    Ok(())
}
