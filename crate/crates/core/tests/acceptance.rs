//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{
    enumerate_active_sets, fixture, jacobian_errors, linear_cost, perturbed, random_care_problem,
    random_qp, rel_diff, rng,
};
use gridlqr::agc::AreaConfig;
use gridlqr::data::BUNDLED_CASES;
use gridlqr::dispatch::{alqr_opf, baseline_opf, solve_qp, DispatchConfig, Method, QpOptions};
use gridlqr::linalg::norm_inf;
use gridlqr::linearize::linearize;
use gridlqr::lqr::{build_qr, care_residual, solve_care, spectral_abscissa, CostWeightConfig};
use gridlqr::scenario::{
    run_scenario, sweep_alpha, ScenarioConfig, ScenarioOutput, ScenarioReport,
};
use gridlqr::simulator::{apply_step_load, simulate, ControlLaw, ControllerKind, SimConfig};
use gridlqr::steady_state::equilibrium_residual;
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn jacobians() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for name in ["case9", "case14"] {
        let f = fixture(name);
        let mut r = rng(1);
        let mut points = vec![(f.z0.x.clone(), f.z0.a.clone(), f.z0.u.clone())];
        for _ in 0..3 {
            points.push((
                perturbed(&f.z0.x, &mut r, 0.1),
                perturbed(&f.z0.a, &mut r, 0.1),
                perturbed(&f.z0.u, &mut r, 0.1),
            ));
        }
        for (x, a, u) in &points {
            for (block, err) in jacobian_errors(&f.sys, x, a, u, 1e-6) {
                ensure!(err <= 1e-6, "{name} {block}: relative error {err:e}");
                worst = worst.max(err);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("max relative error {worst:.2e}, {secs:.2} s"))
}

fn care() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in BUNDLED_CASES {
        let f = fixture(name);
        let w =
            build_qr(&f.sys, &f.z0.a, &CostWeightConfig::default()).map_err(|e| e.to_string())?;
        let s = solve_care(&f.lin.a, &f.lin.b, &w.q, &w.r).map_err(|e| format!("{name}: {e}"))?;
        let res = care_residual(&f.lin.a, &f.lin.b, &w.q, &w.r, &s.p);
        let abscissa = spectral_abscissa(&(&f.lin.a + &f.lin.b * &s.k));
        ensure!(res <= 1e-8, "{name}: residual {res:e}");
        ensure!(abscissa < 0.0, "{name}: closed-loop abscissa {abscissa:e}");
        worst = worst.max(res);
    }
    let mut r = rng(40);
    let mut worst_random: f64 = 0.0;
    for trial in 0..100 {
        let n = r.gen_range(1..=40);
        let m = r.gen_range((n / 4).max(1)..=(n / 2).max(1));
        let (a, b, q, rr) = random_care_problem(&mut r, n, m);
        let s = solve_care(&a, &b, &q, &rr).map_err(|e| format!("random pair {trial}: {e}"))?;
        ensure!(
            s.residual <= 1e-8,
            "random pair {trial} (n = {n}): residual {:e}",
            s.residual
        );
        ensure!(
            spectral_abscissa(&(&a + &b * &s.k)) < 0.0,
            "random pair {trial}: not stabilizing"
        );
        worst_random = worst_random.max(s.residual);
    }
    Ok(format!(
        "bundled residual ≤ {worst:.2e}, random residual ≤ {worst_random:.2e}"
    ))
}

fn scalar_riccati() -> Outcome {
    let one = DMatrix::from_element(1, 1, 1.0);
    let s = solve_care(&-&one, &one, &one, &one).map_err(|e| e.to_string())?;
    let err = (s.p[(0, 0)] - (2f64.sqrt() - 1.0)).abs();
    ensure!(err <= 1e-12, "P = {}, error {err:e}", s.p[(0, 0)]);
    Ok(format!("P = {:.15}", s.p[(0, 0)]))
}

fn cost_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in BUNDLED_CASES {
        let f = fixture(name);
        let (_, _, dd) = apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).map_err(|e| e.to_string())?;
        let cfg = DispatchConfig::default();
        for sol in [
            alqr_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?,
            baseline_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?,
        ] {
            let lin_eq = linearize(&f.sys, &sol.z_eq).map_err(|e| e.to_string())?;
            let w = build_qr(&f.sys, &sol.z_eq.a, &cfg.weights).map_err(|e| e.to_string())?;
            let k = &sol.controller.k;
            let closed = &lin_eq.a + &lin_eq.b * k;
            let weight = &w.q + k.transpose() * &w.r * k;
            let x0 = &f.z0.x - &sol.z_eq.x;
            let simulated = 0.5 * cfg.weights.t_lqr * linear_cost(&closed, &weight, &x0, 0.05, 1e4);
            let err = rel_diff(simulated, sol.estimated_control_cost);
            ensure!(
                err < 0.01,
                "{name} {}: {simulated} vs {}",
                sol.method,
                sol.estimated_control_cost
            );
            worst = worst.max(err);
        }
    }
    Ok(format!("max relative gap {worst:.2e}"))
}

fn equilibrium_consistency() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let sim = SimConfig {
        t_f: 10.0,
        ..SimConfig::default()
    };
    for name in BUNDLED_CASES {
        let f = fixture(name);
        let l = f.sys.layout;
        let (_, _, dd) = apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).map_err(|e| e.to_string())?;
        let cfg = DispatchConfig::default();
        for sol in [
            alqr_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?,
            baseline_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?,
        ] {
            let res = equilibrium_residual(&f.sys, &sol.z_eq).map_err(|e| e.to_string())?;
            ensure!(res <= 1e-8, "{name} {}: residual {res:e}", sol.method);
            worst_res = worst_res.max(res);
            let w = build_qr(&f.sys, &sol.z_eq.a, &cfg.weights).map_err(|e| e.to_string())?;
            let p_eq: Vec<f64> = (0..l.g).map(|i| sol.z_eq.a[l.pg(i)]).collect();
            let areas = AreaConfig::single_area(&f.sys, &p_eq, 1.0).map_err(|e| e.to_string())?;
            for law in [
                ControlLaw::Lqr(&sol.controller.k),
                ControlLaw::Agc(&areas, &sol.controller.k),
            ] {
                let kind = law.kind();
                let run = simulate(&f.sys, &sol.z_eq.x, &sol.z_eq.a, &sol.z_eq, law, &w, &sim)
                    .and_then(|r| r.into_result())
                    .map_err(|e| format!("{name} {} {kind}: {e}", sol.method))?;
                let tr = &run.trajectory;
                let drift = tr
                    .x
                    .iter()
                    .zip(&tr.a)
                    .map(|(x, a)| norm_inf(&(x - &sol.z_eq.x)).max(norm_inf(&(a - &sol.z_eq.a))))
                    .fold(0.0, f64::max);
                ensure!(
                    drift <= 1e-6,
                    "{name} {} {kind}: drift {drift:e}",
                    sol.method
                );
                worst_drift = worst_drift.max(drift);
            }
        }
    }
    Ok(format!(
        "residual ≤ {worst_res:.2e}, 10 s drift ≤ {worst_drift:.2e}"
    ))
}

fn step_totals() -> Outcome {
    let mut parts = Vec::new();
    for (name, p_mw, q_mvar) in [("case9", 31.50, 5.56), ("case14", 25.90, 3.56)] {
        let f = fixture(name);
        let base = f.sys.case.base_mva;
        let (_, _, dd) = apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).map_err(|e| e.to_string())?;
        let (dp, dq) = f.sys.demands(&(&f.z0.d + &dd));
        let (p0, q0) = f.sys.demands(&f.z0.d);
        let dp = (dp.iter().sum::<f64>() - p0.iter().sum::<f64>()) * base;
        let dq = (dq.iter().sum::<f64>() - q0.iter().sum::<f64>()) * base;
        let tol = 0.005 + 5e-5 * f.sys.case.total_load().1 * base;
        ensure!((dp - p_mw).abs() <= tol, "{name}: ΔP = {dp:.4} MW");
        ensure!((dq - q_mvar).abs() <= tol, "{name}: ΔQ = {dq:.4} MVAr");
        parts.push(format!("{name} {dp:.3} + j{dq:.3} MVA"));
    }
    Ok(parts.join(", "))
}

struct CaseRun {
    name: &'static str,
    out: Result<ScenarioOutput, String>,
    seconds: f64,
}

fn run_cases() -> Vec<CaseRun> {
    BUNDLED_CASES
        .iter()
        .map(|&name| {
            let cfg = ScenarioConfig {
                case: name.into(),
                ..ScenarioConfig::default()
            };
            let start = Instant::now();
            let out = run_scenario(&cfg).map_err(|e| e.to_string());
            CaseRun {
                name,
                out,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn row(
    out: &ScenarioOutput,
    method: Method,
    controller: ControllerKind,
) -> Result<&ScenarioReport, String> {
    out.reports
        .iter()
        .find(|r| r.method == method && r.controller == controller)
        .ok_or_else(|| format!("missing {method} / {controller} row"))
}

fn table_ordering(runs: &[CaseRun], controller: ControllerKind, check_runtime: bool) -> Outcome {
    let mut parts = Vec::new();
    for run in runs {
        let name = run.name;
        let out = run.out.as_ref().map_err(|e| format!("{name}: {e}"))?;
        let a = row(out, Method::Alqr, controller)?;
        let b = row(out, Method::Baseline, controller)?;
        ensure!(
            b.steady_state_cost <= a.steady_state_cost,
            "{name}: steady-state {} (baseline) > {} (ALQR)",
            b.steady_state_cost,
            a.steady_state_cost
        );
        ensure!(
            a.simulated_control_cost < b.simulated_control_cost,
            "{name}: control cost {} (ALQR) ≥ {} (baseline)",
            a.simulated_control_cost,
            b.simulated_control_cost
        );
        ensure!(
            a.total_cost < b.total_cost,
            "{name}: total {} (ALQR) ≥ {} (baseline)",
            a.total_cost,
            b.total_cost
        );
        ensure!(
            a.max_freq_dev_hz <= b.max_freq_dev_hz,
            "{name}: frequency deviation {} (ALQR) > {} (baseline)",
            a.max_freq_dev_hz,
            b.max_freq_dev_hz
        );
        if check_runtime {
            ensure!(run.seconds < 120.0, "{name}: {:.1} s", run.seconds);
        }
        parts.push(format!(
            "{name} total {:.2} < {:.2}",
            a.total_cost, b.total_cost
        ));
    }
    Ok(parts.join(", "))
}

fn iteration_guard() -> Outcome {
    for name in BUNDLED_CASES {
        let f = fixture(name);
        let (_, _, dd) = apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).map_err(|e| e.to_string())?;
        let cfg = DispatchConfig {
            k_max: 4,
            ..DispatchConfig::default()
        };
        let sol = alqr_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?;
        for w in sol.log.windows(2) {
            ensure!(
                w[1].best_objective <= w[0].best_objective,
                "{name}: o_best rose at k = {}",
                w[1].k
            );
        }
    }
    let f = fixture("case9");
    let (_, _, dd) = apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).map_err(|e| e.to_string())?;
    let mut cfg = DispatchConfig::default();
    cfg.weights.alpha = 0.0;
    cfg.k_max = 2;
    let two = alqr_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?;
    cfg.k_max = 1;
    let one = alqr_opf(&f.sys, &f.lin, &dd, &cfg).map_err(|e| e.to_string())?;
    let gap_obj =
        (two.log[0].objective - two.log[1].objective).abs() / two.log[0].objective.abs().max(1.0);
    let gap_z = norm_inf(&(&two.z_s.a - &one.z_s.a)).max(norm_inf(&(&two.z_s.x - &one.z_s.x)));
    ensure!(gap_obj <= 1e-7, "α = 0: objectives differ by {gap_obj:e}");
    ensure!(gap_z <= 1e-7, "α = 0: iterates differ by {gap_z:e}");
    Ok(format!("α = 0 iterate gap {gap_z:.2e}"))
}

fn qp_oracle() -> Outcome {
    let mut r = rng(50);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let n = r.gen_range(4..=12);
        let p = random_qp(&mut r, n, 3);
        let s = solve_qp(&p, &QpOptions::default()).map_err(|e| format!("QP {trial}: {e}"))?;
        let err = (&s.x - enumerate_active_sets(&p)).amax();
        ensure!(err <= 1e-7, "QP {trial} (n = {n}): {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("max deviation {worst:.2e}"))
}

fn step_halving() -> Outcome {
    let run = |dt: f64| -> Result<f64, String> {
        let cfg = ScenarioConfig {
            methods: vec![Method::Alqr],
            controllers: vec![ControllerKind::Lqr],
            sim: SimConfig {
                dt,
                ..SimConfig::default()
            },
            ..ScenarioConfig::default()
        };
        let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
        Ok(out.reports[0].simulated_control_cost)
    };
    let (coarse, fine) = (run(0.005)?, run(0.0025)?);
    let change = rel_diff(coarse, fine);
    ensure!(change < 0.005, "{coarse} vs {fine}");
    Ok(format!("{coarse:.4} vs {fine:.4} ({:.3}%)", 100.0 * change))
}

fn coupling_sweep() -> Outcome {
    let alphas = [0.0, 0.2, 0.4, 0.6, 0.8];
    let rows = sweep_alpha(&ScenarioConfig::default(), &alphas).map_err(|e| e.to_string())?;
    for w in rows.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        ensure!(
            q.alqr_simulated >= p.alqr_simulated,
            "ALQR column falls at α = {}",
            q.alpha
        );
        ensure!(
            q.baseline_simulated >= p.baseline_simulated,
            "baseline column falls at α = {}",
            q.alpha
        );
        ensure!(
            q.alqr_estimated >= p.alqr_estimated,
            "ALQR estimate falls at α = {}",
            q.alpha
        );
        ensure!(
            q.baseline_estimated >= p.baseline_estimated,
            "baseline estimate falls at α = {}",
            q.alpha
        );
    }
    for r in &rows {
        ensure!(
            r.alqr_simulated <= r.baseline_simulated,
            "α = {}: ALQR above baseline",
            r.alpha
        );
        ensure!(
            r.alqr_estimated <= r.baseline_estimated,
            "α = {}: ALQR estimate above baseline",
            r.alpha
        );
    }
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.alqr_simulated, r.baseline_simulated))
        .collect();
    Ok(cells.join(" "))
}

fn main() -> ExitCode {
    let runs = std::cell::OnceCell::new();
    let cases = || runs.get_or_init(run_cases);
    let criteria: Vec<(&str, Criterion)> = vec![
        ("Jacobian correctness", Box::new(jacobians)),
        ("CARE correctness", Box::new(care)),
        ("Scalar Riccati oracle", Box::new(scalar_riccati)),
        ("LQR cost identity", Box::new(cost_identity)),
        ("Equilibrium consistency", Box::new(equilibrium_consistency)),
        ("Load-step definition", Box::new(step_totals)),
        (
            "Table-I ordering (LQR)",
            Box::new(|| table_ordering(cases(), ControllerKind::Lqr, true)),
        ),
        (
            "Table-II ordering (AGC)",
            Box::new(|| table_ordering(cases(), ControllerKind::Agc, false)),
        ),
        ("Algorithm guard", Box::new(iteration_guard)),
        ("QP oracle equivalence", Box::new(qp_oracle)),
        ("Integrator convergence", Box::new(step_halving)),
        ("Coupling sweep", Box::new(coupling_sweep)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name} [{secs:.1} s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}. {name} [{secs:.1} s]: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
