mod common;

use common::{fixture, two_bus_text, Fixture};
use gridlqr::dae::PowerSystem;
use gridlqr::data::BUNDLED_CASES;
use gridlqr::dispatch::{alqr_opf, baseline_opf, solve_linopf, DispatchConfig, Method, QpOptions};
use gridlqr::linalg::{norm_inf, quad_form};
use gridlqr::linearize::linearize;
use gridlqr::lqr::{build_qr, solve_care, CostWeightConfig};
use gridlqr::netcase::parse_case;
use gridlqr::simulator::apply_step_load;
use gridlqr::steady_state::{base_point, equilibrium_residual};
use gridlqr::Error;
use nalgebra::{DMatrix, DVector};

fn step(f: &Fixture) -> DVector<f64> {
    apply_step_load(&f.sys, &f.z0.d, 0.1, 0.9).unwrap().2
}

fn p_at_base(f: &Fixture, weights: &CostWeightConfig) -> DMatrix<f64> {
    let w = build_qr(&f.sys, &f.z0.a, weights).unwrap();
    solve_care(&f.lin.a, &f.lin.b, &w.q, &w.r).unwrap().p
}

#[test]
fn zero_riccati_matrix_equals_no_lqr_term() {
    let f = fixture("case9");
    let dd = step(&f);
    let qp = QpOptions::default();
    let zero = DMatrix::zeros(f.sys.layout.nx(), f.sys.layout.nx());
    let with = solve_linopf(&f.sys, &f.lin, &dd, Some(&zero), 1000.0, &qp).unwrap();
    let without = solve_linopf(&f.sys, &f.lin, &dd, None, 1000.0, &qp).unwrap();
    assert!(norm_inf(&(&with.z.a - &without.z.a)) < 1e-8);
    assert!(norm_inf(&(&with.z.x - &without.z.x)) < 1e-8);
    assert!((with.steady_cost - without.steady_cost).abs() < 1e-8 * without.steady_cost);
}

#[test]
fn lqr_term_lowers_the_combined_objective() {
    let f = fixture("case9");
    let dd = step(&f);
    let weights = CostWeightConfig::default();
    let p = p_at_base(&f, &weights);
    let t = weights.t_lqr;
    let qp = QpOptions::default();
    let combined = |sol: &gridlqr::dispatch::LinOpfSolution| {
        sol.steady_cost + 0.5 * t * quad_form(&p, &(&sol.z.x - &f.z0.x))
    };
    let with = solve_linopf(&f.sys, &f.lin, &dd, Some(&p), t, &qp).unwrap();
    let without = solve_linopf(&f.sys, &f.lin, &dd, None, t, &qp).unwrap();
    assert!(
        combined(&with) < combined(&without),
        "{} vs {}",
        combined(&with),
        combined(&without)
    );
    assert!(without.steady_cost <= with.steady_cost + 1e-9);
}

#[test]
fn decisions_satisfy_linearized_model_and_limits() {
    for name in ["case9", "case14"] {
        let f = fixture(name);
        let dd = step(&f);
        let l = f.sys.layout;
        for sol in [
            alqr_opf(&f.sys, &f.lin, &dd, &DispatchConfig::default()).unwrap(),
            baseline_opf(&f.sys, &f.lin, &dd, &DispatchConfig::default()).unwrap(),
        ] {
            let (rg, rh) = sol.z_s.linear_residuals(&f.lin, &dd);
            assert!(
                rg <= 1e-7 && rh <= 1e-7,
                "{name} {}: {rg:e} {rh:e}",
                sol.method
            );
            let tol = 1e-8;
            for (i, gen) in f.sys.case.generators.iter().enumerate() {
                let c = &gen.cost;
                let (p, q) = (sol.z_s.a[l.pg(i)], sol.z_s.a[l.qg(i)]);
                assert!(p >= c.p_min - tol && p <= c.p_max + tol, "{name} p_g{i}");
                assert!(q >= c.q_min - tol && q <= c.q_max + tol, "{name} q_g{i}");
            }
            for (k, bus) in f.sys.case.buses.iter().enumerate() {
                let v = sol.z_s.a[l.v(k)];
                assert!(v >= bus.v_min - tol && v <= bus.v_max + tol, "{name} v{k}");
            }
            assert!(equilibrium_residual(&f.sys, &sol.z_eq).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn objective_identity() {
    let f = fixture("case14");
    let dd = step(&f);
    let cfg = DispatchConfig::default();
    for sol in [
        alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap(),
        baseline_opf(&f.sys, &f.lin, &dd, &cfg).unwrap(),
    ] {
        let expect = sol.steady_cost_linear
            + 0.5 * cfg.weights.t_lqr * quad_form(&sol.p_objective, &(&sol.z_s.x - &f.z0.x));
        assert!(
            (sol.objective - expect).abs() <= 1e-8 * expect.abs().max(1.0),
            "{}",
            sol.method
        );
    }
}

#[test]
fn best_objective_never_increases() {
    for name in BUNDLED_CASES {
        let f = fixture(name);
        let dd = step(&f);
        let cfg = DispatchConfig {
            k_max: 4,
            ..DispatchConfig::default()
        };
        let sol = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
        assert_eq!(sol.log.len(), 4);
        for (k, w) in sol.log.windows(2).enumerate() {
            assert!(
                w[1].best_objective <= w[0].best_objective,
                "{name} step {k}"
            );
        }
        let best = sol
            .log
            .iter()
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sol.objective, best);
        for r in &sol.log {
            assert!(r.care_residual <= 1e-8, "{name} iteration {}", r.k);
        }
    }
}

#[test]
fn constant_weights_make_the_second_iteration_repeat_the_first() {
    let f = fixture("case9");
    let dd = step(&f);
    let mut cfg = DispatchConfig::default();
    cfg.weights.alpha = 0.0;
    cfg.k_max = 2;
    let two = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    cfg.k_max = 1;
    let one = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    let (o1, o2) = (two.log[0].objective, two.log[1].objective);
    assert!((o1 - o2).abs() <= 1e-7 * o1.abs().max(1.0), "{o1} vs {o2}");
    assert!(norm_inf(&(&two.z_s.a - &one.z_s.a)) <= 1e-7);
    assert!(norm_inf(&(&two.z_s.x - &one.z_s.x)) <= 1e-7);
}

#[test]
fn baseline_is_cheaper_in_steady_state_and_dearer_to_reach() {
    let f = fixture("case9");
    let dd = step(&f);
    let cfg = DispatchConfig::default();
    let alqr = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    let base = baseline_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    assert_eq!(alqr.method, Method::Alqr);
    assert_eq!(base.method, Method::Baseline);
    assert!(base.steady_cost_linear <= alqr.steady_cost_linear + 1e-9);
    assert!(alqr.estimated_control_cost < base.estimated_control_cost);
    assert!(alqr.objective < base.objective);
}

#[test]
fn dispatch_is_deterministic() {
    let f = fixture("case14");
    let dd = step(&f);
    let cfg = DispatchConfig::default();
    let a = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    let b = alqr_opf(&f.sys, &f.lin, &dd, &cfg).unwrap();
    assert_eq!(a.z_eq.a, b.z_eq.a);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn unchanged_load_keeps_the_operating_point() {
    let case = parse_case(&two_bus_text(50.0, 10.0, 0.0, 0.1, 0.0), "typical").unwrap();
    let sys = PowerSystem::new(case).unwrap();
    let z0 = base_point(&sys).unwrap();
    let lin = linearize(&sys, &z0).unwrap();
    let dd = DVector::zeros(sys.layout.nh());
    let sol = alqr_opf(&sys, &lin, &dd, &DispatchConfig::default()).unwrap();
    assert!(
        norm_inf(&(&sol.z_eq.a - &z0.a)) < 1e-4,
        "{}",
        norm_inf(&(&sol.z_eq.a - &z0.a))
    );
    assert!((sol.steady_cost - sys.case.generation_cost(&[z0.a[sys.layout.pg(0)]])).abs() < 1e-6);
    assert!(sol.estimated_control_cost < 1e-6);
}

#[test]
fn zero_iterations_are_rejected() {
    let f = fixture("case9");
    let dd = step(&f);
    let cfg = DispatchConfig {
        k_max: 0,
        ..DispatchConfig::default()
    };
    assert!(matches!(
        alqr_opf(&f.sys, &f.lin, &dd, &cfg),
        Err(Error::Config(_))
    ));
}
