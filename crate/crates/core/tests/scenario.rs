use gridlqr::dispatch::Method;
use gridlqr::scenario::{
    format_report_table, run_scenario, sweep_alpha, write_report_csv, write_sweep_csv,
    ScenarioConfig, REPORT_COLUMNS,
};
use gridlqr::simulator::{ControllerKind, SimConfig};
use gridlqr::Error;

fn csv(cfg: &ScenarioConfig) -> String {
    let out = run_scenario(cfg).unwrap();
    let mut buf = Vec::new();
    write_report_csv(&out.reports, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn nine_bus_default_rows_and_ordering() {
    let out = run_scenario(&ScenarioConfig::default()).unwrap();
    assert_eq!(out.reports.len(), 4);
    let keys: Vec<(Method, ControllerKind)> = out
        .reports
        .iter()
        .map(|r| (r.method, r.controller))
        .collect();
    assert_eq!(
        keys,
        vec![
            (Method::Alqr, ControllerKind::Lqr),
            (Method::Alqr, ControllerKind::Agc),
            (Method::Baseline, ControllerKind::Lqr),
            (Method::Baseline, ControllerKind::Agc),
        ]
    );
    for c in 0..2 {
        let (alqr, base) = (&out.reports[c], &out.reports[c + 2]);
        assert!(alqr.total_cost <= base.total_cost, "{}", alqr.controller);
        assert!(
            base.steady_state_cost <= alqr.steady_state_cost,
            "{}",
            alqr.controller
        );
    }
    for r in &out.reports {
        assert!((r.total_cost - r.steady_state_cost - r.simulated_control_cost).abs() < 1e-9);
        assert_eq!(r.steps, 12_000);
    }
    assert_eq!(out.trajectories.len(), 4);
    assert_eq!(out.area_ids, vec![1]);
}

#[test]
fn identical_runs_give_identical_reports() {
    let cfg = ScenarioConfig {
        case: "case14".into(),
        sim: SimConfig {
            t_f: 5.0,
            ..SimConfig::default()
        },
        ..ScenarioConfig::default()
    };
    assert_eq!(csv(&cfg), csv(&cfg));
}

#[test]
fn short_horizon_report_is_well_formed() {
    let cfg = ScenarioConfig {
        sim: SimConfig {
            t_f: 0.1,
            dt: 0.005,
            ..SimConfig::default()
        },
        ..ScenarioConfig::default()
    };
    let text = csv(&cfg);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], REPORT_COLUMNS.join(","));
    assert_eq!(lines.len(), 5);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), REPORT_COLUMNS.len());
        assert_eq!(cells[9], "20");
        assert_eq!(cells[10], "ok");
        for c in &cells[3..9] {
            assert!(c.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn text_table_lists_every_row() {
    let cfg = ScenarioConfig {
        methods: vec![Method::Baseline],
        controllers: vec![ControllerKind::Agc],
        sim: SimConfig {
            t_f: 1.0,
            ..SimConfig::default()
        },
        ..ScenarioConfig::default()
    };
    let out = run_scenario(&cfg).unwrap();
    let table = format_report_table(&out.reports);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("Case"));
    assert!(lines[0].contains("Total ($)"));
    assert!(lines[2].contains("AGC"));
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = ScenarioConfig::default();
    cfg.methods.clear();
    assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
    let mut cfg = ScenarioConfig::default();
    cfg.dispatch.weights.alpha = 1.2;
    assert!(run_scenario(&cfg).is_err());
    let cfg = ScenarioConfig {
        case: "no_such_case".into(),
        ..ScenarioConfig::default()
    };
    assert!(run_scenario(&cfg).is_err());
    assert!(sweep_alpha(&ScenarioConfig::default(), &[]).is_err());
}

#[test]
fn sweep_rows_follow_the_requested_alphas() {
    let cfg = ScenarioConfig {
        sim: SimConfig {
            t_f: 20.0,
            ..SimConfig::default()
        },
        ..ScenarioConfig::default()
    };
    let rows = sweep_alpha(&cfg, &[0.0, 0.4]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].alpha, 0.0);
    assert_eq!(rows[1].alpha, 0.4);
    for r in &rows {
        assert!(r.alqr_estimated <= r.baseline_estimated);
        assert!(r.alqr_simulated > 0.0 && r.baseline_simulated > 0.0);
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("alpha,"));
}
