//! Linearized OPF, the ALQR-OPF alternation and the decoupled baseline.

mod qp;

pub use qp::{solve_qp, QpOptions, QpProblem, QpSolution};

use std::fmt;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};

use crate::dae::{PowerSystem, SystemPoint};
use crate::error::{Error, Result, StageContext};
use crate::linalg::{norm_inf, quad_form};
use crate::linearize::{linearize, LinearizedSystem};
use crate::lqr::{build_qr, estimate_control_cost, solve_care, CostWeightConfig, RiccatiSolution};
use crate::steady_state::{equilibrium, Setpoints};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchConfig {
    pub weights: CostWeightConfig,
    pub k_max: usize,
    pub qp: QpOptions,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            weights: CostWeightConfig::default(),
            k_max: 2,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Alqr,
    Baseline,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Alqr => "ALQR-OPF",
            Method::Baseline => "OPF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Steady-state decision `z^s = (x^s, a^s, u^s)` of the linearized OPF.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateDecision {
    pub x: DVector<f64>,
    pub a: DVector<f64>,
    pub u: DVector<f64>,
}

impl SteadyStateDecision {
    /// Infinity norms of the linearized differential and algebraic residuals.
    pub fn linear_residuals(&self, lin: &LinearizedSystem, dd: &DVector<f64>) -> (f64, f64) {
        let z0 = &lin.base;
        let dx = &self.x - &z0.x;
        let da = &self.a - &z0.a;
        let du = &self.u - &z0.u;
        let rg = &lin.g_x * &dx + &lin.g_a * &da + &lin.g_u * &du;
        let rh = &lin.h_x * &dx + &lin.h_a * &da - dd;
        (norm_inf(&rg), norm_inf(&rh))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinOpfSolution {
    pub z: SteadyStateDecision,
    /// Generation cost `c(a^s)`.
    pub steady_cost: f64,
    pub qp_iterations: usize,
}

/// One pass of the alternation.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    pub steady_cost: f64,
    pub care_residual: f64,
    pub qp_iterations: usize,
    pub best_objective: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "k={} objective={:.6} steady_cost={:.6} care_residual={:.3e} qp_iterations={} best={:.6}",
            self.k, self.objective, self.steady_cost, self.care_residual, self.qp_iterations, self.best_objective
        )
    }
}

#[derive(Debug, Clone)]
pub struct DispatchSolution {
    pub method: Method,
    pub z_s: SteadyStateDecision,
    /// Nonlinear equilibrium recovered from the setpoints of `z_s`.
    pub z_eq: SystemPoint,
    /// Riccati matrix used in `objective`.
    pub p_objective: DMatrix<f64>,
    /// `c(a^s) + (T/2)(x^s − x⁰)ᵀ P (x^s − x⁰)` with `P = p_objective`.
    pub objective: f64,
    /// Generation cost at `a^s`.
    pub steady_cost_linear: f64,
    /// Generation cost at the recovered equilibrium.
    pub steady_cost: f64,
    /// Controller for simulation: CARE with the model and weights at `z^eq`.
    pub controller: RiccatiSolution,
    /// `(T/2)(x^eq − x⁰)ᵀ P (x^eq − x⁰)` with the controller's `P`.
    pub estimated_control_cost: f64,
    pub log: Vec<IterationRecord>,
}

fn generation_cost(sys: &PowerSystem, a: &DVector<f64>) -> f64 {
    let l = sys.layout;
    let p: Vec<f64> = (0..l.g).map(|i| a[l.pg(i)]).collect();
    sys.case.generation_cost(&p)
}

/// Linearized OPF around `lin.base`, optionally with the LQR term
/// `(T/2)(x − x⁰)ᵀP(x − x⁰)`. Solved in deviation variables `z − z⁰`.
pub fn solve_linopf(
    sys: &PowerSystem,
    lin: &LinearizedSystem,
    dd: &DVector<f64>,
    p: Option<&DMatrix<f64>>,
    t_lqr: f64,
    qp: &QpOptions,
) -> Result<LinOpfSolution> {
    let l = sys.layout;
    let (nx, na, nu) = (l.nx(), l.na(), l.nu());
    let nz = nx + na + nu;
    let z0 = &lin.base;
    if dd.len() != l.nh() {
        return Err(Error::Dimension(format!(
            "load step of length {}",
            dd.len()
        )));
    }
    let ia = nx; // offset of a in z
    let iu = nx + na;

    let mut h = DMatrix::zeros(nz, nz);
    let mut f = DVector::zeros(nz);
    for (i, gen) in sys.case.generators.iter().enumerate() {
        let c = &gen.cost;
        let k = ia + l.pg(i);
        let p0 = z0.a[l.pg(i)];
        h[(k, k)] = 2.0 * c.c2;
        f[k] = 2.0 * c.c2 * p0 + c.c1;
    }
    if let Some(p) = p {
        if p.shape() != (nx, nx) {
            return Err(Error::Dimension("Riccati matrix".into()));
        }
        let mut block = h.view_mut((0, 0), (nx, nx));
        block += p * t_lqr;
    }

    let slack = sys.case.slack;
    let neq = nx + l.nh() + 1;
    let mut a_eq = DMatrix::zeros(neq, nz);
    let mut b_eq = DVector::zeros(neq);
    a_eq.view_mut((0, 0), (nx, nx)).copy_from(&lin.g_x);
    a_eq.view_mut((0, ia), (nx, na)).copy_from(&lin.g_a);
    a_eq.view_mut((0, iu), (nx, nu)).copy_from(&lin.g_u);
    a_eq.view_mut((nx, 0), (l.nh(), nx)).copy_from(&lin.h_x);
    a_eq.view_mut((nx, ia), (l.nh(), na)).copy_from(&lin.h_a);
    b_eq.rows_mut(nx, l.nh()).copy_from(dd);
    a_eq[(neq - 1, ia + l.theta(slack))] = 1.0;

    let mut lb = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(nz, f64::INFINITY);
    for (i, gen) in sys.case.generators.iter().enumerate() {
        let c = &gen.cost;
        let (kp, kq) = (ia + l.pg(i), ia + l.qg(i));
        lb[kp] = c.p_min - z0.a[l.pg(i)];
        ub[kp] = c.p_max - z0.a[l.pg(i)];
        lb[kq] = c.q_min - z0.a[l.qg(i)];
        ub[kq] = c.q_max - z0.a[l.qg(i)];
    }
    for (k, bus) in sys.case.buses.iter().enumerate() {
        let kv = ia + l.v(k);
        lb[kv] = bus.v_min - z0.a[l.v(k)];
        ub[kv] = bus.v_max - z0.a[l.v(k)];
    }

    let prob = QpProblem {
        h,
        f,
        a_eq,
        b_eq,
        lb,
        ub,
    };
    let sol = solve_qp(&prob, qp)?;
    let w = sol.x;
    let z = SteadyStateDecision {
        x: &z0.x + w.rows(0, nx),
        a: &z0.a + w.rows(ia, na),
        u: &z0.u + w.rows(iu, nu),
    };
    let steady_cost = generation_cost(sys, &z.a);
    Ok(LinOpfSolution {
        z,
        steady_cost,
        qp_iterations: sol.iterations,
    })
}

/// Recovers a nonlinear equilibrium for load `d_s` from the voltage and
/// dispatch setpoints of `z_s`; the slack generator absorbs the losses.
pub fn extract_equilibrium(
    sys: &PowerSystem,
    z_s: &SteadyStateDecision,
    d_s: &DVector<f64>,
) -> Result<SystemPoint> {
    let sp = Setpoints::from_algebraic(sys, &z_s.a);
    equilibrium(sys, d_s, &sp, Some(&z_s.a))
}

fn weights_care(
    sys: &PowerSystem,
    lin: &LinearizedSystem,
    a: &DVector<f64>,
    w: &CostWeightConfig,
) -> Result<RiccatiSolution> {
    let qr = build_qr(sys, a, w)?;
    solve_care(&lin.a, &lin.b, &qr.q, &qr.r)
}

fn lqr_objective(
    steady: f64,
    p: &DMatrix<f64>,
    x: &DVector<f64>,
    x0: &DVector<f64>,
    t_lqr: f64,
) -> f64 {
    steady + 0.5 * t_lqr * quad_form(p, &(x - x0))
}

fn finish(
    sys: &PowerSystem,
    lin: &LinearizedSystem,
    method: Method,
    best: (LinOpfSolution, DMatrix<f64>, f64),
    d_s: &DVector<f64>,
    cfg: &DispatchConfig,
    log: Vec<IterationRecord>,
) -> Result<DispatchSolution> {
    let (sol, p_obj, objective) = best;
    let z_eq = extract_equilibrium(sys, &sol.z, d_s).stage("setpoint extraction")?;
    let lin_eq = linearize(sys, &z_eq).stage("linearization at the new equilibrium")?;
    let controller =
        weights_care(sys, &lin_eq, &z_eq.a, &cfg.weights).stage("controller synthesis")?;
    let est = estimate_control_cost(&controller.p, &z_eq.x, &lin.base.x, cfg.weights.t_lqr);
    Ok(DispatchSolution {
        method,
        steady_cost: generation_cost(sys, &z_eq.a),
        steady_cost_linear: sol.steady_cost,
        z_s: sol.z,
        z_eq,
        p_objective: p_obj,
        objective,
        controller,
        estimated_control_cost: est,
        log,
    })
}

/// Alternates between the LQR-augmented linearized OPF and the Riccati
/// equation, keeping the iterate with the lowest objective.
pub fn alqr_opf(
    sys: &PowerSystem,
    lin: &LinearizedSystem,
    dd: &DVector<f64>,
    cfg: &DispatchConfig,
) -> Result<DispatchSolution> {
    cfg.weights.validate()?;
    if cfg.k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    let z0 = &lin.base;
    let t = cfg.weights.t_lqr;
    let mut p_prev = weights_care(sys, lin, &z0.a, &cfg.weights)
        .stage("initial Riccati solve")?
        .p;

    let mut best: Option<(LinOpfSolution, DMatrix<f64>, f64)> = None;
    let mut log = Vec::new();
    for k in 1..=cfg.k_max {
        let step = solve_linopf(sys, lin, dd, Some(&p_prev), t, &cfg.qp)
            .and_then(|sol| weights_care(sys, lin, &sol.z.a, &cfg.weights).map(|care| (sol, care)));
        let (sol, care) = match step {
            Ok(v) => v,
            Err(e) if best.is_some() => {
                warn!("ALQR-OPF iteration {k} failed ({e}); keeping the best iterate");
                break;
            }
            Err(e) => return Err(e.at_stage(format!("ALQR-OPF iteration {k}"))),
        };
        let obj = lqr_objective(sol.steady_cost, &care.p, &sol.z.x, &z0.x, t);
        let best_obj = best.as_ref().map_or(f64::INFINITY, |b| b.2);
        let record = IterationRecord {
            k,
            objective: obj,
            steady_cost: sol.steady_cost,
            care_residual: care.residual,
            qp_iterations: sol.qp_iterations,
            best_objective: obj.min(best_obj),
        };
        info!("ALQR-OPF {record}");
        log.push(record);
        p_prev = care.p.clone();
        if obj < best_obj {
            best = Some((sol, care.p, obj));
        }
    }
    let best = best.expect("at least one iterate");
    finish(sys, lin, Method::Alqr, best, &(&z0.d + dd), cfg, log)
}

/// Linearized OPF on generation cost alone, followed by the same setpoint
/// extraction and controller synthesis. The reported objective adds the LQR
/// term with the Riccati matrix of `z⁰` for comparison.
pub fn baseline_opf(
    sys: &PowerSystem,
    lin: &LinearizedSystem,
    dd: &DVector<f64>,
    cfg: &DispatchConfig,
) -> Result<DispatchSolution> {
    cfg.weights.validate()?;
    let z0 = &lin.base;
    let t = cfg.weights.t_lqr;
    let sol = solve_linopf(sys, lin, dd, None, t, &cfg.qp).stage("baseline OPF")?;
    let p0 = weights_care(sys, lin, &z0.a, &cfg.weights)
        .stage("initial Riccati solve")?
        .p;
    let obj = lqr_objective(sol.steady_cost, &p0, &sol.z.x, &z0.x, t);
    let log = vec![IterationRecord {
        k: 1,
        objective: obj,
        steady_cost: sol.steady_cost,
        care_residual: f64::NAN,
        qp_iterations: sol.qp_iterations,
        best_objective: obj,
    }];
    finish(
        sys,
        lin,
        Method::Baseline,
        (sol, p0, obj),
        &(&z0.d + dd),
        cfg,
        log,
    )
}
