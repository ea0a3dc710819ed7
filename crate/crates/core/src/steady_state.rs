//! Load flow and generator initialization: turns setpoints into a full
//! equilibrium `z^eq = (x, a, u)`.

use log::debug;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::dae::{damped_newton, PowerSystem, SystemPoint};
use crate::error::{Error, Result};
use crate::linalg::norm_inf;

pub const LOAD_FLOW_TOL: f64 = 1e-10;
const LOAD_FLOW_MAX_ITER: usize = 30;

/// Load-flow setpoints: voltage at every generator bus, real power at every
/// non-slack generator and the slack angle. The slack entry of `p_gen` is
/// ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoints {
    pub v_gen: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub theta_slack: f64,
}

impl Setpoints {
    /// Setpoints read off an algebraic vector.
    pub fn from_algebraic(sys: &PowerSystem, a: &DVector<f64>) -> Self {
        let l = sys.layout;
        Setpoints {
            v_gen: (0..l.g).map(|i| a[l.v(i)]).collect(),
            p_gen: (0..l.g).map(|i| a[l.pg(i)]).collect(),
            theta_slack: a[l.theta(sys.case.slack)],
        }
    }

    /// The dispatch and voltage setpoints stored in the case file.
    pub fn from_case(sys: &PowerSystem) -> Self {
        let c = &sys.case;
        Setpoints {
            v_gen: c.generators.iter().map(|g| g.v_set).collect(),
            p_gen: c.generators.iter().map(|g| g.p0).collect(),
            theta_slack: c.buses[c.slack].theta0,
        }
    }
}

/// Newton–Raphson load flow. Unknowns are every non-slack angle and every
/// load-bus voltage; slack real power and all generator reactive powers are
/// recovered afterwards. Starts from `guess` when given and retries once
/// from a flat start.
pub fn load_flow(
    sys: &PowerSystem,
    d: &DVector<f64>,
    sp: &Setpoints,
    guess: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let l = sys.layout;
    if sp.v_gen.len() != l.g || sp.p_gen.len() != l.g || d.len() != l.nh() {
        return Err(Error::Dimension("load-flow setpoints".into()));
    }
    if let Some(a0) = guess {
        match solve_flow(sys, d, sp, a0) {
            Ok(a) => return Ok(a),
            Err(e) => debug!("load flow from guess failed ({e}); retrying from flat start"),
        }
    }
    let mut flat = DVector::zeros(l.na());
    for k in 0..l.n {
        flat[l.v(k)] = 1.0;
        flat[l.theta(k)] = sp.theta_slack;
    }
    solve_flow(sys, d, sp, &flat)
}

fn solve_flow(
    sys: &PowerSystem,
    d: &DVector<f64>,
    sp: &Setpoints,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let l = sys.layout;
    let slack = sys.case.slack;
    let (p_load, q_load) = sys.demands(d);

    let th_idx: Vec<usize> = (0..l.n).filter(|&k| k != slack).collect();
    let v_idx: Vec<usize> = (l.g..l.n).collect();
    let nth = th_idx.len();

    let assemble = |z: &DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; l.n];
        let mut th = vec![0.0; l.n];
        v[..l.g].copy_from_slice(&sp.v_gen);
        th[slack] = sp.theta_slack;
        for (c, &k) in th_idx.iter().enumerate() {
            th[k] = z[c];
        }
        for (c, &k) in v_idx.iter().enumerate() {
            v[k] = z[nth + c];
        }
        (v, th)
    };

    let residual = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let (v, th) = assemble(z);
        let (p, q) = sys.injections(&v, &th);
        let mut r = DVector::zeros(nth + v_idx.len());
        for (c, &k) in th_idx.iter().enumerate() {
            let pg = if k < l.g { sp.p_gen[k] } else { 0.0 };
            r[c] = p[k] - pg + p_load[k];
        }
        for (c, &k) in v_idx.iter().enumerate() {
            r[nth + c] = q[k] + q_load[k];
        }
        Ok(r)
    };

    let x_dummy = DVector::zeros(l.nx());
    let jacobian = |z: &DVector<f64>| -> DMatrix<f64> {
        let (v, th) = assemble(z);
        let mut a = DVector::zeros(l.na());
        for k in 0..l.n {
            a[l.v(k)] = v[k];
            a[l.theta(k)] = th[k];
        }
        let full = sys.h_a(&x_dummy, &a);
        let rows: Vec<usize> = th_idx
            .iter()
            .map(|&k| l.p_bal(k))
            .chain(v_idx.iter().map(|&k| l.q_bal(k)))
            .collect();
        let cols: Vec<usize> = th_idx
            .iter()
            .map(|&k| l.theta(k))
            .chain(v_idx.iter().map(|&k| l.v(k)))
            .collect();
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| full[(rows[i], cols[j])])
    };

    let mut z0 = DVector::zeros(nth + v_idx.len());
    for (c, &k) in th_idx.iter().enumerate() {
        z0[c] = start[l.theta(k)];
    }
    for (c, &k) in v_idx.iter().enumerate() {
        let v = start[l.v(k)];
        z0[nth + c] = if v > 0.0 { v } else { 1.0 };
    }

    let (z, iters) = damped_newton(
        "load flow",
        z0,
        residual,
        jacobian,
        LOAD_FLOW_TOL,
        LOAD_FLOW_MAX_ITER,
    )?;
    debug!("load flow converged in {iters} iterations");

    let (v, th) = assemble(&z);
    let (p, q) = sys.injections(&v, &th);
    let mut a = DVector::zeros(l.na());
    for k in 0..l.n {
        a[l.v(k)] = v[k];
        a[l.theta(k)] = th[k];
    }
    for i in 0..l.g {
        a[l.pg(i)] = if i == slack {
            p[i] + p_load[i]
        } else {
            sp.p_gen[i]
        };
        a[l.qg(i)] = q[i] + q_load[i];
    }
    Ok(a)
}

/// Generator states and controls that hold the machines at rest for the
/// given algebraic point.
pub fn init_generators(
    sys: &PowerSystem,
    a: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let l = sys.layout;
    let ws = sys.omega_s();
    let mut x = DVector::zeros(l.nx());
    let mut u = DVector::zeros(l.nu());
    for (i, gen) in sys.case.generators.iter().enumerate() {
        let m = &gen.machine;
        let (p, q, v, th) = (a[l.pg(i)], a[l.qg(i)], a[l.v(i)], a[l.theta(i)]);
        let (phi, e) = stator_solve(p, q, v, m.x_d_prime, m.x_q)?;
        let c = (m.x_d - m.x_d_prime) / m.x_d_prime;
        x[l.delta(i)] = th + phi;
        x[l.omega(i)] = ws;
        x[l.emf(i)] = e;
        x[l.mech(i)] = p;
        u[l.r(i)] = p;
        u[l.f(i)] = (m.x_d / m.x_d_prime) * e - c * v * phi.cos();
    }
    Ok((x, u))
}

/// Solves the two stator equations for `(φ, e)` given `(p, q, v)`.
fn stator_solve(p: f64, q: f64, v: f64, xdp: f64, xq: f64) -> Result<(f64, f64)> {
    let k1 = (xdp - xq) / (2.0 * xq * xdp);
    let k2 = (xdp + xq) / (2.0 * xq * xdp);
    let mut phi = (p * xq).atan2(v * v + q * xq);
    let mut e = (q + k2 * v * v - k1 * v * v * (2.0 * phi).cos()) * xdp / (v * phi.cos());

    let f = |phi: f64, e: f64| {
        Vector2::new(
            e * v * phi.sin() / xdp + k1 * v * v * (2.0 * phi).sin() - p,
            e * v * phi.cos() / xdp - k2 * v * v + k1 * v * v * (2.0 * phi).cos() - q,
        )
    };
    let mut r = f(phi, e);
    for _ in 0..50 {
        if r.amax() <= 1e-13 {
            return Ok((phi, e));
        }
        let j = Matrix2::new(
            e * v * phi.cos() / xdp + 2.0 * k1 * v * v * (2.0 * phi).cos(),
            v * phi.sin() / xdp,
            -e * v * phi.sin() / xdp - 2.0 * k1 * v * v * (2.0 * phi).sin(),
            v * phi.cos() / xdp,
        );
        let step = j.lu().solve(&(-r)).ok_or(Error::SingularJacobian {
            what: "generator initialization",
            condition: f64::INFINITY,
        })?;
        phi += step[0];
        e += step[1];
        r = f(phi, e);
    }
    if r.amax() <= 1e-11 {
        return Ok((phi, e));
    }
    Err(Error::NonConvergence {
        what: "generator initialization",
        iterations: 50,
        residual: r.amax(),
    })
}

/// Full equilibrium for load `d` and the given setpoints.
pub fn equilibrium(
    sys: &PowerSystem,
    d: &DVector<f64>,
    sp: &Setpoints,
    guess: Option<&DVector<f64>>,
) -> Result<SystemPoint> {
    let a = load_flow(sys, d, sp, guess)?;
    let (x, u) = init_generators(sys, &a)?;
    Ok(SystemPoint {
        x,
        a,
        u,
        d: d.clone(),
    })
}

/// Operating point of the case file: its dispatch and voltage setpoints at
/// base load.
pub fn base_point(sys: &PowerSystem) -> Result<SystemPoint> {
    let l = sys.layout;
    let mut guess = DVector::zeros(l.na());
    for (k, b) in sys.case.buses.iter().enumerate() {
        guess[l.v(k)] = if b.v0 > 0.0 { b.v0 } else { 1.0 };
        guess[l.theta(k)] = b.theta0;
    }
    equilibrium(
        sys,
        &sys.base_load(),
        &Setpoints::from_case(sys),
        Some(&guess),
    )
}

/// `‖g(z)‖∞ + ‖h(z) − d‖∞`
pub fn equilibrium_residual(sys: &PowerSystem, z: &SystemPoint) -> Result<f64> {
    let g = sys.eval_g(&z.x, &z.a, &z.u)?;
    let h = sys.eval_h(&z.x, &z.a)? - &z.d;
    Ok(norm_inf(&g) + norm_inf(&h))
}
