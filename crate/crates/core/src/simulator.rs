//! Closed-loop simulation of the nonlinear DAE under a step load change.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::agc::AreaConfig;
use crate::dae::{AlgebraicSolver, PowerSystem, SystemPoint};
use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::lqr::WeightMatrices;

pub const DEFAULT_DT: f64 = 0.005;
pub const DEFAULT_T_F: f64 = 60.0;

/// Step in the load: `Δp = fraction · p⁰` and `Δq = fraction · κ · q⁰`, where
/// `κ = tan(acos pf)` rounded to three decimals (0.484 at pf 0.9).
///
/// Returns `(d⁰, d^s, Δd)`.
pub fn apply_step_load(
    sys: &PowerSystem,
    d0: &DVector<f64>,
    fraction: f64,
    pf: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::Config(format!(
            "step fraction must be nonnegative, got {fraction}"
        )));
    }
    if !(pf > 0.0 && pf <= 1.0) {
        return Err(Error::Config(format!(
            "power factor must lie in (0, 1], got {pf}"
        )));
    }
    let kappa = (pf.acos().tan() * 1000.0).round() / 1000.0;
    let (p, q) = sys.demands(d0);
    let dp: Vec<f64> = p.iter().map(|v| fraction * v).collect();
    let dq: Vec<f64> = q.iter().map(|v| fraction * kappa * v).collect();
    let dd = sys.load_vector(&dp, &dq);
    Ok((d0.clone(), d0 + &dd, dd))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    Lqr,
    Agc,
    Open,
}

impl ControllerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::Lqr => "LQR",
            ControllerKind::Agc => "AGC",
            ControllerKind::Open => "open-loop",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lqr" => Ok(ControllerKind::Lqr),
            "agc" => Ok(ControllerKind::Agc),
            "open" | "open-loop" | "none" => Ok(ControllerKind::Open),
            other => Err(Error::Config(format!("unknown controller '{other}'"))),
        }
    }
}

/// Control law acting on the governor reference `r` and field voltage `f`.
#[derive(Debug, Clone, Copy)]
pub enum ControlLaw<'a> {
    /// `u = u_eq + K (x − x_eq)`
    Lqr(&'a DMatrix<f64>),
    /// AGC on `r`; `f` follows the field-voltage rows of the LQR law.
    ///
    /// The AGC restores frequency but not the common rotor angle, so under
    /// this law angles are measured from `δ_eq` shifted by the
    /// center-of-inertia angle deviation, both in the `f` feedback and in
    /// the cost.
    Agc(&'a AreaConfig, &'a DMatrix<f64>),
    /// `u = u_eq`
    Open,
}

impl ControlLaw<'_> {
    pub fn kind(&self) -> ControllerKind {
        match self {
            ControlLaw::Lqr(_) => ControllerKind::Lqr,
            ControlLaw::Agc(..) => ControllerKind::Agc,
            ControlLaw::Open => ControllerKind::Open,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_f: f64,
    /// Store every n-th step (the last step is always stored).
    pub decimation: usize,
    pub t_lqr: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            t_f: DEFAULT_T_F,
            decimation: 10,
            t_lqr: 1000.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_f >= self.dt) || !self.t_f.is_finite() {
            return Err(Error::Config(format!(
                "t_f must be at least dt, got {}",
                self.t_f
            )));
        }
        if self.decimation == 0 {
            return Err(Error::Config("output decimation must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_f / self.dt).round() as usize
    }
}

/// Stored samples of a simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Per-area ACE; empty vectors unless the AGC is active.
    pub ace: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Writes the samples as CSV. Column suffixes are external bus ids;
    /// ACE columns carry external area ids.
    pub fn write_csv<W: Write>(
        &self,
        sys: &PowerSystem,
        area_ids: &[usize],
        mut w: W,
    ) -> Result<()> {
        let l = sys.layout;
        let gen_ids: Vec<usize> = (0..l.g).map(|i| sys.case.buses[i].id).collect();
        let bus_ids: Vec<usize> = sys.case.buses.iter().map(|b| b.id).collect();
        let n_ace = self.ace.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        for prefix in ["delta", "freq_hz_dev", "emf", "mech", "r", "f"] {
            header.extend(gen_ids.iter().map(|id| format!("{prefix}_{id}")));
        }
        for prefix in ["v", "theta"] {
            header.extend(bus_ids.iter().map(|id| format!("{prefix}_{id}")));
        }
        header.extend(area_ids.iter().take(n_ace).map(|id| format!("ace_{id}")));
        writeln!(w, "{}", header.join(","))?;

        let ws = sys.omega_s();
        for s in 0..self.len() {
            let (x, a, u) = (&self.x[s], &self.a[s], &self.u[s]);
            let mut row = vec![self.t[s]];
            row.extend((0..l.g).map(|i| x[l.delta(i)]));
            row.extend((0..l.g).map(|i| (x[l.omega(i)] - ws) / (2.0 * PI)));
            row.extend((0..l.g).map(|i| x[l.emf(i)]));
            row.extend((0..l.g).map(|i| x[l.mech(i)]));
            row.extend((0..l.g).map(|i| u[l.r(i)]));
            row.extend((0..l.g).map(|i| u[l.f(i)]));
            row.extend((0..l.n).map(|k| a[l.v(k)]));
            row.extend((0..l.n).map(|k| a[l.theta(k)]));
            row.extend(self.ace[s].iter().copied());
            let text: Vec<String> = row.iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(w, "{}", text.join(","))?;
        }
        Ok(())
    }
}

/// Outcome of [`simulate`]. A failed run keeps the trajectory up to the last
/// completed step and stores the error.
#[derive(Debug)]
pub struct SimResult {
    pub trajectory: Trajectory,
    /// `∫ (T/2)(Δxᵀ Q Δx + Δuᵀ R Δu) dt` by the trapezoid rule.
    pub control_cost: f64,
    pub max_freq_dev_hz: f64,
    pub max_volt_dev_pu: f64,
    pub steps: usize,
    pub failure: Option<Error>,
}

impl SimResult {
    pub fn into_result(self) -> Result<SimResult> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

struct StageEval {
    /// `x − x_ref`
    dx: DVector<f64>,
    a: DVector<f64>,
    u: DVector<f64>,
    xdot: DVector<f64>,
    ydot: Vec<f64>,
    ace: Vec<f64>,
}

struct Integrator<'a> {
    sys: &'a PowerSystem,
    z_eq: &'a SystemPoint,
    law: ControlLaw<'a>,
    tie_eq: Vec<f64>,
    solver: AlgebraicSolver,
}

impl Integrator<'_> {
    fn eval(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        y: &[f64],
        a_guess: &DVector<f64>,
    ) -> Result<StageEval> {
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t));
        }
        let a = self
            .solver
            .solve(self.sys, x, &self.z_eq.d, a_guess)
            .map_err(|e| Error::AlgebraicSolveFailure {
                t,
                source: Box::new(e),
            })?;
        let mut dx = x - &self.z_eq.x;
        let (u, ydot, ace) = match self.law {
            ControlLaw::Lqr(k) => (&self.z_eq.u + k * &dx, Vec::new(), Vec::new()),
            ControlLaw::Open => (self.z_eq.u.clone(), Vec::new(), Vec::new()),
            ControlLaw::Agc(cfg, k) => {
                let l = self.sys.layout;
                let shift = coi_angle(self.sys, &dx);
                for i in 0..l.g {
                    dx[l.delta(i)] -= shift;
                }
                let ace = cfg.ace(self.sys, x, &a, &self.tie_eq);
                let (ydot, r) = cfg.agc_step(y, &ace);
                let mut u = &self.z_eq.u + k * &dx;
                for (i, ri) in r.into_iter().enumerate() {
                    u[l.r(i)] = ri;
                }
                (u, ydot, ace)
            }
        };
        let xdot = self.sys.eval_g(x, &a, &u)?;
        if xdot.iter().chain(&ydot).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t));
        }
        Ok(StageEval {
            dx,
            a,
            u,
            xdot,
            ydot,
            ace,
        })
    }
}

/// Inertia-weighted mean of the rotor angle deviations in `dx`.
pub fn coi_angle(sys: &PowerSystem, dx: &DVector<f64>) -> f64 {
    let l = sys.layout;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, gen) in sys.case.generators.iter().enumerate() {
        num += gen.machine.inertia * dx[l.delta(i)];
        den += gen.machine.inertia;
    }
    num / den
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrates the closed loop from `x(0) = x_init` with load `z_eq.d` using
/// fixed-step RK4, solving the algebraic equations at every stage.
///
/// `weights` are the cost weights at `z_eq`. The AGC state starts at the
/// scheduled generation of each area.
pub fn simulate(
    sys: &PowerSystem,
    x_init: &DVector<f64>,
    a_guess: &DVector<f64>,
    z_eq: &SystemPoint,
    law: ControlLaw<'_>,
    weights: &WeightMatrices,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let l = sys.layout;
    if x_init.len() != l.nx() || a_guess.len() != l.na() {
        return Err(Error::Dimension("simulation initial state".into()));
    }
    let (tie_eq, mut y) = match law {
        ControlLaw::Agc(areas, _) => (
            areas.tie_exports(sys, &z_eq.a),
            areas.scheduled_generation(),
        ),
        _ => (Vec::new(), Vec::new()),
    };
    let mut integ = Integrator {
        sys,
        z_eq,
        law,
        tie_eq,
        solver: AlgebraicSolver::new(),
    };

    let ws = sys.omega_s();
    let half_t = 0.5 * cfg.t_lqr;
    let running_cost = |s: &StageEval| {
        half_t * (quad_form(&weights.q, &s.dx) + quad_form(&weights.r, &(&s.u - &z_eq.u)))
    };
    let freq_dev = |x: &DVector<f64>| {
        (0..l.g).fold(0.0f64, |m, i| {
            m.max((x[l.omega(i)] - ws).abs() / (2.0 * PI))
        })
    };
    let volt_dev =
        |a: &DVector<f64>| (0..l.n).fold(0.0f64, |m, k| m.max((a[l.v(k)] - z_eq.a[l.v(k)]).abs()));

    let steps = cfg.steps();
    let dt = cfg.dt;
    let mut traj = Trajectory::default();
    let mut result = SimResult {
        trajectory: Trajectory::default(),
        control_cost: 0.0,
        max_freq_dev_hz: 0.0,
        max_volt_dev_pu: 0.0,
        steps: 0,
        failure: None,
    };

    let mut x = x_init.clone();
    let mut cur = match integ.eval(0.0, &x, &y, a_guess) {
        Ok(s) => s,
        Err(e) => {
            result.failure = Some(e);
            return Ok(result);
        }
    };
    let mut cost_prev = running_cost(&cur);
    result.max_freq_dev_hz = freq_dev(&x);
    result.max_volt_dev_pu = volt_dev(&cur.a);
    let store = |traj: &mut Trajectory, t: f64, x: &DVector<f64>, s: &StageEval| {
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.a.push(s.a.clone());
        traj.u.push(s.u.clone());
        traj.ace.push(s.ace.clone());
    };
    store(&mut traj, 0.0, &x, &cur);

    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        let t1 = step as f64 * dt;
        let next = (|| -> Result<(DVector<f64>, Vec<f64>, StageEval)> {
            let k1 = &cur;
            let x2 = &x + &k1.xdot * (0.5 * dt);
            let y2 = axpy(&y, 0.5 * dt, &k1.ydot);
            let k2 = integ.eval(t0 + 0.5 * dt, &x2, &y2, &k1.a)?;
            let x3 = &x + &k2.xdot * (0.5 * dt);
            let y3 = axpy(&y, 0.5 * dt, &k2.ydot);
            let k3 = integ.eval(t0 + 0.5 * dt, &x3, &y3, &k2.a)?;
            let x4 = &x + &k3.xdot * dt;
            let y4 = axpy(&y, dt, &k3.ydot);
            let k4 = integ.eval(t1, &x4, &y4, &k3.a)?;
            let xn = &x + (&k1.xdot + (&k2.xdot + &k3.xdot) * 2.0 + &k4.xdot) * (dt / 6.0);
            let yn: Vec<f64> = (0..y.len())
                .map(|j| {
                    y[j] + dt / 6.0 * (k1.ydot[j] + 2.0 * (k2.ydot[j] + k3.ydot[j]) + k4.ydot[j])
                })
                .collect();
            let sn = integ.eval(t1, &xn, &yn, &k4.a)?;
            Ok((xn, yn, sn))
        })();
        let (xn, yn, sn) = match next {
            Ok(v) => v,
            Err(e) => {
                result.failure = Some(e);
                break;
            }
        };
        x = xn;
        y = yn;
        cur = sn;
        let cost = running_cost(&cur);
        result.control_cost += 0.5 * dt * (cost_prev + cost);
        cost_prev = cost;
        result.max_freq_dev_hz = result.max_freq_dev_hz.max(freq_dev(&x));
        result.max_volt_dev_pu = result.max_volt_dev_pu.max(volt_dev(&cur.a));
        result.steps = step;
        if step % cfg.decimation == 0 || step == steps {
            store(&mut traj, t1, &x, &cur);
        }
    }
    if result.failure.is_some() && traj.t.last() != Some(&(result.steps as f64 * dt)) {
        store(&mut traj, result.steps as f64 * dt, &x, &cur);
    }
    result.trajectory = traj;
    Ok(result)
}
