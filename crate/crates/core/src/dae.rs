//! Nonlinear power-system DAE: `ẋ = g(x, a, u)`, `h(x, a) = d`.
//!
//! Vector layouts (G generators, N buses, L = N − G load buses):
//!
//! * `x = [δ, ω, e, m]`, each block of length G
//! * `u = [r, f]`
//! * `a = [p_g, q_g, v, θ]` with `v`, `θ` of length N
//! * rows of `h` and `d`: stator P, stator Q, P balance at generator buses,
//!   Q balance at generator buses, P balance at load buses, Q balance at
//!   load buses.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, DenseLu};
use crate::netcase::{build_ybus, AdmittanceMatrix, NetworkCase};

pub const DEFAULT_FREQUENCY_HZ: f64 = 60.0;

/// Condition estimate above which an algebraic Jacobian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseFrequency {
    pub f_s: f64,
}

impl BaseFrequency {
    pub fn new(f_s: f64) -> Self {
        BaseFrequency { f_s }
    }

    pub fn omega_s(&self) -> f64 {
        2.0 * PI * self.f_s
    }
}

impl Default for BaseFrequency {
    fn default() -> Self {
        BaseFrequency::new(DEFAULT_FREQUENCY_HZ)
    }
}

/// Index arithmetic for the stacked vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub g: usize,
    pub n: usize,
}

impl Layout {
    pub fn nx(&self) -> usize {
        4 * self.g
    }
    pub fn nu(&self) -> usize {
        2 * self.g
    }
    pub fn na(&self) -> usize {
        2 * self.g + 2 * self.n
    }
    pub fn nh(&self) -> usize {
        2 * self.g + 2 * self.n
    }
    pub fn n_load(&self) -> usize {
        self.n - self.g
    }

    pub fn delta(&self, i: usize) -> usize {
        i
    }
    pub fn omega(&self, i: usize) -> usize {
        self.g + i
    }
    pub fn emf(&self, i: usize) -> usize {
        2 * self.g + i
    }
    pub fn mech(&self, i: usize) -> usize {
        3 * self.g + i
    }

    pub fn r(&self, i: usize) -> usize {
        i
    }
    pub fn f(&self, i: usize) -> usize {
        self.g + i
    }

    pub fn pg(&self, i: usize) -> usize {
        i
    }
    pub fn qg(&self, i: usize) -> usize {
        self.g + i
    }
    pub fn v(&self, k: usize) -> usize {
        2 * self.g + k
    }
    pub fn theta(&self, k: usize) -> usize {
        2 * self.g + self.n + k
    }

    pub fn stator_p(&self, i: usize) -> usize {
        i
    }
    pub fn stator_q(&self, i: usize) -> usize {
        self.g + i
    }
    /// Row of the real-power balance at bus `k`.
    pub fn p_bal(&self, k: usize) -> usize {
        if k < self.g {
            2 * self.g + k
        } else {
            4 * self.g + (k - self.g)
        }
    }
    /// Row of the reactive-power balance at bus `k`.
    pub fn q_bal(&self, k: usize) -> usize {
        if k < self.g {
            3 * self.g + k
        } else {
            4 * self.g + self.n_load() + (k - self.g)
        }
    }
}

/// A full operating point `z = (x, a, u)` together with the load it balances.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPoint {
    pub x: DVector<f64>,
    pub a: DVector<f64>,
    pub u: DVector<f64>,
    pub d: DVector<f64>,
}

/// Network, admittance matrix and base frequency bundled for evaluation.
#[derive(Debug, Clone)]
pub struct PowerSystem {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    pub freq: BaseFrequency,
    pub layout: Layout,
}

/// Per-machine stator quantities at angle difference `φ = δ − θ`.
struct Stator {
    k1: f64,
    k2: f64,
    xdp: f64,
}

impl Stator {
    fn new(xdp: f64, xq: f64) -> Self {
        Stator {
            k1: (xdp - xq) / (2.0 * xq * xdp),
            k2: (xdp + xq) / (2.0 * xq * xdp),
            xdp,
        }
    }

    fn p(&self, e: f64, v: f64, phi: f64) -> f64 {
        e * v * phi.sin() / self.xdp + self.k1 * v * v * (2.0 * phi).sin()
    }

    fn q(&self, e: f64, v: f64, phi: f64) -> f64 {
        e * v * phi.cos() / self.xdp - self.k2 * v * v + self.k1 * v * v * (2.0 * phi).cos()
    }

    /// (∂P/∂φ, ∂P/∂e, ∂P/∂v)
    fn dp(&self, e: f64, v: f64, phi: f64) -> (f64, f64, f64) {
        (
            e * v * phi.cos() / self.xdp + 2.0 * self.k1 * v * v * (2.0 * phi).cos(),
            v * phi.sin() / self.xdp,
            e * phi.sin() / self.xdp + 2.0 * self.k1 * v * (2.0 * phi).sin(),
        )
    }

    /// (∂Q/∂φ, ∂Q/∂e, ∂Q/∂v)
    fn dq(&self, e: f64, v: f64, phi: f64) -> (f64, f64, f64) {
        (
            -e * v * phi.sin() / self.xdp - 2.0 * self.k1 * v * v * (2.0 * phi).sin(),
            v * phi.cos() / self.xdp,
            e * phi.cos() / self.xdp - 2.0 * self.k2 * v + 2.0 * self.k1 * v * (2.0 * phi).cos(),
        )
    }
}

impl PowerSystem {
    pub fn new(case: NetworkCase) -> Result<Self> {
        Self::with_frequency(case, BaseFrequency::default())
    }

    pub fn with_frequency(case: NetworkCase, freq: BaseFrequency) -> Result<Self> {
        case.validate()?;
        if !(freq.f_s > 0.0) {
            return Err(Error::Config(format!(
                "base frequency must be positive, got {}",
                freq.f_s
            )));
        }
        let ybus = build_ybus(&case)?;
        let layout = Layout {
            g: case.n_gen(),
            n: case.n_bus(),
        };
        Ok(PowerSystem {
            case,
            ybus,
            freq,
            layout,
        })
    }

    pub fn omega_s(&self) -> f64 {
        self.freq.omega_s()
    }

    fn stator(&self, i: usize) -> Stator {
        let m = &self.case.generators[i].machine;
        Stator::new(m.x_d_prime, m.x_q)
    }

    fn check(&self, what: &str, v: &DVector<f64>, len: usize) -> Result<()> {
        if v.len() != len {
            return Err(Error::Dimension(format!(
                "{what} has length {}, expected {len}",
                v.len()
            )));
        }
        Ok(())
    }

    /// Load vector `d` for per-bus demands in pu (internal bus order).
    pub fn load_vector(&self, p_load: &[f64], q_load: &[f64]) -> DVector<f64> {
        let l = self.layout;
        let mut d = DVector::zeros(l.nh());
        for k in 0..l.n {
            d[l.p_bal(k)] = -p_load[k];
            d[l.q_bal(k)] = -q_load[k];
        }
        d
    }

    /// Load vector of the case's base demand.
    pub fn base_load(&self) -> DVector<f64> {
        let p: Vec<f64> = self.case.buses.iter().map(|b| b.p_load0).collect();
        let q: Vec<f64> = self.case.buses.iter().map(|b| b.q_load0).collect();
        self.load_vector(&p, &q)
    }

    /// Per-bus real and reactive demand encoded in `d`.
    pub fn demands(&self, d: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let p = (0..l.n).map(|k| -d[l.p_bal(k)]).collect();
        let q = (0..l.n).map(|k| -d[l.q_bal(k)]).collect();
        (p, q)
    }

    /// Net bus injections `P_k`, `Q_k` flowing into the network.
    pub fn injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.n;
        let (g, b) = (&self.ybus.g, &self.ybus.b);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for k in 0..n {
            let (mut sp, mut sq) = (0.0, 0.0);
            for j in 0..n {
                let (gkj, bkj) = (g[(k, j)], b[(k, j)]);
                if gkj == 0.0 && bkj == 0.0 {
                    continue;
                }
                let (s, c) = (theta[k] - theta[j]).sin_cos();
                sp += v[j] * (gkj * c + bkj * s);
                sq += v[j] * (gkj * s - bkj * c);
            }
            p[k] = v[k] * sp;
            q[k] = v[k] * sq;
        }
        (p, q)
    }

    fn split_a(&self, a: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let v = (0..l.n).map(|k| a[l.v(k)]).collect();
        let th = (0..l.n).map(|k| a[l.theta(k)]).collect();
        (v, th)
    }

    /// Differential map `g(x, a, u)`.
    pub fn eval_g(
        &self,
        x: &DVector<f64>,
        a: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let l = self.layout;
        self.check("x", x, l.nx())?;
        self.check("a", a, l.na())?;
        self.check("u", u, l.nu())?;
        let ws = self.omega_s();
        let mut out = DVector::zeros(l.nx());
        for (i, gen) in self.case.generators.iter().enumerate() {
            let m = &gen.machine;
            let delta = x[l.delta(i)];
            let omega = x[l.omega(i)];
            let e = x[l.emf(i)];
            let mech = x[l.mech(i)];
            let v = a[l.v(i)];
            let phi = delta - a[l.theta(i)];
            let c = (m.x_d - m.x_d_prime) / m.x_d_prime;
            out[l.delta(i)] = omega - ws;
            out[l.omega(i)] = (mech - m.damping * (omega - ws) - a[l.pg(i)]) / m.inertia;
            out[l.emf(i)] = (-(m.x_d / m.x_d_prime) * e + c * v * phi.cos() + u[l.f(i)]) / m.tau_d;
            out[l.mech(i)] = (u[l.r(i)] - (omega - ws) / (2.0 * PI) / m.droop - mech) / m.tau_c;
        }
        Ok(out)
    }

    /// Algebraic map `h(x, a)`; the DAE requires `h(x, a) = d`.
    pub fn eval_h(&self, x: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.layout;
        self.check("x", x, l.nx())?;
        self.check("a", a, l.na())?;
        let mut out = DVector::zeros(l.nh());
        for i in 0..l.g {
            let st = self.stator(i);
            let e = x[l.emf(i)];
            let v = a[l.v(i)];
            let phi = x[l.delta(i)] - a[l.theta(i)];
            out[l.stator_p(i)] = st.p(e, v, phi) - a[l.pg(i)];
            out[l.stator_q(i)] = st.q(e, v, phi) - a[l.qg(i)];
        }
        let (v, th) = self.split_a(a);
        let (p, q) = self.injections(&v, &th);
        for k in 0..l.n {
            let (pg, qg) = if k < l.g {
                (a[l.pg(k)], a[l.qg(k)])
            } else {
                (0.0, 0.0)
            };
            out[l.p_bal(k)] = p[k] - pg;
            out[l.q_bal(k)] = q[k] - qg;
        }
        Ok(out)
    }

    /// ∂g/∂x
    pub fn g_x(&self, x: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.nx(), l.nx());
        for (i, gen) in self.case.generators.iter().enumerate() {
            let m = &gen.machine;
            let phi = x[l.delta(i)] - a[l.theta(i)];
            let v = a[l.v(i)];
            let c = (m.x_d - m.x_d_prime) / m.x_d_prime;
            j[(l.delta(i), l.omega(i))] = 1.0;
            j[(l.omega(i), l.omega(i))] = -m.damping / m.inertia;
            j[(l.omega(i), l.mech(i))] = 1.0 / m.inertia;
            j[(l.emf(i), l.emf(i))] = -(m.x_d / m.x_d_prime) / m.tau_d;
            j[(l.emf(i), l.delta(i))] = -c * v * phi.sin() / m.tau_d;
            j[(l.mech(i), l.omega(i))] = -1.0 / (2.0 * PI * m.droop * m.tau_c);
            j[(l.mech(i), l.mech(i))] = -1.0 / m.tau_c;
        }
        j
    }

    /// ∂g/∂a
    pub fn g_a(&self, x: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.nx(), l.na());
        for (i, gen) in self.case.generators.iter().enumerate() {
            let m = &gen.machine;
            let phi = x[l.delta(i)] - a[l.theta(i)];
            let v = a[l.v(i)];
            let c = (m.x_d - m.x_d_prime) / m.x_d_prime;
            j[(l.omega(i), l.pg(i))] = -1.0 / m.inertia;
            j[(l.emf(i), l.v(i))] = c * phi.cos() / m.tau_d;
            j[(l.emf(i), l.theta(i))] = c * v * phi.sin() / m.tau_d;
        }
        j
    }

    /// ∂g/∂u (constant).
    pub fn g_u(&self) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.nx(), l.nu());
        for (i, gen) in self.case.generators.iter().enumerate() {
            let m = &gen.machine;
            j[(l.mech(i), l.r(i))] = 1.0 / m.tau_c;
            j[(l.emf(i), l.f(i))] = 1.0 / m.tau_d;
        }
        j
    }

    /// ∂h/∂x
    pub fn h_x(&self, x: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.nh(), l.nx());
        for i in 0..l.g {
            let st = self.stator(i);
            let e = x[l.emf(i)];
            let v = a[l.v(i)];
            let phi = x[l.delta(i)] - a[l.theta(i)];
            let (pp, pe, _) = st.dp(e, v, phi);
            let (qp, qe, _) = st.dq(e, v, phi);
            j[(l.stator_p(i), l.delta(i))] = pp;
            j[(l.stator_p(i), l.emf(i))] = pe;
            j[(l.stator_q(i), l.delta(i))] = qp;
            j[(l.stator_q(i), l.emf(i))] = qe;
        }
        j
    }

    /// ∂h/∂a
    pub fn h_a(&self, x: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut j = DMatrix::zeros(l.nh(), l.na());
        for i in 0..l.g {
            let st = self.stator(i);
            let e = x[l.emf(i)];
            let v = a[l.v(i)];
            let phi = x[l.delta(i)] - a[l.theta(i)];
            let (pp, _, pv) = st.dp(e, v, phi);
            let (qp, _, qv) = st.dq(e, v, phi);
            j[(l.stator_p(i), l.pg(i))] = -1.0;
            j[(l.stator_p(i), l.v(i))] = pv;
            j[(l.stator_p(i), l.theta(i))] = -pp;
            j[(l.stator_q(i), l.qg(i))] = -1.0;
            j[(l.stator_q(i), l.v(i))] = qv;
            j[(l.stator_q(i), l.theta(i))] = -qp;
        }
        let (v, th) = self.split_a(a);
        let (p, q) = self.injections(&v, &th);
        let (g, b) = (&self.ybus.g, &self.ybus.b);
        for k in 0..l.n {
            let (rp, rq) = (l.p_bal(k), l.q_bal(k));
            if k < l.g {
                j[(rp, l.pg(k))] = -1.0;
                j[(rq, l.qg(k))] = -1.0;
            }
            for m in 0..l.n {
                let (gkm, bkm) = (g[(k, m)], b[(k, m)]);
                if m == k {
                    j[(rp, l.theta(k))] = -q[k] - bkm * v[k] * v[k];
                    j[(rp, l.v(k))] = p[k] / v[k] + gkm * v[k];
                    j[(rq, l.theta(k))] = p[k] - gkm * v[k] * v[k];
                    j[(rq, l.v(k))] = q[k] / v[k] - bkm * v[k];
                    continue;
                }
                if gkm == 0.0 && bkm == 0.0 {
                    continue;
                }
                let (s, c) = (th[k] - th[m]).sin_cos();
                j[(rp, l.theta(m))] = v[k] * v[m] * (gkm * s - bkm * c);
                j[(rp, l.v(m))] = v[k] * (gkm * c + bkm * s);
                j[(rq, l.theta(m))] = -v[k] * v[m] * (gkm * c + bkm * s);
                j[(rq, l.v(m))] = v[k] * (gkm * s - bkm * c);
            }
        }
        j
    }

    /// Solves `h(x, a) = d` for `a` by damped Newton from `a_guess`.
    ///
    /// Returns the solution and the number of Newton steps taken.
    pub fn solve_algebraic(
        &self,
        x: &DVector<f64>,
        d: &DVector<f64>,
        a_guess: &DVector<f64>,
    ) -> Result<(DVector<f64>, usize)> {
        self.check("d", d, self.layout.nh())?;
        damped_newton(
            "algebraic solve",
            a_guess.clone(),
            |a| Ok(self.eval_h(x, a)? - d),
            |a| self.h_a(x, a),
            ALGEBRAIC_TOL,
            50,
        )
    }
}

pub const ALGEBRAIC_TOL: f64 = 1e-10;

/// Damped Newton iteration shared by the algebraic and load-flow solvers.
///
/// The step is halved up to 8 times whenever the full step does not reduce
/// the infinity norm of the residual.
pub(crate) fn damped_newton(
    what: &'static str,
    mut z: DVector<f64>,
    residual: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
    jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let mut r = residual(&z)?;
    let mut norm = norm_inf(&r);
    for it in 0..max_iter {
        if norm <= tol {
            return Ok((z, it));
        }
        if !norm.is_finite() {
            break;
        }
        let lu = DenseLu::new(&jacobian(&z));
        let cond = lu.condition_estimate();
        if cond > MAX_CONDITION {
            return Err(Error::SingularJacobian {
                what,
                condition: cond,
            });
        }
        let step = lu.solve(&(-&r));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let trial = &z + lambda * &step;
            let rt = residual(&trial)?;
            let nt = norm_inf(&rt);
            if nt.is_finite() && nt < norm {
                z = trial;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                what,
                iterations: it + 1,
                residual: norm,
            });
        }
    }
    if norm <= tol {
        return Ok((z, max_iter));
    }
    Err(Error::NonConvergence {
        what,
        iterations: max_iter,
        residual: norm,
    })
}

/// Algebraic solver that keeps the LU factor of `h_a` between calls and
/// runs chord iterations, refreshing the factor only when convergence slows.
///
/// Falls back to the full damped Newton of [`PowerSystem::solve_algebraic`]
/// when chord iterations stall.
#[derive(Debug, Clone, Default)]
pub struct AlgebraicSolver {
    lu: Option<DenseLu>,
    pub refreshes: usize,
}

impl AlgebraicSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(
        &mut self,
        sys: &PowerSystem,
        x: &DVector<f64>,
        d: &DVector<f64>,
        a_guess: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut a = a_guess.clone();
        let mut r = sys.eval_h(x, &a)? - d;
        let mut norm = norm_inf(&r);
        let mut fresh = false;
        for _ in 0..20 {
            if norm <= ALGEBRAIC_TOL {
                return Ok(a);
            }
            if self.lu.is_none() {
                self.refresh(sys, x, &a)?;
                fresh = true;
            }
            let lu = self.lu.as_ref().expect("factor present");
            let step = lu.solve(&r);
            let trial = &a - step;
            let rt = sys.eval_h(x, &trial)? - d;
            let nt = norm_inf(&rt);
            if nt.is_finite() && nt < 0.25 * norm {
                a = trial;
                r = rt;
                norm = nt;
                continue;
            }
            if fresh && nt.is_finite() && nt < norm {
                // a fresh Jacobian that still contracts slowly; accept and retry
                a = trial;
                r = rt;
                norm = nt;
                self.lu = None;
                continue;
            }
            if fresh {
                break;
            }
            self.lu = None;
        }
        if norm <= ALGEBRAIC_TOL {
            return Ok(a);
        }
        let (a, _) = sys.solve_algebraic(x, d, &a)?;
        self.lu = None;
        Ok(a)
    }

    fn refresh(&mut self, sys: &PowerSystem, x: &DVector<f64>, a: &DVector<f64>) -> Result<()> {
        let lu = DenseLu::new(&sys.h_a(x, a));
        let cond = lu.condition_estimate();
        if cond > MAX_CONDITION {
            return Err(Error::SingularJacobian {
                what: "algebraic solve",
                condition: cond,
            });
        }
        self.refreshes += 1;
        self.lu = Some(lu);
        Ok(())
    }
}
