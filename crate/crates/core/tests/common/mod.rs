#![allow(dead_code)]

use gridlqr::dae::{PowerSystem, SystemPoint};
use gridlqr::data::load_case;
use gridlqr::dispatch::QpProblem;
use gridlqr::linearize::{linearize, LinearizedSystem};
use gridlqr::steady_state::base_point;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn system(name: &str) -> PowerSystem {
    PowerSystem::new(load_case(name, None).unwrap()).unwrap()
}

pub struct Fixture {
    pub sys: PowerSystem,
    pub z0: SystemPoint,
    pub lin: LinearizedSystem,
}

pub fn fixture(name: &str) -> Fixture {
    let sys = system(name);
    let z0 = base_point(&sys).unwrap();
    let lin = linearize(&sys, &z0).unwrap();
    Fixture { sys, z0, lin }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

/// One generator at bus 1 (slack) feeding bus 2 through a single branch.
pub fn two_bus_text(p_load_mw: f64, q_load_mvar: f64, r: f64, x: f64, b: f64) -> String {
    format!(
        "mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 {p_load_mw} {q_load_mvar} 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 300 -300 1 100 1 200 0 ];
mpc.branch = [ 1 2 {r} {x} {b} 0 0 0 0 0 1 ];
mpc.gencost = [ 2 0 0 3 0.01 10 0 ];
"
    )
}

/// `∫₀^h e^{Fᵀt} M e^{Ft} dt` and `e^{Fh}` from one block exponential.
pub fn gramian_step(f: &DMatrix<f64>, m: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = f.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n))
        .copy_from(&(-f.transpose() * h));
    big.view_mut((0, n), (n, n)).copy_from(&(m * h));
    big.view_mut((n, n), (n, n)).copy_from(&(f * h));
    let e = big.exp();
    let phi = e.view((n, n), (n, n)).into_owned();
    let w = phi.transpose() * e.view((0, n), (n, n));
    (w, phi)
}

/// Quadratic cost `∫ x'ᵀ M x' dt` of the linear system `ẋ' = F x'` from
/// `x'(0) = x0`, integrated in exact steps of length `h` until the running
/// cost is negligible.
pub fn linear_cost(
    f: &DMatrix<f64>,
    m: &DMatrix<f64>,
    x0: &DVector<f64>,
    h: f64,
    t_max: f64,
) -> f64 {
    let (w, phi) = gramian_step(f, m, h);
    let mut x = x0.clone();
    let mut total = 0.0;
    let mut t = 0.0;
    while t < t_max {
        let c = x.dot(&(&w * &x));
        total += c;
        x = &phi * x;
        t += h;
        if c.abs() < 1e-15 * total.abs().max(1e-300) {
            break;
        }
    }
    total
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Central-difference Jacobian of `f` at `z` with step `h`.
pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    z: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let m = f(z).len();
    let mut j = DMatrix::zeros(m, z.len());
    for c in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[c] += h;
        zm[c] -= h;
        j.set_column(c, &((f(&zp) - f(&zm)) / (2.0 * h)));
    }
    j
}

/// `max|J_fd − J| / max(1, max|J|)`
pub fn jacobian_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(1.0);
    (analytic - fd).amax() / scale
}

/// Relative errors of the five analytic blocks against central differences
/// at `(x, a, u)`.
pub fn jacobian_errors(
    sys: &PowerSystem,
    x: &DVector<f64>,
    a: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Vec<(&'static str, f64)> {
    let g_of_x = |v: &DVector<f64>| sys.eval_g(v, a, u).unwrap();
    let g_of_a = |v: &DVector<f64>| sys.eval_g(x, v, u).unwrap();
    let g_of_u = |v: &DVector<f64>| sys.eval_g(x, a, v).unwrap();
    let h_of_x = |v: &DVector<f64>| sys.eval_h(v, a).unwrap();
    let h_of_a = |v: &DVector<f64>| sys.eval_h(x, v).unwrap();
    vec![
        (
            "g_x",
            jacobian_error(&sys.g_x(x, a), &fd_jacobian(g_of_x, x, h)),
        ),
        (
            "g_a",
            jacobian_error(&sys.g_a(x, a), &fd_jacobian(g_of_a, a, h)),
        ),
        (
            "g_u",
            jacobian_error(&sys.g_u(), &fd_jacobian(g_of_u, u, h)),
        ),
        (
            "h_x",
            jacobian_error(&sys.h_x(x, a), &fd_jacobian(h_of_x, x, h)),
        ),
        (
            "h_a",
            jacobian_error(&sys.h_a(x, a), &fd_jacobian(h_of_a, a, h)),
        ),
    ]
}

/// A point near `z` with every component moved by up to `scale` (angles,
/// voltages and EMFs stay physical for small scales).
pub fn perturbed(z: &DVector<f64>, rng: &mut impl Rng, scale: f64) -> DVector<f64> {
    z + random_vector(rng, z.len(), scale)
}

/// Random `(A, B, Q, R)` with `Q, R` symmetric positive definite. A dense
/// Gaussian-like `B` makes the pair controllable with probability one.
pub fn random_care_problem(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = random_matrix(rng, n, n, 1.0) * (3.0 / (n as f64).sqrt());
    let b = random_matrix(rng, n, m, 1.0);
    let c = random_matrix(rng, n, n, 0.5);
    let d = random_matrix(rng, m, m, 0.5);
    let q = DMatrix::identity(n, n) * 0.1 + c.transpose() * c;
    let r = DMatrix::identity(m, m) + d.transpose() * d;
    (a, b, q, r)
}

/// Solves `Fᵀ X + X F + M = 0` through its Kronecker form.
pub fn lyapunov(f: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ft = f.transpose();
    let op = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DVector::from_column_slice((-m).as_slice());
    let sol = op.lu().solve(&rhs).expect("nonsingular Lyapunov operator");
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    (&x + x.transpose()) * 0.5
}

/// Kleinman–Newton iteration for the stabilizing CARE solution. A shift
/// `A − σI` with `σ` large enough that `K = 0` stabilizes is walked down to
/// zero, warm-starting each Newton solve with the previous gain.
pub fn kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let rinv = r.clone().try_inverse().unwrap();
    let abscissa = a
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma0 = (abscissa + 1.0).max(0.0);
    let steps = 40;
    let mut k = DMatrix::zeros(b.ncols(), n);
    let mut p = DMatrix::zeros(n, n);
    for s in 0..=steps {
        let sigma = sigma0 * (1.0 - s as f64 / steps as f64);
        let shifted = a - DMatrix::identity(n, n) * sigma;
        for _ in 0..100 {
            let f = &shifted + b * &k;
            let p_next = lyapunov(&f, &(q + k.transpose() * r * &k));
            let done = (&p_next - &p).amax() <= 1e-14 * p_next.amax();
            p = p_next;
            k = -&rinv * b.transpose() * &p;
            if done {
                break;
            }
        }
    }
    let closed = a + b * &k;
    let cl = closed
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(cl < 0.0, "Kleinman iteration lost stability");
    p
}

/// Solves the QP by trying every assignment of each variable to its lower
/// bound, its upper bound or the interior, keeping the best KKT point.
pub fn enumerate_active_sets(p: &QpProblem) -> DVector<f64> {
    let n = p.n();
    let m = p.b_eq.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut state = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut x = DVector::zeros(n);
        for i in 0..n {
            match state[i] {
                1 => x[i] = p.lb[i],
                2 => x[i] = p.ub[i],
                _ => {}
            }
        }
        let nf = free.len();
        let mut kkt = DMatrix::zeros(nf + m, nf + m);
        let mut rhs = DVector::zeros(nf + m);
        let hx_fixed = &p.h * &x;
        let ax_fixed = &p.a_eq * &x;
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                kkt[(r, c)] = p.h[(i, j)];
            }
            for k in 0..m {
                kkt[(r, nf + k)] = p.a_eq[(k, i)];
                kkt[(nf + k, r)] = p.a_eq[(k, i)];
            }
            rhs[r] = -p.f[i] - hx_fixed[i];
        }
        for k in 0..m {
            rhs[nf + k] = p.b_eq[k] - ax_fixed[k];
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
            let nu = sol.rows(nf, m).into_owned();
            let grad = &p.h * &x + &p.f + p.a_eq.transpose() * &nu;
            let tol = 1e-9;
            let eq_ok = (&p.a_eq * &x - &p.b_eq).amax() < 1e-8;
            let ok = eq_ok
                && (0..n).all(|i| match state[i] {
                    0 => x[i] >= p.lb[i] - tol && x[i] <= p.ub[i] + tol,
                    1 => grad[i] >= -tol,
                    _ => grad[i] <= tol,
                });
            if ok {
                let obj = p.objective(&x);
                if best.as_ref().is_none_or(|b| obj < b.0) {
                    best = Some((obj, x));
                }
            }
        }
        // next assignment in base 3
        let mut i = 0;
        while i < n && state[i] == 2 {
            state[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
        state[i] += 1;
    }
    best.expect("feasible QP has a KKT point").1
}

pub fn random_qp(r: &mut impl Rng, n: usize, m: usize) -> QpProblem {
    let c = random_matrix(r, n, n, 1.0);
    let h = c.transpose() * c + DMatrix::identity(n, n) * 0.1;
    let f = random_vector(r, n, 3.0);
    let lb = DVector::from_fn(n, |_, _| r.gen_range(-1.5..-0.1));
    let ub = DVector::from_fn(n, |_, _| r.gen_range(0.1..1.5));
    let a_eq = random_matrix(r, m, n, 1.0);
    // an interior point keeps the feasible set nonempty
    let x_feas = DVector::from_fn(n, |i, _| r.gen_range(0.5 * lb[i]..0.5 * ub[i]));
    let b_eq = &a_eq * x_feas;
    QpProblem {
        h,
        f,
        a_eq,
        b_eq,
        lb,
        ub,
    }
}
