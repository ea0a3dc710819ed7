//! Dense convex QP with equality and box constraints, solved by a Mehrotra
//! predictor–corrector primal–dual interior-point method.
//!
//! ```text
//! minimize   ½ xᵀHx + fᵀx
//! subject to A x = b,  lb ≤ x ≤ ub
//! ```
//!
//! Infinite bounds are allowed. Variables with `lb == ub` are turned into
//! equality rows, and linearly dependent equality rows are dropped before
//! the iteration starts.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, DenseLu};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Relative KKT residuals at the returned point (stationarity, primal).
    pub stationarity: f64,
    pub primal: f64,
    pub dropped_rows: usize,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let m = self.b_eq.len();
        if self.h.shape() != (n, n)
            || self.a_eq.shape() != (m, n)
            || self.lb.len() != n
            || self.ub.len() != n
        {
            return Err(Error::Dimension("QP data".into()));
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(Error::Infeasible(format!("empty box for variable {i}")));
            }
        }
        Ok(())
    }
}

/// Indices of a maximal linearly independent subset of the rows of `a`,
/// found by QR with column pivoting on `aᵀ`.
fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let m = a.nrows();
    if m == 0 {
        return Vec::new();
    }
    let qr = a.transpose().col_piv_qr();
    let r = qr.r();
    let mut order = DMatrix::from_fn(1, m, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let diag = r.nrows().min(r.ncols());
    let r00 = if diag > 0 { r[(0, 0)].abs() } else { 0.0 };
    let tol = 1e-10 * r00.max(f64::MIN_POSITIVE) * (m.max(a.ncols()) as f64);
    let rank = (0..diag).take_while(|&i| r[(i, i)].abs() > tol).count();
    let mut rows: Vec<usize> = (0..rank).map(|j| order[(0, j)] as usize).collect();
    rows.sort_unstable();
    rows
}

pub fn solve_qp(prob: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    prob.check()?;
    let n = prob.n();

    // Fixed variables become equality rows.
    let fixed: Vec<usize> = (0..n).filter(|&i| prob.lb[i] == prob.ub[i]).collect();
    let m0 = prob.a_eq.nrows();
    let mut a_full = DMatrix::zeros(m0 + fixed.len(), n);
    let mut b_full = DVector::zeros(m0 + fixed.len());
    a_full.view_mut((0, 0), (m0, n)).copy_from(&prob.a_eq);
    b_full.rows_mut(0, m0).copy_from(&prob.b_eq);
    for (r, &i) in fixed.iter().enumerate() {
        a_full[(m0 + r, i)] = 1.0;
        b_full[m0 + r] = prob.lb[i];
    }

    let keep = independent_rows(&a_full);
    let dropped = a_full.nrows() - keep.len();
    if dropped > 0 {
        warn!("dropping {dropped} linearly dependent equality rows");
    }
    let a = DMatrix::from_fn(keep.len(), n, |r, c| a_full[(keep[r], c)]);
    let b = DVector::from_fn(keep.len(), |r, _| b_full[keep[r]]);
    let m = a.nrows();

    let is_fixed = |i: usize| prob.lb[i] == prob.ub[i];
    let lower: Vec<usize> = (0..n)
        .filter(|&i| prob.lb[i].is_finite() && !is_fixed(i))
        .collect();
    let upper: Vec<usize> = (0..n)
        .filter(|&i| prob.ub[i].is_finite() && !is_fixed(i))
        .collect();
    let nc = lower.len() + upper.len();

    // Interior starting point.
    let mut x = DVector::zeros(n);
    for i in 0..n {
        let (l, u) = (prob.lb[i], prob.ub[i]);
        x[i] = match (l.is_finite(), u.is_finite()) {
            (true, true) if l == u => l,
            (true, true) => 0.5 * (l + u),
            (true, false) => l.max(0.0) + 1.0,
            (false, true) => u.min(0.0) - 1.0,
            (false, false) => 0.0,
        };
    }
    let mut y = DVector::zeros(m);
    let mut zl = DVector::from_element(lower.len(), 1.0);
    let mut zu = DVector::from_element(upper.len(), 1.0);

    let scale_d = 1.0 + norm_inf(&prob.f).max(prob.h.amax());
    let scale_p = 1.0 + norm_inf(&b);

    let slacks = |x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let sl = DVector::from_fn(lower.len(), |k, _| x[lower[k]] - prob.lb[lower[k]]);
        let su = DVector::from_fn(upper.len(), |k, _| prob.ub[upper[k]] - x[upper[k]]);
        (sl, su)
    };

    let mut iterations = 0;
    let mut converged = false;
    for it in 0..opts.max_iter {
        iterations = it;
        let (sl, su) = slacks(&x);
        let mut rd = &prob.h * &x + &prob.f - a.transpose() * &y;
        for (k, &i) in lower.iter().enumerate() {
            rd[i] -= zl[k];
        }
        for (k, &i) in upper.iter().enumerate() {
            rd[i] += zu[k];
        }
        let rp = &a * &x - &b;
        let mu = if nc > 0 {
            (sl.dot(&zl) + su.dot(&zu)) / nc as f64
        } else {
            0.0
        };

        let res_d = norm_inf(&rd) / scale_d;
        let res_p = norm_inf(&rp) / scale_p;
        if res_d <= opts.tol && res_p <= opts.tol && mu <= opts.tol {
            converged = true;
            break;
        }

        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
        for (k, &i) in lower.iter().enumerate() {
            kkt[(i, i)] += zl[k] / sl[k];
        }
        for (k, &i) in upper.iter().enumerate() {
            kkt[(i, i)] += zu[k] / su[k];
        }
        kkt.view_mut((0, n), (n, m)).copy_from(&(-a.transpose()));
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let lu = DenseLu::new(&kkt);
        if lu.is_singular() {
            return Err(Error::Infeasible("singular KKT system".into()));
        }

        // Solves for (Δx, Δy, Δzl, Δzu) given complementarity targets.
        let direction = |tl: &DVector<f64>, tu: &DVector<f64>| {
            let mut rhs = DVector::zeros(n + m);
            let mut top = -&rd;
            for (k, &i) in lower.iter().enumerate() {
                top[i] += tl[k] / sl[k];
            }
            for (k, &i) in upper.iter().enumerate() {
                top[i] -= tu[k] / su[k];
            }
            rhs.rows_mut(0, n).copy_from(&top);
            rhs.rows_mut(n, m).copy_from(&(-&rp));
            let sol = lu.solve(&rhs);
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, m).into_owned();
            let dzl = DVector::from_fn(lower.len(), |k, _| (tl[k] - zl[k] * dx[lower[k]]) / sl[k]);
            let dzu = DVector::from_fn(upper.len(), |k, _| (tu[k] + zu[k] * dx[upper[k]]) / su[k]);
            (dx, dy, dzl, dzu)
        };

        let max_step = |dx: &DVector<f64>, dzl: &DVector<f64>, dzu: &DVector<f64>| {
            let mut alpha: f64 = 1.0;
            for (k, &i) in lower.iter().enumerate() {
                if dx[i] < 0.0 {
                    alpha = alpha.min(-sl[k] / dx[i]);
                }
                if dzl[k] < 0.0 {
                    alpha = alpha.min(-zl[k] / dzl[k]);
                }
            }
            for (k, &i) in upper.iter().enumerate() {
                if dx[i] > 0.0 {
                    alpha = alpha.min(su[k] / dx[i]);
                }
                if dzu[k] < 0.0 {
                    alpha = alpha.min(-zu[k] / dzu[k]);
                }
            }
            alpha
        };

        // Predictor.
        let tl_aff = -sl.component_mul(&zl);
        let tu_aff = -su.component_mul(&zu);
        let (dx_a, _, dzl_a, dzu_a) = direction(&tl_aff, &tu_aff);
        let alpha_aff = max_step(&dx_a, &dzl_a, &dzu_a);

        let sigma = if nc > 0 {
            let mut gap = 0.0;
            for (k, &i) in lower.iter().enumerate() {
                gap += (sl[k] + alpha_aff * dx_a[i]) * (zl[k] + alpha_aff * dzl_a[k]);
            }
            for (k, &i) in upper.iter().enumerate() {
                gap += (su[k] - alpha_aff * dx_a[i]) * (zu[k] + alpha_aff * dzu_a[k]);
            }
            let mu_aff = gap / nc as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector.
        let tl = DVector::from_fn(lower.len(), |k, _| {
            sigma * mu - sl[k] * zl[k] - dx_a[lower[k]] * dzl_a[k]
        });
        let tu = DVector::from_fn(upper.len(), |k, _| {
            sigma * mu - su[k] * zu[k] + dx_a[upper[k]] * dzu_a[k]
        });
        let (dx, dy, dzl, dzu) = direction(&tl, &tu);
        let alpha = (0.995 * max_step(&dx, &dzl, &dzu)).min(1.0);

        x += alpha * dx;
        y += alpha * dy;
        zl += alpha * dzl;
        zu += alpha * dzu;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Infeasible("iterates diverged".into()));
        }
    }

    if !converged {
        let rp = &a * &x - &b;
        if norm_inf(&rp) / scale_p > 1e-6 {
            return Err(Error::Infeasible(format!(
                "primal residual {:.3e} after {} iterations",
                norm_inf(&rp),
                opts.max_iter
            )));
        }
        return Err(Error::MaxIterations(opts.max_iter));
    }

    let (sl, su) = slacks(&x);
    let mut active_l = vec![false; n];
    let mut active_u = vec![false; n];
    for (k, &i) in lower.iter().enumerate() {
        active_l[i] = zl[k] > sl[k];
    }
    for (k, &i) in upper.iter().enumerate() {
        active_u[i] = zu[k] > su[k];
    }
    if let Some(xp) = polish(prob, &a, &b, &active_l, &active_u) {
        x = xp;
    } else {
        debug!("QP polish rejected; keeping interior-point iterate");
    }
    for i in 0..n {
        x[i] = x[i].clamp(prob.lb[i], prob.ub[i]);
    }

    // Residuals at the returned point, with multipliers from least squares.
    let rp = &a_full * &x - &b_full;
    let grad = &prob.h * &x + &prob.f;
    let stationarity = stationarity_residual(prob, &a, &x, &grad) / scale_d;
    Ok(QpSolution {
        objective: prob.objective(&x),
        x,
        iterations,
        stationarity,
        primal: norm_inf(&rp) / scale_p,
        dropped_rows: dropped,
    })
}

/// Equality-constrained solve with the guessed active bounds pinned.
fn polish(
    prob: &QpProblem,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    active_l: &[bool],
    active_u: &[bool],
) -> Option<DVector<f64>> {
    let n = prob.n();
    let pinned: Vec<(usize, f64)> = (0..n)
        .filter_map(|i| {
            if prob.lb[i] == prob.ub[i] {
                None
            } else if active_l[i] {
                Some((i, prob.lb[i]))
            } else if active_u[i] {
                Some((i, prob.ub[i]))
            } else {
                None
            }
        })
        .collect();
    let m = a.nrows() + pinned.len();
    let mut ae = DMatrix::zeros(m, n);
    let mut be = DVector::zeros(m);
    ae.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    be.rows_mut(0, a.nrows()).copy_from(b);
    for (r, &(i, v)) in pinned.iter().enumerate() {
        ae[(a.nrows() + r, i)] = 1.0;
        be[a.nrows() + r] = v;
    }
    let keep = independent_rows(&ae);
    let ae = DMatrix::from_fn(keep.len(), n, |r, c| ae[(keep[r], c)]);
    let be = DVector::from_fn(keep.len(), |r, _| be[keep[r]]);
    let k = ae.nrows();

    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
    kkt.view_mut((0, n), (n, k)).copy_from(&ae.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(&ae);
    let lu = DenseLu::new(&kkt);
    if lu.is_singular() || lu.condition_estimate() > 1e14 {
        return None;
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&prob.f));
    rhs.rows_mut(n, k).copy_from(&be);
    let sol = lu.solve(&rhs);
    let x = sol.rows(0, n).into_owned();
    let width = |i: usize| (prob.ub[i] - prob.lb[i]).abs().clamp(1e-12, 1.0);
    for i in 0..n {
        let slack = 1e-7 * width(i).max(1e-3);
        if x[i] < prob.lb[i] - slack || x[i] > prob.ub[i] + slack {
            return None;
        }
    }
    // Multipliers of pinned bounds must have the right sign.
    let grad = &prob.h * &x + &prob.f;
    let tol = 1e-7 * (1.0 + norm_inf(&grad));
    for (r, &row) in keep.iter().enumerate() {
        if row < a.nrows() {
            continue;
        }
        let (i, _) = pinned[row - a.nrows()];
        let mult = -sol[n + r];
        if (active_l[i] && mult < -tol) || (active_u[i] && mult > tol) {
            return None;
        }
    }
    Some(x)
}

/// Stationarity residual with bound multipliers taken from the gradient sign
/// at active bounds and equality multipliers from least squares.
fn stationarity_residual(
    prob: &QpProblem,
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    grad: &DVector<f64>,
) -> f64 {
    let n = prob.n();
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let w = (prob.ub[i] - prob.lb[i]).abs().min(1.0);
            let tol = 1e-9 * w.max(1e-9);
            !(x[i] - prob.lb[i] <= tol || prob.ub[i] - x[i] <= tol)
        })
        .collect();
    if a.nrows() == 0 {
        return free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
    }
    // least squares y minimizing ‖grad_F − A_Fᵀ y‖ over free components
    let af = DMatrix::from_fn(a.nrows(), free.len(), |r, c| a[(r, free[c])]);
    let gf = DVector::from_fn(free.len(), |k, _| grad[free[k]]);
    if free.is_empty() {
        return 0.0;
    }
    let svd = af.transpose().svd(true, true);
    match svd.solve(&gf, 1e-12) {
        Ok(yv) => norm_inf(&(gf - af.transpose() * yv)),
        Err(_) => f64::INFINITY,
    }
}
