//! Continuous algebraic Riccati equation via the ordered real Schur form of
//! the Hamiltonian matrix.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};
use crate::linalg::DenseLu;

const U11_MAX_CONDITION: f64 = 1e12;

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// `K = −R⁻¹BᵀP`, so the control law is `u = u_eq + K (x − x_eq)`.
    pub k: DMatrix<f64>,
    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F / ‖Q‖_F`
    pub residual: f64,
    /// Largest real part among the eigenvalues of `A + BK`.
    pub closed_loop_abscissa: f64,
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let rinv_bt = solve_r(r, &b.transpose());
    let res = a.transpose() * p + p * a - p * b * rinv_bt * p + q;
    res.norm() / q.norm().max(f64::MIN_POSITIVE)
}

fn solve_r(r: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    DenseLu::new(r).solve_matrix(rhs)
}

/// Largest real part of the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "CARE with A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }

    let s = b * solve_r(r, &b.transpose());
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let (z, _t, stable) = ordered_schur(h)?;
    if stable != n {
        return Err(Error::UnstabilizablePair {
            stable,
            expected: n,
        });
    }

    let u11 = z.view((0, 0), (n, n)).into_owned();
    let u21 = z.view((n, 0), (n, n)).into_owned();
    let lu = DenseLu::new(&u11);
    let cond = lu.condition_estimate();
    if cond > U11_MAX_CONDITION {
        return Err(Error::IllConditionedU11(cond));
    }
    // P = U21 U11⁻¹  ⇔  U11ᵀ Pᵀ = U21ᵀ
    let u21_t = u21.transpose();
    let mut p_t = DMatrix::zeros(n, n);
    for c in 0..n {
        p_t.set_column(c, &lu.solve_transpose(&u21_t.column(c).into_owned()));
    }
    let p = (&p_t + p_t.transpose()) * 0.5;

    let k = -solve_r(r, &(b.transpose() * &p));
    let residual = care_residual(a, b, q, r, &p);
    let abscissa = spectral_abscissa(&(a + b * &k));
    if !(abscissa < 0.0) {
        return Err(Error::NotStabilizing(abscissa));
    }
    Ok(RiccatiSolution {
        p,
        k,
        residual,
        closed_loop_abscissa: abscissa,
    })
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    size: usize,
}

fn block_real_part(t: &DMatrix<f64>, b: Block) -> f64 {
    if b.size == 1 {
        t[(b.start, b.start)]
    } else {
        0.5 * (t[(b.start, b.start)] + t[(b.start + 1, b.start + 1)])
    }
}

/// Real Schur form `H = Z T Zᵀ` with the eigenvalues of negative real part
/// leading. Returns `(Z, T, number of stable eigenvalues)`.
pub(crate) fn ordered_schur(h: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let dim = h.nrows();
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(h, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Schur("QR iteration did not converge".into()))?;
    let (mut z, mut t) = schur.unpack();

    let tiny = f64::EPSILON * scale;
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < dim {
        if i + 1 < dim && t[(i + 1, i)].abs() > tiny {
            if split_real_pair(&mut t, &mut z, i) {
                blocks.push(Block { start: i, size: 1 });
                blocks.push(Block {
                    start: i + 1,
                    size: 1,
                });
            } else {
                blocks.push(Block { start: i, size: 2 });
            }
            i += 2;
        } else {
            if i + 1 < dim {
                t[(i + 1, i)] = 0.0;
            }
            blocks.push(Block { start: i, size: 1 });
            i += 1;
        }
    }

    // Bubble every stable block up past the unstable ones in front of it.
    let mut placed = 0; // number of leading blocks already known stable
    for idx in 0..blocks.len() {
        if block_real_part(&t, blocks[idx]) >= 0.0 {
            continue;
        }
        let mut j = idx;
        while j > placed {
            let (upper, lower) = (blocks[j - 1], blocks[j]);
            swap_blocks(&mut t, &mut z, upper.start, upper.size, lower.size)?;
            blocks[j - 1] = Block {
                start: upper.start,
                size: lower.size,
            };
            blocks[j] = Block {
                start: upper.start + lower.size,
                size: upper.size,
            };
            j -= 1;
        }
        placed += 1;
    }
    let stable = blocks
        .iter()
        .filter(|b| block_real_part(&t, **b) < 0.0)
        .map(|b| b.size)
        .sum();
    Ok((z, t, stable))
}

/// If the 2×2 diagonal block at `k` has real eigenvalues, rotates it to
/// upper-triangular form and returns true.
fn split_real_pair(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, k: usize) -> bool {
    let (a, b, c, d) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
    let half = 0.5 * (a - d);
    let disc = half * half + b * c;
    if disc < 0.0 {
        return false;
    }
    let mean = 0.5 * (a + d);
    let root = disc.sqrt();
    let lambda = if half >= 0.0 {
        mean + root
    } else {
        mean - root
    };
    // eigenvector of [a b; c d] for lambda
    let (vx, vy) = if (lambda - d).abs() >= (lambda - a).abs() {
        (lambda - d, c)
    } else {
        (b, lambda - a)
    };
    let norm = vx.hypot(vy);
    if norm == 0.0 {
        return false;
    }
    let (cs, sn) = (vx / norm, vy / norm);
    let g = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
    apply_similarity(t, z, k, &g);
    t[(k + 1, k)] = 0.0;
    true
}

/// `T ← GᵀTG`, `Z ← ZG` for an orthogonal `G` acting on rows/columns
/// `k..k + G.nrows()`.
fn apply_similarity(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, k: usize, g: &DMatrix<f64>) {
    let w = g.nrows();
    let n = t.nrows();
    let rows = g.transpose() * t.view((k, 0), (w, n));
    t.view_mut((k, 0), (w, n)).copy_from(&rows);
    let cols = t.view((0, k), (n, w)) * g;
    t.view_mut((0, k), (n, w)).copy_from(&cols);
    let zc = z.view((0, k), (n, w)) * g;
    z.view_mut((0, k), (n, w)).copy_from(&zc);
}

/// Swaps the adjacent diagonal blocks of sizes `p` (at `k`) and `q`
/// (at `k + p`).
fn swap_blocks(
    t: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    k: usize,
    p: usize,
    q: usize,
) -> Result<()> {
    let w = p + q;
    let a11 = t.view((k, k), (p, p)).into_owned();
    let a12 = t.view((k, k + p), (p, q)).into_owned();
    let a22 = t.view((k + p, k + p), (q, q)).into_owned();

    // A11 X − X A22 = A12 as a pq × pq linear system, X stored column-major.
    let mut kron = DMatrix::zeros(p * q, p * q);
    for j in 0..q {
        for i in 0..p {
            let row = i + j * p;
            for l in 0..p {
                kron[(row, l + j * p)] += a11[(i, l)];
            }
            for l in 0..q {
                kron[(row, i + l * p)] -= a22[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(p * q, a12.iter().copied());
    let lu = DenseLu::new(&kron);
    if lu.is_singular() {
        return Err(Error::Schur(
            "cannot reorder blocks with equal eigenvalues".into(),
        ));
    }
    let xv = lu.solve(&rhs);
    let x = DMatrix::from_column_slice(p, q, xv.as_slice());

    // Columns of [−X; I] span the invariant subspace of A22.
    let mut basis = DMatrix::zeros(w, q + w);
    basis.view_mut((0, 0), (p, q)).copy_from(&(-x));
    for j in 0..q {
        basis[(p + j, j)] = 1.0;
    }
    for j in 0..w {
        basis[(j, q + j)] = 1.0;
    }
    let g = basis.qr().q();
    let g = g.columns(0, w).into_owned();

    apply_similarity(t, z, k, &g);

    let scale = t.view((k, k), (w, w)).amax().max(f64::MIN_POSITIVE);
    let leak = t.view((k + q, k), (p, q)).amax();
    if leak > 1e-8 * scale {
        return Err(Error::Schur(format!(
            "block swap lost accuracy ({leak:.2e})"
        )));
    }
    t.view_mut((k + q, k), (p, q)).fill(0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reorders_mixed_spectrum() {
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                3.0, 1.0, 0.5, 0.2, -2.0, 1.0, 0.3, 0.1, 0.0, 0.0, -1.0, 4.0, 0.0, 0.0, -3.0, -2.0,
            ],
        );
        let (z, t, stable) = ordered_schur(h.clone()).unwrap();
        assert_eq!(stable, 2);
        assert!((&z * &t * z.transpose() - &h).amax() < 1e-12);
        assert!(0.5 * (t[(0, 0)] + t[(1, 1)]) < 0.0);
    }
}
