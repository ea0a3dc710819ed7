//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Dense LU factorization with partial pivoting, `P A = L U`.
///
/// Unlike `nalgebra::LU` this keeps enough structure to solve with `A^T`,
/// which the 1-norm condition estimator needs.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    norm1: f64,
    singular: bool,
}

impl DenseLu {
    pub fn new(a: &DMatrix<f64>) -> Self {
        assert!(a.is_square(), "LU of a non-square matrix");
        let n = a.nrows();
        let norm1 = matrix_norm1(a);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;

        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                singular = true;
                continue;
            }
            if piv != k {
                lu.swap_rows(k, piv);
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let l = lu[(i, k)] / pivot;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in (k + 1)..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= l * ukj;
                    }
                }
            }
        }

        DenseLu {
            lu,
            perm,
            norm1,
            singular,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        // A^T = U^T L^T P, so solve U^T w = b, L^T v = w, x = P^T v.
        let mut w = b.clone();
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s -= self.lu[(j, i)] * w[j];
            }
            w[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in (i + 1)..n {
                s -= self.lu[(j, i)] * w[j];
            }
            w[i] = s;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = w[i];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col = self.solve(&b.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }

    /// Hager–Higham estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        if self.singular {
            return f64::INFINITY;
        }
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            if !est.is_finite() {
                return f64::INFINITY;
            }
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
                if v.abs() > acc.1 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            if zmax <= z.dot(&x) {
                break;
            }
            x = DVector::zeros(n);
            x[jmax] = 1.0;
        }
        self.norm1 * est
    }
}

pub fn matrix_norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `x^T M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Writes a matrix as row-major, space-separated text.
pub fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.17e}", m[(i, j)]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_and_transposes() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let lu = DenseLu::new(&a);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = lu.solve(&b);
        assert!((&a * &x - &b).amax() < 1e-14);
        let xt = lu.solve_transpose(&b);
        assert!((a.transpose() * &xt - &b).amax() < 1e-14);
    }

    #[test]
    fn condition_estimate_tracks_exact_value() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-8]);
        let c = DenseLu::new(&a).condition_estimate();
        assert!((c - 1e8).abs() / 1e8 < 1e-12);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let lu = DenseLu::new(&s);
        assert!(lu.is_singular() || lu.condition_estimate() > 1e15);
    }
}
