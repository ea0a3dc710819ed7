//! Linearization of the DAE around an equilibrium and elimination of the
//! algebraic variables.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dae::{PowerSystem, SystemPoint, MAX_CONDITION};
use crate::error::{Error, Result};
use crate::linalg::{matrix_to_text, norm_inf, DenseLu};

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub g_x: DMatrix<f64>,
    pub g_a: DMatrix<f64>,
    pub g_u: DMatrix<f64>,
    pub h_x: DMatrix<f64>,
    pub h_a: DMatrix<f64>,
    /// `g_x − g_a h_a⁻¹ h_x`
    pub a: DMatrix<f64>,
    /// `g_u`
    pub b: DMatrix<f64>,
    /// `g_a h_a⁻¹`
    pub e: DMatrix<f64>,
    pub base: SystemPoint,
    pub h_a_condition: f64,
    lu: Option<DenseLu>,
}

/// Evaluates the five Jacobian blocks at `z0`. The reduced matrices are left
/// empty until [`reduce`] is called.
pub fn jacobians(sys: &PowerSystem, z0: &SystemPoint) -> Result<LinearizedSystem> {
    let (x, a, u) = (&z0.x, &z0.a, &z0.u);
    let gres = norm_inf(&sys.eval_g(x, a, u)?);
    if gres > 1e-8 {
        warn!("linearizing at a non-equilibrium point (|g| = {gres:.3e})");
    }
    let h_a = sys.h_a(x, a);
    let lu = DenseLu::new(&h_a);
    let cond = lu.condition_estimate();
    Ok(LinearizedSystem {
        g_x: sys.g_x(x, a),
        g_a: sys.g_a(x, a),
        g_u: sys.g_u(),
        h_x: sys.h_x(x, a),
        h_a,
        a: DMatrix::zeros(0, 0),
        b: DMatrix::zeros(0, 0),
        e: DMatrix::zeros(0, 0),
        base: z0.clone(),
        h_a_condition: cond,
        lu: Some(lu),
    })
}

/// Fills `A`, `B`, `E` by solving against the LU factor of `h_a`.
pub fn reduce(mut lin: LinearizedSystem) -> Result<LinearizedSystem> {
    if lin.h_a_condition > MAX_CONDITION {
        return Err(Error::SingularAlgebraicJacobian(lin.h_a_condition));
    }
    let lu = match lin.lu.take() {
        Some(lu) => lu,
        None => DenseLu::new(&lin.h_a),
    };
    // E = g_a h_a⁻¹  ⇔  h_aᵀ Eᵀ = g_aᵀ
    let ga_t = lin.g_a.transpose();
    let mut e_t = DMatrix::zeros(ga_t.nrows(), ga_t.ncols());
    for c in 0..ga_t.ncols() {
        e_t.set_column(c, &lu.solve_transpose(&ga_t.column(c).into_owned()));
    }
    lin.e = e_t.transpose();
    let s = lu.solve_matrix(&lin.h_x);
    lin.a = &lin.g_x - &lin.g_a * s;
    lin.b = lin.g_u.clone();
    lin.lu = Some(lu);
    Ok(lin)
}

/// Jacobians and reduction in one step.
pub fn linearize(sys: &PowerSystem, z0: &SystemPoint) -> Result<LinearizedSystem> {
    reduce(jacobians(sys, z0)?)
}

impl LinearizedSystem {
    fn factor(&self) -> DenseLu {
        self.lu.clone().unwrap_or_else(|| DenseLu::new(&self.h_a))
    }

    /// Algebraic deviation implied by `h_x Δx + h_a Δa = Δd`.
    pub fn delta_a(&self, dx: &DVector<f64>, dd: &DVector<f64>) -> DVector<f64> {
        self.factor().solve(&(dd - &self.h_x * dx))
    }

    /// `A Δx + B Δu + E Δd`
    pub fn xdot(&self, dx: &DVector<f64>, du: &DVector<f64>, dd: &DVector<f64>) -> DVector<f64> {
        &self.a * dx + &self.b * du + &self.e * dd
    }

    /// Writes every matrix to `dir` as row-major text, one file per matrix.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [
            ("g_x", &self.g_x),
            ("g_a", &self.g_a),
            ("g_u", &self.g_u),
            ("h_x", &self.h_x),
            ("h_a", &self.h_a),
            ("A", &self.a),
            ("B", &self.b),
            ("E", &self.e),
        ] {
            std::fs::write(dir.join(format!("{name}.txt")), matrix_to_text(m))?;
        }
        Ok(())
    }
}
