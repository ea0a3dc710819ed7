//! LQR weights, Riccati solution and control-cost estimates.

mod care;

pub use care::{care_residual, solve_care, spectral_abscissa, RiccatiSolution};

use nalgebra::{DMatrix, DVector};

use crate::dae::PowerSystem;
use crate::error::{Error, Result};
use crate::linalg::quad_form;

/// Coupling coefficient α and the time-scale factor `T_lqr` that converts the
/// LQR integral to the units of the generation cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeightConfig {
    pub alpha: f64,
    pub t_lqr: f64,
}

impl Default for CostWeightConfig {
    fn default() -> Self {
        CostWeightConfig {
            alpha: 0.6,
            t_lqr: 1000.0,
        }
    }
}

impl CostWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.t_lqr >= 0.0) || !self.t_lqr.is_finite() {
            return Err(Error::Config(format!(
                "T_lqr must be nonnegative, got {}",
                self.t_lqr
            )));
        }
        Ok(())
    }
}

/// Diagonal state and control weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrices {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

fn loading_weight(alpha: f64, value: f64, limit: f64) -> f64 {
    let ratio = if limit > 0.0 {
        (value / limit).clamp(0.0, 1.0)
    } else {
        0.0
    };
    1.0 / (1.0 - alpha * ratio)
}

/// Weights that grow with generator loading: `(1 − α p_g/p_max)⁻¹` on the
/// δ, ω, m states and the `r` input, `(1 − α q_g/q_max)⁻¹` on `e` and `f`.
/// Loading ratios are clipped to `[0, 1]`.
pub fn build_qr(
    sys: &PowerSystem,
    a: &DVector<f64>,
    cfg: &CostWeightConfig,
) -> Result<WeightMatrices> {
    cfg.validate()?;
    let l = sys.layout;
    if a.len() != l.na() {
        return Err(Error::Dimension(format!(
            "algebraic vector of length {}",
            a.len()
        )));
    }
    let mut q = DMatrix::zeros(l.nx(), l.nx());
    let mut r = DMatrix::zeros(l.nu(), l.nu());
    for (i, gen) in sys.case.generators.iter().enumerate() {
        let c = &gen.cost;
        let wp = loading_weight(cfg.alpha, a[l.pg(i)], c.p_max);
        let wq = loading_weight(cfg.alpha, a[l.qg(i)], c.q_max);
        q[(l.delta(i), l.delta(i))] = wp;
        q[(l.omega(i), l.omega(i))] = wp;
        q[(l.mech(i), l.mech(i))] = wp;
        q[(l.emf(i), l.emf(i))] = wq;
        r[(l.r(i), l.r(i))] = wp;
        r[(l.f(i), l.f(i))] = wq;
    }
    Ok(WeightMatrices { q, r })
}

/// `(T/2) (x_eq − x0)ᵀ P (x_eq − x0)`
pub fn estimate_control_cost(
    p: &DMatrix<f64>,
    x_eq: &DVector<f64>,
    x0: &DVector<f64>,
    t_lqr: f64,
) -> f64 {
    let dx = x_eq - x0;
    0.5 * t_lqr * quad_form(p, &dx)
}

/// `u = u_eq + K (x − x_eq)`
pub fn feedback(
    u_eq: &DVector<f64>,
    x_eq: &DVector<f64>,
    k: &DMatrix<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    u_eq + k * (x - x_eq)
}
