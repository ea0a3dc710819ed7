use nalgebra::DMatrix;
use num_complex::Complex64;

use super::NetworkCase;
use crate::error::{Error, Result};

/// Bus admittance matrix Y = G + jB in internal bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.g[(i, j)], self.b[(i, j)])
    }

    fn add(&mut self, i: usize, j: usize, y: Complex64) {
        self.g[(i, j)] += y.re;
        self.b[(i, j)] += y.im;
    }
}

/// Assembles Y from π-model branches (with off-nominal taps and phase
/// shifters) and bus shunts.
pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_bus();
    let mut y = AdmittanceMatrix {
        g: DMatrix::zeros(n, n),
        b: DMatrix::zeros(n, n),
    };
    for br in &case.branches {
        let z = Complex64::new(br.series_r, br.series_x);
        if z.norm() == 0.0 {
            return Err(Error::InvalidCase(format!(
                "zero series impedance on branch {}-{}",
                case.buses[br.from].id, case.buses[br.to].id
            )));
        }
        let ys = z.inv();
        let yc = Complex64::new(0.0, br.charging_b / 2.0);
        let t = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let (f, k) = (br.from, br.to);
        y.add(f, f, (ys + yc) / (br.tap_ratio * br.tap_ratio));
        y.add(k, k, ys + yc);
        y.add(f, k, -ys / t.conj());
        y.add(k, f, -ys / t);
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y.add(i, i, Complex64::new(bus.shunt_g, bus.shunt_b));
    }
    Ok(y)
}
