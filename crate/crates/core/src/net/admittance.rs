use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Branch, Bus};
use crate::error::{Error, Result};

/// Dense nodal admittance matrix, rows ordered like `buses`.
///
/// Bus shunts are placed on the diagonal. Branch charging is split half at
/// each end; the tap sits on the `from` side.
pub fn build_admittance(buses: &[Bus], branches: &[Branch]) -> Result<DMatrix<Complex64>> {
    let n = buses.len();
    let index = |id: u32| {
        buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBus(id))
    };
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, bus) in buses.iter().enumerate() {
        y[(i, i)] += bus.shunt.admittance();
    }
    for br in branches {
        let f = index(br.from)?;
        let t = index(br.to)?;
        let ys = br.series_admittance();
        let half = Complex64::new(0.0, br.b / 2.0);
        let tap = br.tap;
        y[(f, f)] += (ys + half) / (tap * tap);
        y[(t, t)] += ys + half;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    Ok(y)
}
