//! Power oscillation damping controller: washout, low-pass, `N_S` lead/lag
//! stages, gain and a symmetric output clamp, driven by the frequency
//! deviation imposed by the grid-forming converter.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodParams {
    #[serde(rename = "k_pu")]
    pub k: f64,
    #[serde(rename = "tf_s")]
    pub t_f: f64,
    #[serde(rename = "tw_s")]
    pub t_w: f64,
    /// `T_S1 = T_S2 = 0` encodes the non-compensated controller.
    #[serde(rename = "ts1_s")]
    pub t_s1: f64,
    #[serde(rename = "ts2_s")]
    pub t_s2: f64,
    pub n_s: usize,
    #[serde(rename = "limit_pu")]
    pub limit: f64,
}

impl PodParams {
    /// Controller without lead/lag compensation.
    pub fn non_compensated(k: f64, t_f: f64, t_w: f64, n_s: usize, limit: f64) -> Self {
        Self {
            k,
            t_f,
            t_w,
            t_s1: 0.0,
            t_s2: 0.0,
            n_s,
            limit,
        }
    }

    /// POD-P row of the published two-area design.
    pub fn published_pod_p() -> Self {
        Self {
            k: 200.0,
            t_f: 0.1,
            t_w: 5.0,
            t_s1: 0.20,
            t_s2: 0.37,
            n_s: 2,
            limit: 0.2,
        }
    }

    /// POD-Q row of the published two-area design.
    pub fn published_pod_q() -> Self {
        Self {
            t_s1: 0.26,
            t_s2: 0.29,
            ..Self::published_pod_p()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_f > 0.0 && self.t_w > 0.0) {
            return Err(Error::InvalidParameter("POD T_f and T_W must be positive".into()));
        }
        let nc = self.t_s1 == 0.0 && self.t_s2 == 0.0;
        if !nc && !(self.t_s1 > 0.0 && self.t_s2 > 0.0) {
            return Err(Error::InvalidParameter(
                "POD lead/lag time constants must both be positive or both zero".into(),
            ));
        }
        if self.n_s == 0 {
            return Err(Error::InvalidParameter("POD needs at least one lead/lag stage".into()));
        }
        if !(self.limit > 0.0) {
            return Err(Error::InvalidParameter("POD output limit must be positive".into()));
        }
        if !self.k.is_finite() {
            return Err(Error::InvalidParameter("POD gain must be finite".into()));
        }
        Ok(())
    }

    pub fn is_non_compensated(&self) -> bool {
        self.t_s2 == 0.0
    }

    /// Washout, low-pass and one state per lead/lag stage.
    pub fn state_count(&self) -> usize {
        2 + self.n_s
    }

    pub fn state_names(&self) -> Vec<String> {
        let mut names = vec!["washout".to_string(), "lowpass".to_string()];
        names.extend((1..=self.n_s).map(|k| format!("leadlag{k}")));
        names
    }

    /// Closed-form transfer function of the unsaturated block at `s = j omega`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        self.transfer(Complex64::new(0.0, omega))
    }

    /// Transfer function at an arbitrary complex frequency.
    pub fn transfer(&self, s: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        let washout = s * self.t_w / (one + s * self.t_w);
        let lowpass = one / (one + s * self.t_f);
        let stage = if self.is_non_compensated() {
            one
        } else {
            (one + s * self.t_s1) / (one + s * self.t_s2)
        };
        self.k * washout * lowpass * stage.powi(self.n_s as i32)
    }

    fn chain_output(&self, x: &[f64]) -> f64 {
        let mut y = x[1];
        let ratio = if self.is_non_compensated() {
            1.0
        } else {
            self.t_s1 / self.t_s2
        };
        for k in 0..self.n_s {
            let xs = x[2 + k];
            y = xs + ratio * (y - xs);
        }
        y
    }

    /// Output before the clamp.
    pub fn unsaturated_output(&self, x: &[f64]) -> f64 {
        self.k * self.chain_output(x)
    }

    /// Clamped output; a function of the states only.
    pub fn output(&self, x: &[f64]) -> f64 {
        self.unsaturated_output(x).clamp(-self.limit, self.limit)
    }

    /// Writes the block derivatives for input `dw` and returns the clamped
    /// output.
    pub fn derivatives(&self, x: &[f64], dw: f64, dx: &mut [f64]) -> f64 {
        let washout_out = dw - x[0];
        dx[0] = washout_out / self.t_w;
        dx[1] = (washout_out - x[1]) / self.t_f;
        let mut input = x[1];
        let ratio = if self.is_non_compensated() {
            1.0
        } else {
            self.t_s1 / self.t_s2
        };
        for k in 0..self.n_s {
            let xs = x[2 + k];
            if self.is_non_compensated() {
                // inert placeholder keeps the state count fixed
                dx[2 + k] = -xs;
            } else {
                dx[2 + k] = (input - xs) / self.t_s2;
            }
            input = xs + ratio * (input - xs);
        }
        (self.k * input).clamp(-self.limit, self.limit)
    }

    /// Realization matrices `(A, B, C, D)` of the unsaturated block, built
    /// by evaluating the derivative map on unit vectors.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let n = self.state_count();
        let mut a = DMatrix::zeros(n, n);
        let mut c = DVector::zeros(n);
        let mut dx = vec![0.0; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            self.derivatives(&e, 0.0, &mut dx);
            for i in 0..n {
                a[(i, j)] = dx[i];
            }
            c[j] = self.unsaturated_output(&e);
        }
        self.derivatives(&vec![0.0; n], 1.0, &mut dx);
        let b = DVector::from_column_slice(&dx);
        (a, b, c, 0.0)
    }
}

/// `C (sI - A)^-1 B + D` evaluated by a dense complex solve.
pub fn realization_response(
    (a, b, c, d): &(DMatrix<f64>, DVector<f64>, DVector<f64>, f64),
    s: Complex64,
) -> Complex64 {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(a[(i, j)], 0.0)
    });
    let rhs = DVector::from_fn(n, |i, _| Complex64::new(b[i], 0.0));
    let x = m.lu().solve(&rhs).expect("s is not an eigenvalue of A");
    x.iter()
        .zip(c.iter())
        .fold(Complex64::new(*d, 0.0), |acc, (xi, ci)| acc + xi * ci)
}
