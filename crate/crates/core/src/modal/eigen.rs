use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mode {
    pub lambda: Complex64,
    pub f_hz: f64,
    pub zeta: f64,
    /// Sum-normalized participation factors, one per state.
    pub participation: Vec<f64>,
    pub right: Vec<Complex64>,
    pub left: Vec<Complex64>,
    /// Repeated or ill-conditioned eigenvalue; eigenvectors unreliable.
    pub flagged: bool,
}

pub fn damping_ratio(lambda: Complex64) -> f64 {
    let r = lambda.norm();
    if r == 0.0 {
        0.0
    } else {
        -lambda.re / r
    }
}

pub fn frequency_hz(lambda: Complex64) -> f64 {
    lambda.im.abs() / (2.0 * std::f64::consts::PI)
}

/// Diagonal similarity `D^-1 A D` with power-of-two scales that brings row
/// and column norms close together.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = a.clone();
    let radix = 2.0f64;
    let mut done = false;
    for _ in 0..100 {
        if done {
            break;
        }
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let mut rr = r;
            while cc < rr / radix {
                cc *= radix;
                rr /= radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix;
                rr *= radix;
                f /= radix;
            }
            if (cc + rr) < 0.95 * s {
                done = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

/// All eigenvalues of a real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("state matrix has non-finite entries".into()));
    }
    // the QR iteration occasionally stalls; retry on the balanced matrix and
    // with looser deflation thresholds
    let balanced = balance(a);
    for tol in [1.0, 10.0, 100.0, 1000.0] {
        for m in [a, &balanced] {
            if let Some(schur) = Schur::try_new(m.clone(), tol * f64::EPSILON, 10_000) {
                return Ok(schur.complex_eigenvalues().iter().copied().collect());
            }
        }
    }
    Err(Error::Eigen("Schur iteration did not converge".into()))
}

fn inverse_iteration(m: &DMatrix<Complex64>, lambda: Complex64) -> (DVector<Complex64>, f64) {
    let n = m.nrows();
    let scale = lambda.norm().max(1.0);
    let shift = lambda + Complex64::new(1e-10, 1e-10) * scale;
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, j)] - shift
        } else {
            m[(i, j)]
        }
    });
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0, 0.1 * (i % 7) as f64));
    for _ in 0..3 {
        if let Some(next) = lu.solve(&v) {
            let norm = next.norm();
            if norm.is_finite() && norm > 0.0 {
                v = next / Complex64::new(norm, 0.0);
            }
        }
    }
    let res = (m * &v - &v * lambda).norm();
    (v, res)
}

/// Participation factors of the eigenvalue `lambda` of `a`, with the right
/// and left eigenvectors (`w^T v = 1`) and a reliability flag.
pub fn participation_factors(
    a: &DMatrix<f64>,
    lambda: Complex64,
) -> (Vec<f64>, Vec<Complex64>, Vec<Complex64>, bool) {
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let (v, rv) = inverse_iteration(&ac, lambda);
    let (w, rw) = inverse_iteration(&ac.transpose(), lambda);
    let dot = w.iter().zip(v.iter()).fold(Complex64::new(0.0, 0.0), |s, (a, b)| s + a * b);
    let anorm = a.amax().max(1.0);
    let mut flagged = rv > 1e-6 * anorm || rw > 1e-6 * anorm || dot.norm() < 1e-10;
    let w = if dot.norm() > 0.0 { w / dot } else { w };
    let raw: Vec<f64> = w.iter().zip(v.iter()).map(|(a, b)| (a * b).norm()).collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        flagged = true;
    }
    let p = if sum > 0.0 && sum.is_finite() {
        raw.iter().map(|x| x / sum).collect()
    } else {
        vec![0.0; raw.len()]
    };
    (p, v.iter().copied().collect(), w.iter().copied().collect(), flagged)
}

/// Modes of the state matrix: conjugate pairs once with positive imaginary
/// part, sorted by frequency then real part.
pub fn eigen_analysis(lin: &LinearModel) -> Result<Vec<Mode>> {
    let eig = eigenvalues(&lin.a)?;
    let mut kept: Vec<Complex64> = eig.iter().copied().filter(|l| l.im >= 0.0).collect();
    kept.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    let mut out = Vec::with_capacity(kept.len());
    for &lambda in &kept {
        let (participation, right, left, mut flagged) = participation_factors(&lin.a, lambda);
        let close = eig
            .iter()
            .filter(|o| (*o - lambda).norm() <= 1e-7 * lambda.norm().max(1.0))
            .count();
        if close > 1 {
            flagged = true;
        }
        out.push(Mode {
            lambda,
            f_hz: frequency_hz(lambda),
            zeta: damping_ratio(lambda),
            participation,
            right,
            left,
            flagged,
        });
    }
    Ok(out)
}

/// Modal assurance criterion between two mode shapes.
pub fn mac(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let dot = a
        .iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |s, (x, y)| s + x.conj() * y);
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot.norm_sqr() / (na * nb)
    }
}

/// Rule picking the electromechanical target mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSelector {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    /// Minimum summed participation of synchronous-machine speed states.
    pub min_speed_participation: f64,
}

impl Default for TargetSelector {
    fn default() -> Self {
        Self {
            f_lo_hz: 0.2,
            f_hi_hz: 2.0,
            min_speed_participation: 0.1,
        }
    }
}

impl TargetSelector {
    pub fn speed_participation(&self, mode: &Mode, labels: &[String]) -> f64 {
        labels
            .iter()
            .zip(&mode.participation)
            .filter(|(l, _)| l.ends_with(".omega"))
            .map(|(_, p)| p)
            .sum()
    }

    pub fn qualifies(&self, mode: &Mode, labels: &[String]) -> bool {
        mode.f_hz >= self.f_lo_hz
            && mode.f_hz <= self.f_hi_hz
            && self.speed_participation(mode, labels) >= self.min_speed_participation
    }
}

/// Index of the least-damped qualifying mode.
pub fn select_target(modes: &[Mode], labels: &[String], sel: &TargetSelector) -> Result<usize> {
    modes
        .iter()
        .enumerate()
        .filter(|(_, m)| sel.qualifies(m, labels))
        .min_by(|a, b| a.1.zeta.total_cmp(&b.1.zeta))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::NoTargetMode(format!(
                "no mode in [{}, {}] Hz with speed participation >= {}",
                sel.f_lo_hz, sel.f_hi_hz, sel.min_speed_participation
            ))
        })
}

/// Modes table: identifier, eigenvalue, frequency, damping and the five
/// largest participations as `state:value`.
pub fn modes_to_csv(modes: &[Mode], labels: &[String]) -> String {
    let mut out = String::from("mode_id,re_1_s,im_rad_s,f_hz,damping_pct,p1,p2,p3,p4,p5\n");
    for (k, m) in modes.iter().enumerate() {
        let _ = write!(
            out,
            "{},{:.8},{:.8},{:.8},{:.6}",
            k + 1,
            m.lambda.re,
            m.lambda.im,
            m.f_hz,
            100.0 * m.zeta
        );
        let mut idx: Vec<usize> = (0..m.participation.len()).collect();
        idx.sort_by(|&a, &b| m.participation[b].total_cmp(&m.participation[a]).then(a.cmp(&b)));
        for &i in idx.iter().take(5) {
            let _ = write!(out, ",{}:{:.6}", labels[i], m.participation[i]);
        }
        for _ in idx.len().min(5)..5 {
            out.push(',');
        }
        out.push('\n');
    }
    out
}
