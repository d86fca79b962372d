use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{build_admittance, BusKind, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    pub vm: Vec<f64>,
    /// Angles in radians, slack at zero.
    pub va: Vec<f64>,
    /// Net injections computed at the solution, system pu.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, idx: usize) -> Complex64 {
        Complex64::from_polar(self.vm[idx], self.va[idx])
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        (0..self.vm.len()).map(|i| self.voltage(i)).collect()
    }

    pub fn index_of(&self, id: u32) -> Result<usize> {
        self.bus_ids
            .iter()
            .position(|&b| b == id)
            .ok_or(Error::UnknownBus(id))
    }

    /// Plot-ready CSV: bus, Vmag, Vang_deg, P_pu, Q_pu.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bus,Vmag,Vang_deg,P_pu,Q_pu\n");
        for i in 0..self.bus_ids.len() {
            out.push_str(&format!(
                "{},{:.10},{:.10},{:.10},{:.10}\n",
                self.bus_ids[i],
                self.vm[i],
                self.va[i].to_degrees(),
                self.p[i],
                self.q[i]
            ));
        }
        out
    }
}

fn complex_injection(y: &DMatrix<Complex64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let i = y * v;
    v.zip_map(&i, |vk, ik| vk * ik.conj())
}

/// Newton-Raphson power flow in polar coordinates from a flat start.
///
/// Converged means the infinity norm of the P (non-slack) and Q (PQ)
/// mismatches is at most `tol`.
pub fn solve_powerflow(net: &Network, tol: f64, max_iter: usize) -> Result<PowerFlowSolution> {
    net.validate()?;
    let n = net.buses.len();
    let y = build_admittance(&net.buses, &net.branches)?;

    let pvpq: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind == BusKind::PQ).collect();
    let s_spec: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_inj, b.q_inj))
        .collect();

    let mut vm: Vec<f64> = net
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::PQ { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];
    let mut history = Vec::new();

    let mismatch = |vm: &[f64], va: &[f64]| -> (DVector<f64>, f64, DVector<Complex64>) {
        let v = DVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(vm[i], va[i])));
        let s = complex_injection(&y, &v);
        let mut f = DVector::zeros(pvpq.len() + pq.len());
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = s[i].re - s_spec[i].re;
        }
        for (k, &i) in pq.iter().enumerate() {
            f[pvpq.len() + k] = s[i].im - s_spec[i].im;
        }
        let norm = f.amax();
        (f, norm, v)
    };

    let mut iterations = 0;
    loop {
        let (f, norm, v) = mismatch(&vm, &va);
        history.push(norm);
        if norm <= tol {
            let s = complex_injection(&y, &v);
            return Ok(PowerFlowSolution {
                bus_ids: net.buses.iter().map(|b| b.id).collect(),
                vm,
                va,
                p: s.iter().map(|c| c.re).collect(),
                q: s.iter().map(|c| c.im).collect(),
                converged: true,
                iterations,
                max_mismatch: norm,
            });
        }
        if iterations >= max_iter || !norm.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                last: norm,
                history,
            });
        }

        let jac = jacobian(&y, &v, &pvpq, &pq);
        let dx = jac.lu().solve(&(-f)).ok_or_else(|| Error::PowerFlowDiverged {
            iterations,
            last: norm,
            history: history.clone(),
        })?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + k];
        }
        iterations += 1;
    }
}

fn jacobian(
    y: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    pvpq: &[usize],
    pq: &[usize],
) -> DMatrix<f64> {
    let n = v.len();
    let i_bus = y * v;
    let vnorm = v.map(|c| c / c.norm());
    let j = Complex64::new(0.0, 1.0);
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm)
    let mut ds_dva = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dvm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            let mut a = -y[(r, c)] * v[c];
            if r == c {
                a += i_bus[r];
            }
            ds_dva[(r, c)] = j * v[r] * a.conj();
            let mut m = v[r] * (y[(r, c)] * vnorm[c]).conj();
            if r == c {
                m += i_bus[r].conj() * vnorm[r];
            }
            ds_dvm[(r, c)] = m;
        }
    }
    let na = pvpq.len();
    let nm = pq.len();
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (a, &r) in pvpq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(a, b)] = ds_dva[(r, c)].re;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(a, na + b)] = ds_dvm[(r, c)].re;
        }
    }
    for (a, &r) in pq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(na + a, b)] = ds_dva[(r, c)].im;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(na + a, na + b)] = ds_dvm[(r, c)].im;
        }
    }
    jac
}

/// Constant impedance that draws `p + jq` at voltage magnitude `vm`.
///
/// Returns `None` for a zero load, meaning the shunt is absent.
pub fn load_to_impedance(vm: f64, p: f64, q: f64) -> Result<Option<Complex64>> {
    if !(vm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "load bus voltage must be positive, got {vm}"
        )));
    }
    if p == 0.0 && q == 0.0 {
        return Ok(None);
    }
    Ok(Some(vm * vm / Complex64::new(p, -q)))
}
