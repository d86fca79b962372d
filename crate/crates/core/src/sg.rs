//! Synchronous generator: sixth-order flux-linkage model with stator
//! transients, swing equation, AC4A exciter and IEEEG1 governor-turbine.
//!
//! All quantities are per unit on the machine rating. The rotor frame uses
//! `d + jq` complex notation with the q-axis at angle `delta` from the real
//! axis of the synchronously rotating network frame.

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical, mechanical and step-up transformer data of one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    #[serde(rename = "rs_pu_dev")]
    pub rs: f64,
    #[serde(rename = "xl_pu_dev")]
    pub xl: f64,
    #[serde(rename = "xd_pu_dev")]
    pub xd: f64,
    #[serde(rename = "xd_tr_pu_dev")]
    pub xd_tr: f64,
    #[serde(rename = "xd_sub_pu_dev")]
    pub xd_sub: f64,
    #[serde(rename = "xq_pu_dev")]
    pub xq: f64,
    #[serde(rename = "xq_tr_pu_dev")]
    pub xq_tr: f64,
    #[serde(rename = "xq_sub_pu_dev")]
    pub xq_sub: f64,
    #[serde(rename = "td0_tr_s")]
    pub td0_tr: f64,
    #[serde(rename = "td0_sub_s")]
    pub td0_sub: f64,
    #[serde(rename = "tq0_tr_s")]
    pub tq0_tr: f64,
    #[serde(rename = "tq0_sub_s")]
    pub tq0_sub: f64,
    /// Step-up transformer, used by builders that create the unit branch.
    #[serde(rename = "rtr_pu_dev")]
    pub r_tr: f64,
    #[serde(rename = "xtr_pu_dev")]
    pub x_tr: f64,
    #[serde(rename = "h_s")]
    pub h: f64,
    #[serde(rename = "d_pu")]
    pub d: f64,
    /// Terminal snubber resistance; only applied when the unit enables it.
    #[serde(rename = "rsnb_pu_dev")]
    pub r_snb: f64,
}

impl Default for SgParams {
    fn default() -> Self {
        // Appendix data of the 118-bus machines; H and D are not published.
        Self {
            rs: 0.0025,
            xl: 0.2,
            xd: 1.8,
            xd_tr: 0.3,
            xd_sub: 0.25,
            xq: 1.7,
            xq_tr: 0.55,
            xq_sub: 0.25,
            td0_tr: 8.0,
            td0_sub: 0.03,
            tq0_tr: 0.4,
            tq0_sub: 0.05,
            r_tr: 0.002,
            x_tr: 0.1,
            h: 4.0,
            d: 0.0,
            r_snb: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ac4aParams {
    pub ka: f64,
    #[serde(rename = "ta_s")]
    pub ta: f64,
    #[serde(rename = "tb_s")]
    pub tb: f64,
    #[serde(rename = "tc_s")]
    pub tc: f64,
    #[serde(rename = "vr_max_pu")]
    pub vr_max: f64,
    #[serde(rename = "vr_min_pu")]
    pub vr_min: f64,
}

impl Default for Ac4aParams {
    fn default() -> Self {
        Self {
            ka: 200.0,
            ta: 0.015,
            tb: 10.0,
            tc: 1.0,
            vr_max: 10.0,
            vr_min: -10.0,
        }
    }
}

impl Ac4aParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ka > 0.0 && self.ta > 0.0 && self.tb >= 0.0 && self.tc >= 0.0) {
            return Err(Error::InvalidParameter(
                "AC4A needs KA > 0, TA > 0 and non-negative TB, TC".into(),
            ));
        }
        if self.vr_min >= self.vr_max {
            return Err(Error::InvalidParameter("AC4A output limits inverted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ieeeg1Params {
    pub r: f64,
    /// Time constants T1..T7 in seconds; zero removes the corresponding lag.
    pub t: [f64; 7],
    /// Stage fractions K1..K8.
    pub k: [f64; 8],
}

impl Default for Ieeeg1Params {
    fn default() -> Self {
        Self {
            r: 0.05,
            t: [0.0, 0.0, 0.1, 0.3, 7.0, 0.6, 0.0],
            k: [0.3, 0.4, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0],
        }
    }
}

impl Ieeeg1Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidParameter("IEEEG1 droop R must be positive".into()));
        }
        if !(self.t[2] > 0.0) {
            return Err(Error::InvalidParameter("IEEEG1 servo T3 must be positive".into()));
        }
        if self.t.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidParameter("IEEEG1 time constants must be >= 0".into()));
        }
        let sum: f64 = self.k.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidParameter("IEEEG1 stage fractions sum to zero".into()));
        }
        Ok(())
    }

    fn fraction_sum(&self) -> f64 {
        self.k.iter().sum()
    }
}

/// Fundamental (equivalent-circuit) parameters derived from the standard
/// reactances and open-circuit time constants.
#[derive(Debug, Clone)]
pub struct MachineCircuit {
    pub xad: f64,
    pub xaq: f64,
    pub xfd: f64,
    pub xkd: f64,
    pub xkq1: f64,
    pub xkq2: f64,
    pub rfd: f64,
    pub rkd: f64,
    pub rkq1: f64,
    pub rkq2: f64,
    pub rs: f64,
    ld_inv: Matrix3<f64>,
    lq_inv: Matrix3<f64>,
}

impl MachineCircuit {
    pub fn from_params(p: &SgParams, omega_b: f64) -> Result<Self> {
        let ok = p.xd >= p.xd_tr
            && p.xd_tr >= p.xd_sub
            && p.xd_sub > p.xl
            && p.xq >= p.xq_tr
            && p.xq_tr >= p.xq_sub
            && p.xq_sub > p.xl
            && p.xl > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(
                "machine reactances must satisfy X >= X' >= X'' > Xl > 0 on both axes".into(),
            ));
        }
        if [p.td0_tr, p.td0_sub, p.tq0_tr, p.tq0_sub, p.h]
            .iter()
            .any(|&t| !(t > 0.0))
        {
            return Err(Error::InvalidParameter(
                "machine time constants and H must be positive".into(),
            ));
        }
        if p.xd == p.xd_tr || p.xq == p.xq_tr || p.xd_tr == p.xd_sub || p.xq_tr == p.xq_sub {
            return Err(Error::InvalidParameter(
                "equal synchronous/transient/subtransient reactances leave a rotor circuit undefined"
                    .into(),
            ));
        }

        let xad = p.xd - p.xl;
        let xaq = p.xq - p.xl;
        let xfd = xad * (p.xd_tr - p.xl) / (p.xd - p.xd_tr);
        let xkd = 1.0 / (1.0 / (p.xd_sub - p.xl) - 1.0 / xad - 1.0 / xfd);
        let xkq1 = xaq * (p.xq_tr - p.xl) / (p.xq - p.xq_tr);
        let xkq2 = 1.0 / (1.0 / (p.xq_sub - p.xl) - 1.0 / xaq - 1.0 / xkq1);
        if !(xfd > 0.0 && xkd > 0.0 && xkq1 > 0.0 && xkq2 > 0.0) {
            return Err(Error::InvalidParameter(
                "standard parameters map to a non-physical rotor circuit".into(),
            ));
        }
        let rfd = (xad + xfd) / (omega_b * p.td0_tr);
        let rkd = (xkd + xad * xfd / (xad + xfd)) / (omega_b * p.td0_sub);
        let rkq1 = (xaq + xkq1) / (omega_b * p.tq0_tr);
        let rkq2 = (xkq2 + xaq * xkq1 / (xaq + xkq1)) / (omega_b * p.tq0_sub);

        let ld = Matrix3::new(
            p.xl + xad,
            xad,
            xad,
            xad,
            xfd + xad,
            xad,
            xad,
            xad,
            xkd + xad,
        );
        let lq = Matrix3::new(
            p.xl + xaq,
            xaq,
            xaq,
            xaq,
            xkq1 + xaq,
            xaq,
            xaq,
            xaq,
            xkq2 + xaq,
        );
        let ld_inv = ld
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular d-axis inductance".into()))?;
        let lq_inv = lq
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular q-axis inductance".into()))?;
        Ok(Self {
            xad,
            xaq,
            xfd,
            xkd,
            xkq1,
            xkq2,
            rfd,
            rkd,
            rkq1,
            rkq2,
            rs: p.rs,
            ld_inv,
            lq_inv,
        })
    }
}

/// Index map of one machine's states inside its slice of the state vector.
#[derive(Debug, Clone)]
pub struct SgLayout {
    exc_ll: Option<usize>,
    exc_vr: Option<usize>,
    gov_ll: Option<usize>,
    gov_gv: Option<usize>,
    stages: [Option<usize>; 4],
    len: usize,
    names: Vec<&'static str>,
}

pub const PSI_D: usize = 0;
pub const PSI_Q: usize = 1;
pub const PSI_FD: usize = 2;
pub const PSI_KD: usize = 3;
pub const PSI_KQ1: usize = 4;
pub const PSI_KQ2: usize = 5;
pub const OMEGA: usize = 6;
pub const DELTA: usize = 7;

impl SgLayout {
    pub fn new(exciter: Option<&Ac4aParams>, governor: Option<&Ieeeg1Params>) -> Self {
        let mut names = vec![
            "psi_d", "psi_q", "psi_fd", "psi_kd", "psi_kq1", "psi_kq2", "omega", "delta",
        ];
        let next = |name: &'static str, names: &mut Vec<&'static str>| {
            names.push(name);
            Some(names.len() - 1)
        };
        let (mut exc_ll, mut exc_vr) = (None, None);
        if let Some(e) = exciter {
            if e.tb > 0.0 {
                exc_ll = next("exc_ll", &mut names);
            }
            exc_vr = next("exc_vr", &mut names);
        }
        let (mut gov_ll, mut gov_gv) = (None, None);
        let mut stages = [None; 4];
        if let Some(g) = governor {
            if g.t[0] > 0.0 {
                gov_ll = next("gov_ll", &mut names);
            }
            gov_gv = next("gov_gv", &mut names);
            const STAGE: [&str; 4] = ["turb_s1", "turb_s2", "turb_s3", "turb_s4"];
            for (k, stage) in stages.iter_mut().enumerate() {
                if g.t[3 + k] > 0.0 {
                    *stage = next(STAGE[k], &mut names);
                }
            }
        }
        Self {
            exc_ll,
            exc_vr,
            gov_ll,
            gov_gv,
            stages,
            len: names.len(),
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }
}

/// Everything needed to evaluate one machine, including the references
/// fixed at initialization.
#[derive(Debug, Clone)]
pub struct SgModel {
    pub params: SgParams,
    pub exciter: Option<Ac4aParams>,
    pub governor: Option<Ieeeg1Params>,
    pub circuit: MachineCircuit,
    pub layout: SgLayout,
    pub omega_b: f64,
    /// Exciter voltage reference, or the constant field voltage without exciter.
    pub v_ref: f64,
    /// Governor load reference, or the constant mechanical power without governor.
    pub p_ref: f64,
}

/// Instantaneous machine quantities beyond the state derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct SgOutputs {
    /// Stator current injected into the network frame.
    pub i_net: Complex64,
    /// Rotor-frame stator current and voltage (`d + jq`).
    pub i_rotor: Complex64,
    pub v_rotor: Complex64,
    pub efd: f64,
    pub p_mech: f64,
    pub t_elec: f64,
}

impl SgModel {
    pub fn new(
        params: SgParams,
        exciter: Option<Ac4aParams>,
        governor: Option<Ieeeg1Params>,
        omega_b: f64,
    ) -> Result<Self> {
        if let Some(e) = &exciter {
            e.validate()?;
        }
        if let Some(g) = &governor {
            g.validate()?;
        }
        let circuit = MachineCircuit::from_params(&params, omega_b)?;
        let layout = SgLayout::new(exciter.as_ref(), governor.as_ref());
        Ok(Self {
            params,
            exciter,
            governor,
            circuit,
            layout,
            omega_b,
            v_ref: 1.0,
            p_ref: 0.0,
        })
    }

    fn rotor_rotation(delta: f64) -> Complex64 {
        // network -> rotor frame: multiply by j e^{-j delta}
        Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, -delta)
    }

    /// Stator currents (d, q) and rotor circuit currents from flux linkages.
    fn currents(&self, x: &[f64]) -> ([f64; 3], [f64; 3]) {
        let c = &self.circuit;
        let d = c.ld_inv * nalgebra::Vector3::new(x[PSI_D], x[PSI_FD], x[PSI_KD]);
        let q = c.lq_inv * nalgebra::Vector3::new(x[PSI_Q], x[PSI_KQ1], x[PSI_KQ2]);
        // flux = L [-i_s, i_r1, i_r2]
        ([-d[0], d[1], d[2]], [-q[0], q[1], q[2]])
    }

    /// Network-frame current injection as a function of the states only.
    pub fn injection(&self, x: &[f64]) -> Complex64 {
        let (d, q) = self.currents(x);
        Complex64::new(d[0], q[0]) / Self::rotor_rotation(x[DELTA])
    }

    /// State derivatives for terminal voltage `v_term` (network frame, device base).
    pub fn derivatives(&self, x: &[f64], v_term: Complex64, dx: &mut [f64]) -> SgOutputs {
        let c = &self.circuit;
        let wb = self.omega_b;
        let rot = Self::rotor_rotation(x[DELTA]);
        let v_r = v_term * rot;
        let (vd, vq) = (v_r.re, v_r.im);
        let (d, q) = self.currents(x);
        let (id, ifd, ikd) = (d[0], d[1], d[2]);
        let (iq, ikq1, ikq2) = (q[0], q[1], q[2]);
        let w = x[OMEGA];

        let efd = self.field_voltage(x, v_term.norm(), dx);
        let p_mech = self.mechanical_power(x, w - 1.0, dx);

        dx[PSI_D] = wb * (vd + w * x[PSI_Q] + c.rs * id);
        dx[PSI_Q] = wb * (vq - w * x[PSI_D] + c.rs * iq);
        dx[PSI_FD] = wb * c.rfd * (efd / c.xad - ifd);
        dx[PSI_KD] = -wb * c.rkd * ikd;
        dx[PSI_KQ1] = -wb * c.rkq1 * ikq1;
        dx[PSI_KQ2] = -wb * c.rkq2 * ikq2;

        let t_elec = x[PSI_D] * iq - x[PSI_Q] * id;
        let t_mech = p_mech / w;
        dx[OMEGA] = (t_mech - t_elec - self.params.d * (w - 1.0)) / (2.0 * self.params.h);
        dx[DELTA] = wb * (w - 1.0);

        let i_rotor = Complex64::new(id, iq);
        SgOutputs {
            i_net: i_rotor / rot,
            i_rotor,
            v_rotor: v_r,
            efd,
            p_mech,
            t_elec,
        }
    }

    fn field_voltage(&self, x: &[f64], vt: f64, dx: &mut [f64]) -> f64 {
        let Some(exc) = &self.exciter else {
            return self.v_ref;
        };
        let l = &self.layout;
        let u = self.v_ref - vt;
        let y = match l.exc_ll {
            Some(i) => {
                dx[i] = (u - x[i]) / exc.tb;
                x[i] + exc.tc / exc.tb * (u - x[i])
            }
            None => u,
        };
        let i = l.exc_vr.expect("exciter output state");
        let vr = x[i];
        let mut dvr = (exc.ka * y - vr) / exc.ta;
        if (vr >= exc.vr_max && dvr > 0.0) || (vr <= exc.vr_min && dvr < 0.0) {
            dvr = 0.0;
        }
        dx[i] = dvr;
        vr.clamp(exc.vr_min, exc.vr_max)
    }

    fn mechanical_power(&self, x: &[f64], dw: f64, dx: &mut [f64]) -> f64 {
        let Some(gov) = &self.governor else {
            return self.p_ref;
        };
        let l = &self.layout;
        let gain = 1.0 / gov.r;
        let speed = match l.gov_ll {
            Some(i) => {
                dx[i] = (dw - x[i]) / gov.t[0];
                gain * (x[i] + gov.t[1] / gov.t[0] * (dw - x[i]))
            }
            None => gain * dw,
        };
        let igv = l.gov_gv.expect("gate state");
        let gv = x[igv];
        dx[igv] = (self.p_ref - speed - gv) / gov.t[2];
        let mut input = gv;
        let mut outs = [0.0; 4];
        for k in 0..4 {
            outs[k] = match l.stages[k] {
                Some(i) => {
                    dx[i] = (input - x[i]) / gov.t[3 + k];
                    x[i]
                }
                None => input,
            };
            input = outs[k];
        }
        let k = &gov.k;
        (k[0] + k[1]) * outs[0] + (k[2] + k[3]) * outs[1] + (k[4] + k[5]) * outs[2]
            + (k[6] + k[7]) * outs[3]
    }

    /// Steady state carrying complex power `s` (device base) at terminal
    /// voltage `v_term` with rated speed. Sets the exciter and governor
    /// references.
    pub fn initialize(&mut self, v_term: Complex64, s: Complex64) -> Result<Vec<f64>> {
        let c = self.circuit.clone();
        let p = &self.params;
        let i_net = (s / v_term).conj();
        let e_q = v_term + Complex64::new(p.rs, p.xq) * i_net;
        let delta = e_q.arg();
        let load_angle = (e_q / v_term).arg();
        if load_angle.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Initialization {
                device: "synchronous machine".into(),
                reason: format!(
                    "load angle {:.1} deg beyond the steady-state stability limit",
                    load_angle.to_degrees()
                ),
            });
        }
        let rot = Self::rotor_rotation(delta);
        let v_r = v_term * rot;
        let i_r = i_net * rot;
        let (vd, vq, id, iq) = (v_r.re, v_r.im, i_r.re, i_r.im);
        let psi_d = vq + c.rs * iq;
        let psi_q = -vd - c.rs * id;
        let ifd = (psi_d + (p.xl + c.xad) * id) / c.xad;
        if !(ifd > 0.0) {
            return Err(Error::Initialization {
                device: "synchronous machine".into(),
                reason: format!("operating point needs non-positive field current {ifd:.4}"),
            });
        }
        let efd = c.xad * ifd;
        let t_elec = psi_d * iq - psi_q * id;

        let mut x = vec![0.0; self.layout.len()];
        x[PSI_D] = psi_d;
        x[PSI_Q] = psi_q;
        x[PSI_FD] = -c.xad * id + (c.xfd + c.xad) * ifd;
        x[PSI_KD] = -c.xad * id + c.xad * ifd;
        x[PSI_KQ1] = -c.xaq * iq;
        x[PSI_KQ2] = -c.xaq * iq;
        x[OMEGA] = 1.0;
        x[DELTA] = delta;

        match &self.exciter {
            Some(exc) => {
                if efd > exc.vr_max || efd < exc.vr_min {
                    return Err(Error::Initialization {
                        device: "AC4A exciter".into(),
                        reason: format!("field voltage {efd:.3} outside output limits"),
                    });
                }
                let y = efd / exc.ka;
                if let Some(i) = self.layout.exc_ll {
                    x[i] = y;
                }
                x[self.layout.exc_vr.expect("exciter output state")] = efd;
                self.v_ref = v_term.norm() + y;
            }
            None => self.v_ref = efd,
        }

        match &self.governor {
            Some(gov) => {
                let gv = t_elec / gov.fraction_sum();
                x[self.layout.gov_gv.expect("gate state")] = gv;
                for i in self.layout.stages.iter().flatten() {
                    x[*i] = gv;
                }
                self.p_ref = gv;
            }
            None => self.p_ref = t_elec,
        }
        Ok(x)
    }

    /// Infinity norm of the derivatives at `x` for the given terminal voltage.
    pub fn residual(&self, x: &[f64], v_term: Complex64) -> f64 {
        let mut dx = vec![0.0; x.len()];
        self.derivatives(x, v_term, &mut dx);
        dx.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WB: f64 = 2.0 * std::f64::consts::PI * 50.0;

    fn full_model() -> SgModel {
        SgModel::new(
            SgParams::default(),
            Some(Ac4aParams::default()),
            Some(Ieeeg1Params::default()),
            WB,
        )
        .unwrap()
    }

    #[test]
    fn circuit_parameters_reproduce_standard_reactances() {
        let p = SgParams::default();
        let c = MachineCircuit::from_params(&p, WB).unwrap();
        let par = |a: f64, b: f64| a * b / (a + b);
        assert!((p.xl + par(c.xad, c.xfd) - p.xd_tr).abs() < 1e-12);
        assert!((p.xl + 1.0 / (1.0 / c.xad + 1.0 / c.xfd + 1.0 / c.xkd) - p.xd_sub).abs() < 1e-12);
        assert!((p.xl + par(c.xaq, c.xkq1) - p.xq_tr).abs() < 1e-12);
        assert!((c.xad + c.xfd) / (WB * c.rfd) - p.td0_tr < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_reactances() {
        let mut p = SgParams::default();
        p.xd_tr = 2.0;
        assert!(MachineCircuit::from_params(&p, WB).is_err());
        let mut p = SgParams::default();
        p.h = 0.0;
        assert!(MachineCircuit::from_params(&p, WB).is_err());
    }

    #[test]
    fn no_load_init_aligns_rotor() {
        let mut m = full_model();
        let x = m.initialize(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
        assert!(x[DELTA].abs() < 1e-12);
        let i = m.injection(&x);
        assert!(i.norm() < 1e-12);
        assert!(m.residual(&x, Complex64::new(1.0, 0.0)) < 1e-10);
        // open circuit: Efd = 1 gives 1 pu
        assert!((m.v_ref - (1.0 + 1.0 / 200.0)).abs() < 1e-12);
    }

    #[test]
    fn loaded_init_is_fixed_point() {
        let mut m = full_model();
        let v = Complex64::from_polar(1.02, 0.3);
        let s = Complex64::new(0.9, 0.15);
        let x = m.initialize(v, s).unwrap();
        assert!(m.residual(&x, v) < 1e-8);
        let i = m.injection(&x);
        let s_back = v * i.conj();
        assert!((s_back - s).norm() < 1e-10);
    }

    #[test]
    fn deep_underexcitation_is_infeasible() {
        let mut m = full_model();
        let err = m
            .initialize(Complex64::new(1.0, 0.0), Complex64::new(0.1, -1.2))
            .unwrap_err();
        assert!(matches!(err, Error::Initialization { .. }));
    }

    #[test]
    fn governor_static_droop() {
        // hold speed at 0.99 pu; the chain settles at p_ref + 0.01/R
        let mut m = full_model();
        let v = Complex64::new(1.0, 0.0);
        let mut x = m.initialize(v, Complex64::new(0.5, 0.0)).unwrap();
        let p0 = m.p_ref;
        x[OMEGA] = 0.99;
        let mut dx = vec![0.0; x.len()];
        let dt = 1e-3;
        for _ in 0..100_000 {
            // only integrate the governor/turbine states
            m.derivatives(&x, v, &mut dx);
            for i in 8..x.len() {
                if m.layout.names[i].starts_with("gov") || m.layout.names[i].starts_with("turb") {
                    x[i] += dt * dx[i];
                }
            }
        }
        let out = m.derivatives(&x, v, &mut dx);
        assert!((out.p_mech - p0 - 0.2).abs() < 1e-6, "{}", out.p_mech - p0);
    }

    #[test]
    fn exciter_static_gain() {
        let mut m = full_model();
        let v = Complex64::new(1.0, 0.0);
        let mut x = m.initialize(v, Complex64::new(0.5, 0.1)).unwrap();
        let efd0 = x[m.layout.exc_vr.unwrap()];
        m.v_ref += 0.001;
        let mut dx = vec![0.0; x.len()];
        let dt = 1e-3;
        let (ill, ivr) = (m.layout.exc_ll.unwrap(), m.layout.exc_vr.unwrap());
        for _ in 0..200_000 {
            m.derivatives(&x, v, &mut dx);
            x[ill] += dt * dx[ill];
            x[ivr] += dt * dx[ivr];
        }
        let gain = (x[ivr] - efd0) / 0.001;
        // lead-lag has unity DC gain, so the static gain is KA = 200
        assert!((gain - 200.0).abs() < 1e-3, "{gain}");
    }

    #[test]
    fn layout_counts() {
        let m = full_model();
        // 8 machine + lead-lag + VR + gate + three turbine lags
        assert_eq!(m.layout.len(), 14);
        let bare = SgModel::new(SgParams::default(), None, None, WB).unwrap();
        assert_eq!(bare.layout.len(), 8);
    }

    proptest! {
        #[test]
        fn random_operating_points_are_fixed_points(
            vm in 0.95f64..1.05, va in -1.0f64..1.0,
            p in 0.0f64..1.0, q in -0.2f64..0.5,
        ) {
            let mut m = full_model();
            let v = Complex64::from_polar(vm, va);
            let s = Complex64::new(p, q);
            let x = m.initialize(v, s).unwrap();
            prop_assert!(m.residual(&x, v) < 1e-8);
            let s_back = v * m.injection(&x).conj();
            prop_assert!((s_back - s).norm() < 1e-8);
        }
    }
}
