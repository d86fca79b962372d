//! Droop-based grid-forming converter: average-value voltage source behind
//! an RL filter, cascaded AC-voltage and current PI control in the converter
//! frame, P-f and Q-V droops with filtered power measurements.
//!
//! The filter capacitor is a network element: it is the shunt of the
//! converter terminal bus, see [`GforModel::capacitor_shunt`]. Internal
//! quantities are per unit on the converter rating. In the converter frame
//! the real axis is the q-axis, aligned with the terminal voltage, and the
//! imaginary axis is the d-axis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Shunt;

/// Proportional gain form of the AC-voltage loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageGainForm {
    /// `2 xi omega_n C_c * 100`, the published expression.
    #[default]
    Scaled,
    /// `2 xi omega_n C_c`.
    Textbook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GforParams {
    pub rating_mva: f64,
    #[serde(rename = "rc_pu_dev")]
    pub r_c: f64,
    #[serde(rename = "xc_pu_dev")]
    pub x_c: f64,
    #[serde(rename = "bc_pu_dev")]
    pub b_c: f64,
    /// Series damping resistance of the filter capacitor; `None` uses
    /// `1 / (30 B_c)`.
    #[serde(rename = "rcap_pu_dev", default)]
    pub r_cap: Option<f64>,
    #[serde(rename = "tau_cc_s")]
    pub tau_cc: f64,
    #[serde(rename = "iq_max_pu_dev")]
    pub iq_max: f64,
    #[serde(rename = "id_max_pu_dev")]
    pub id_max: f64,
    #[serde(rename = "tau_vac_s")]
    pub tau_vac: f64,
    pub xi: f64,
    #[serde(default)]
    pub kpv_form: VoltageGainForm,
    #[serde(rename = "tau_ff_s")]
    pub tau_ff: f64,
    #[serde(rename = "rf_pu")]
    pub r_f: f64,
    #[serde(rename = "rv_pu")]
    pub r_v: f64,
    #[serde(rename = "tau_p_s")]
    pub tau_p: f64,
    #[serde(rename = "tau_q_s")]
    pub tau_q: f64,
}

impl Default for GforParams {
    fn default() -> Self {
        Self {
            rating_mva: 1500.0,
            r_c: 0.005,
            x_c: 0.15,
            b_c: 0.15,
            r_cap: None,
            tau_cc: 1e-3,
            iq_max: 1.1,
            id_max: 1.1,
            tau_vac: 0.05,
            xi: 0.707,
            kpv_form: VoltageGainForm::Scaled,
            tau_ff: 1e-4,
            r_f: 0.05,
            r_v: 0.067,
            tau_p: 0.1,
            tau_q: 0.1,
        }
    }
}

impl GforParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("GFOR: {m}")));
        if !(self.rating_mva > 0.0) {
            return bad("rating must be positive");
        }
        if !(self.x_c > 0.0 && self.b_c > 0.0 && self.r_c >= 0.0) {
            return bad("filter needs X_c > 0, B_c > 0 and R_c >= 0");
        }
        if self.r_cap.is_some_and(|r| !(r >= 0.0)) {
            return bad("capacitor damping resistance must be non-negative");
        }
        for (name, t) in [
            ("tau_cc", self.tau_cc),
            ("tau_vac", self.tau_vac),
            ("tau_ff", self.tau_ff),
            ("tau_p", self.tau_p),
            ("tau_q", self.tau_q),
        ] {
            if !(t > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.xi > 0.0) {
            return bad("damping factor xi must be positive");
        }
        if !(self.r_f > 0.0 && self.r_f < 1.0 && self.r_v > 0.0 && self.r_v < 1.0) {
            return bad("droops must lie in (0, 1)");
        }
        if !(self.iq_max >= 1.0 && self.id_max >= 1.0) {
            return bad("current limits must be at least 1 pu");
        }
        Ok(())
    }

    pub fn r_cap(&self) -> f64 {
        self.r_cap.unwrap_or(1.0 / (30.0 * self.b_c))
    }

    pub fn kp_cc(&self, omega_b: f64) -> f64 {
        self.x_c / omega_b / self.tau_cc
    }

    pub fn ki_cc(&self) -> f64 {
        self.r_c / self.tau_cc
    }

    pub fn omega_n(&self) -> f64 {
        4.0 / (self.tau_vac * self.xi)
    }

    pub fn kp_v(&self, omega_b: f64) -> f64 {
        let c_c = self.b_c / omega_b;
        let base = 2.0 * self.xi * self.omega_n() * c_c;
        match self.kpv_form {
            VoltageGainForm::Scaled => base * 100.0,
            VoltageGainForm::Textbook => base,
        }
    }

    pub fn ki_v(&self, omega_b: f64) -> f64 {
        self.omega_n().powi(2) * self.b_c / omega_b
    }
}

pub const IF_RE: usize = 0;
pub const IF_IM: usize = 1;
pub const ZETA_Q: usize = 2;
pub const ZETA_D: usize = 3;
pub const XI_Q: usize = 4;
pub const XI_D: usize = 5;
pub const VFF_Q: usize = 6;
pub const VFF_D: usize = 7;
pub const IGFF_Q: usize = 8;
pub const IGFF_D: usize = 9;
pub const P_FILT: usize = 10;
pub const Q_FILT: usize = 11;
pub const THETA: usize = 12;
pub const N_STATES: usize = 13;

pub const STATE_NAMES: [&str; N_STATES] = [
    "if_re", "if_im", "zeta_cc_q", "zeta_cc_d", "xi_v_q", "xi_v_d", "vff_q", "vff_d", "igff_q",
    "igff_d", "P_filt", "Q_filt", "theta",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct GforOutputs {
    /// Filter current injected into the terminal bus, system base.
    pub i_inj: Complex64,
    pub omega: f64,
    /// Instantaneous grid-side powers, converter base.
    pub p: f64,
    pub q: f64,
    pub v_ref: f64,
    /// Saturated current reference, converter frame.
    pub i_ref: Complex64,
    pub v_conv: Complex64,
}

#[derive(Debug, Clone)]
pub struct GforModel {
    pub params: GforParams,
    pub omega_b: f64,
    /// Converter rating over the system base power.
    pub s_ratio: f64,
    /// Droop set-points fixed at initialization, converter base.
    pub p_set: f64,
    pub q_set: f64,
    pub v_set: f64,
    current_loop: CurrentLoop,
    kp_v: f64,
    ki_v: f64,
}

/// Inner current PI with cross-coupling decoupling.
#[derive(Debug, Clone, Copy)]
pub struct CurrentLoop {
    pub kp: f64,
    pub ki: f64,
    pub x_c: f64,
}

impl CurrentLoop {
    pub fn from_params(p: &GforParams, omega_b: f64) -> Self {
        Self {
            kp: p.kp_cc(omega_b),
            ki: p.ki_cc(),
            x_c: p.x_c,
        }
    }

    /// Converter voltage command and integrator derivative, converter frame.
    pub fn output(
        &self,
        omega: f64,
        i_ref: Complex64,
        i: Complex64,
        v_ff: Complex64,
        zeta: Complex64,
    ) -> (Complex64, Complex64) {
        let err = i_ref - i;
        let v = v_ff + self.kp * err + zeta + Complex64::new(0.0, omega * self.x_c) * i;
        (v, self.ki * err)
    }
}

/// Filter inductor current derivative in a frame rotating at 1 pu.
pub fn filter_derivative(
    r_c: f64,
    x_c: f64,
    omega_b: f64,
    v_conv: Complex64,
    v: Complex64,
    i: Complex64,
) -> Complex64 {
    (v_conv - v - Complex64::new(r_c, x_c) * i) * (omega_b / x_c)
}

fn clamp_reference(i: Complex64, iq_max: f64, id_max: f64) -> Complex64 {
    Complex64::new(i.re.clamp(-iq_max, iq_max), i.im.clamp(-id_max, id_max))
}

impl GforModel {
    pub fn new(params: GforParams, omega_b: f64, s_base_mva: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            current_loop: CurrentLoop::from_params(&params, omega_b),
            kp_v: params.kp_v(omega_b),
            ki_v: params.ki_v(omega_b),
            s_ratio: params.rating_mva / s_base_mva,
            params,
            omega_b,
            p_set: 0.0,
            q_set: 0.0,
            v_set: 1.0,
        })
    }

    /// Filter capacitor as a bus shunt on the system base.
    pub fn capacitor_shunt(&self) -> Shunt {
        Shunt {
            g: 0.0,
            b: self.params.b_c * self.s_ratio,
            r_series: self.params.r_cap() / self.s_ratio,
        }
    }

    /// Network-frame injection, system base, from the states only.
    pub fn injection(&self, x: &[f64]) -> Complex64 {
        Complex64::new(x[IF_RE], x[IF_IM]) * self.s_ratio
    }

    /// Imposed frequency for a filtered active power and POD supplement.
    /// The supplement enters on the measured-power side, so a positive POD
    /// gain on the frequency deviation acts as added damping.
    pub fn droop_frequency(&self, p_filt: f64, dp_pod: f64) -> f64 {
        1.0 + self.params.r_f * (self.p_set - dp_pod - p_filt)
    }

    pub fn droop_voltage(&self, q_filt: f64, dq_pod: f64) -> f64 {
        self.v_set + self.params.r_v * (self.q_set + dq_pod - q_filt)
    }

    /// Derivatives for terminal voltage `v` and grid-side current `i_grid`
    /// (both network frame, system base) with saturated POD supplements.
    pub fn derivatives(
        &self,
        x: &[f64],
        v: Complex64,
        i_grid: Complex64,
        dp_pod: f64,
        dq_pod: f64,
        dx: &mut [f64],
    ) -> GforOutputs {
        let p = &self.params;
        let i_g = i_grid / self.s_ratio;
        let i_f = Complex64::new(x[IF_RE], x[IF_IM]);
        let theta = x[THETA];
        let to_conv = Complex64::from_polar(1.0, -theta);

        let v_c = v * to_conv;
        let ig_c = i_g * to_conv;
        let if_c = i_f * to_conv;
        let v_ff = Complex64::new(x[VFF_Q], x[VFF_D]);
        let ig_ff = Complex64::new(x[IGFF_Q], x[IGFF_D]);

        let s = v * i_g.conj();
        let omega = self.droop_frequency(x[P_FILT], dp_pod);
        let v_ref = self.droop_voltage(x[Q_FILT], dq_pod);

        let err_v = Complex64::new(v_ref, 0.0) - v_ff;
        let xi_v = Complex64::new(x[XI_Q], x[XI_D]);
        let i_ref_raw =
            ig_ff + Complex64::new(0.0, omega * p.b_c) * v_ff + self.kp_v * err_v + xi_v;
        let i_ref = clamp_reference(i_ref_raw, p.iq_max, p.id_max);
        let dxi = self.ki_v * err_v;

        let zeta = Complex64::new(x[ZETA_Q], x[ZETA_D]);
        let (v_conv_c, dzeta) = self.current_loop.output(omega, i_ref, if_c, v_ff, zeta);
        let v_conv = v_conv_c / to_conv;
        let dif = filter_derivative(p.r_c, p.x_c, self.omega_b, v_conv, v, i_f);

        let dvff = (v_c - v_ff) / p.tau_ff;
        let digff = (ig_c - ig_ff) / p.tau_ff;

        dx[IF_RE] = dif.re;
        dx[IF_IM] = dif.im;
        dx[ZETA_Q] = dzeta.re;
        dx[ZETA_D] = dzeta.im;
        dx[XI_Q] = dxi.re;
        dx[XI_D] = dxi.im;
        dx[VFF_Q] = dvff.re;
        dx[VFF_D] = dvff.im;
        dx[IGFF_Q] = digff.re;
        dx[IGFF_D] = digff.im;
        dx[P_FILT] = (s.re - x[P_FILT]) / p.tau_p;
        dx[Q_FILT] = (s.im - x[Q_FILT]) / p.tau_q;
        dx[THETA] = self.omega_b * (omega - 1.0);

        GforOutputs {
            i_inj: i_f * self.s_ratio,
            omega,
            p: s.re,
            q: s.im,
            v_ref,
            i_ref,
            v_conv: v_conv_c,
        }
    }

    /// Steady state delivering `s_grid` (system base) into the network at
    /// terminal voltage `v` (network frame). The capacitor current is
    /// supplied by the filter. Sets the droop set-points.
    pub fn initialize(&mut self, v: Complex64, s_grid: Complex64) -> Result<Vec<f64>> {
        let p = self.params.clone();
        if !(v.norm() > 0.0) {
            return Err(Error::Initialization {
                device: "grid-forming converter".into(),
                reason: "zero terminal voltage".into(),
            });
        }
        let i_g = (s_grid / v).conj() / self.s_ratio;
        let i_cap = v * self.capacitor_shunt().admittance() / self.s_ratio;
        let i_f = i_g + i_cap;

        let theta = v.arg();
        let to_conv = Complex64::from_polar(1.0, -theta);
        let v_c = v * to_conv;
        let ig_c = i_g * to_conv;
        let if_c = i_f * to_conv;
        if if_c.re.abs() > p.iq_max {
            return Err(Error::Initialization {
                device: "grid-forming converter".into(),
                reason: format!(
                    "q-axis current {:.4} pu exceeds limit i_q,max = {}",
                    if_c.re, p.iq_max
                ),
            });
        }
        if if_c.im.abs() > p.id_max {
            return Err(Error::Initialization {
                device: "grid-forming converter".into(),
                reason: format!(
                    "d-axis current {:.4} pu exceeds limit i_d,max = {}",
                    if_c.im, p.id_max
                ),
            });
        }

        let s_dev = s_grid / self.s_ratio;
        self.p_set = s_dev.re;
        self.q_set = s_dev.im;
        self.v_set = v.norm();

        let xi_v = if_c - ig_c - Complex64::new(0.0, p.b_c) * v_c;
        let zeta = p.r_c * if_c;
        let mut x = vec![0.0; N_STATES];
        x[IF_RE] = i_f.re;
        x[IF_IM] = i_f.im;
        x[ZETA_Q] = zeta.re;
        x[ZETA_D] = zeta.im;
        x[XI_Q] = xi_v.re;
        x[XI_D] = xi_v.im;
        x[VFF_Q] = v_c.re;
        x[VFF_D] = v_c.im;
        x[IGFF_Q] = ig_c.re;
        x[IGFF_D] = ig_c.im;
        x[P_FILT] = s_dev.re;
        x[Q_FILT] = s_dev.im;
        x[THETA] = theta;
        Ok(x)
    }

    pub fn residual(&self, x: &[f64], v: Complex64, i_grid: Complex64) -> f64 {
        let mut dx = vec![0.0; N_STATES];
        self.derivatives(x, v, i_grid, 0.0, 0.0, &mut dx);
        dx.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WB: f64 = 2.0 * std::f64::consts::PI * 50.0;

    fn model() -> GforModel {
        GforModel::new(GforParams::default(), WB, 100.0).unwrap()
    }

    #[test]
    fn published_gains() {
        let p = GforParams::default();
        assert!((p.kp_cc(WB) - 0.15 / WB / 1e-3).abs() < 1e-12);
        assert!((p.ki_cc() - 5.0).abs() < 1e-12);
        let wn = 4.0 / (0.05 * 0.707);
        assert!((p.omega_n() - wn).abs() < 1e-9);
        let c_c = 0.15 / WB;
        assert!((p.kp_v(WB) - 2.0 * 0.707 * wn * c_c * 100.0).abs() < 1e-9);
        assert!((p.ki_v(WB) - wn * wn * c_c).abs() < 1e-9);
        let t = GforParams {
            kpv_form: VoltageGainForm::Textbook,
            ..p.clone()
        };
        assert!((t.kp_v(WB) * 100.0 - p.kp_v(WB)).abs() < 1e-9);
        assert!((p.r_cap() - 1.0 / 4.5).abs() < 1e-12);
    }

    #[test]
    fn capacitor_on_system_base() {
        let m = model();
        let sh = m.capacitor_shunt();
        assert!((sh.b - 2.25).abs() < 1e-12);
        assert!((sh.r_series - 1.0 / 4.5 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        let mut p = GforParams::default();
        p.r_f = 1.2;
        assert!(p.validate().is_err());
        let mut p = GforParams::default();
        p.iq_max = 0.9;
        assert!(p.validate().is_err());
        let mut p = GforParams::default();
        p.tau_ff = 0.0;
        assert!(p.validate().is_err());
    }

    fn grid_current(m: &GforModel, x: &[f64], v: Complex64) -> Complex64 {
        // everything the filter delivers beyond the capacitor goes to the grid
        m.injection(x) - v * m.capacitor_shunt().admittance()
    }

    #[test]
    fn no_load_init() {
        let mut m = model();
        let v = Complex64::new(1.0, 0.0);
        let x = m.initialize(v, Complex64::new(0.0, 0.0)).unwrap();
        let i_cap = v * m.capacitor_shunt().admittance();
        assert!((m.injection(&x) - i_cap).norm() < 1e-12);
        assert!(x[IGFF_Q].abs() < 1e-15 && x[IGFF_D].abs() < 1e-15);
        assert!(m.residual(&x, v, grid_current(&m, &x, v)) < 1e-8);
    }

    #[test]
    fn rated_dispatch_is_fixed_point() {
        let mut m = model();
        let v = Complex64::from_polar(1.0, 0.4);
        let s = Complex64::new(13.5, 1.2);
        let x = m.initialize(v, s).unwrap();
        let ig = grid_current(&m, &x, v);
        assert!(m.residual(&x, v, ig) < 1e-8);
        let mut dx = vec![0.0; N_STATES];
        let out = m.derivatives(&x, v, ig, 0.0, 0.0, &mut dx);
        assert!((out.p - 0.9).abs() < 1e-12);
        assert!((out.q - 0.08).abs() < 1e-12);
        assert!((out.omega - 1.0).abs() < 1e-15);
    }

    #[test]
    fn droop_slopes() {
        let mut m = model();
        m.initialize(Complex64::new(1.0, 0.0), Complex64::new(9.0, 0.0))
            .unwrap();
        let w = m.droop_frequency(m.p_set + 0.05, 0.0);
        assert!((w - 1.0 + 0.0025).abs() < 1e-12);
        let v = m.droop_voltage(m.q_set + 0.1, 0.0);
        assert!((v - m.v_set + 0.0067).abs() < 1e-12);
    }

    #[test]
    fn pod_supplement_signs() {
        let mut m = model();
        m.initialize(Complex64::new(1.0, 0.0), Complex64::new(9.0, 0.0))
            .unwrap();
        assert!((m.droop_frequency(m.p_set, 0.01) - 1.0 + 0.05 * 0.01).abs() < 1e-15);
        assert!((m.droop_voltage(m.q_set, 0.01) - m.v_set - 0.067 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn binding_limit_is_named() {
        let mut m = model();
        let err = m
            .initialize(Complex64::new(1.0, 0.0), Complex64::new(17.0, 0.0))
            .unwrap_err();
        assert!(err.to_string().contains("i_q,max"), "{err}");
        let err = m
            .initialize(Complex64::new(1.0, 0.0), Complex64::new(0.0, -19.0))
            .unwrap_err();
        assert!(err.to_string().contains("i_d,max"), "{err}");
    }

    #[test]
    fn current_loop_is_first_order() {
        // filter against an ideal 1 pu source, converter frame at 1 pu
        let p = GforParams::default();
        let cl = CurrentLoop::from_params(&p, WB);
        let v = Complex64::new(1.0, 0.0);
        let i_ref = Complex64::new(0.5, 0.0);
        let mut i = Complex64::new(0.0, 0.0);
        let mut zeta = Complex64::new(0.0, 0.0);
        let dt = 1e-6;
        let f = |i: Complex64, z: Complex64| {
            let (vc, dz) = cl.output(1.0, i_ref, i, v, z);
            (filter_derivative(p.r_c, p.x_c, WB, vc, v, i), dz)
        };
        let target = i_ref.re * (1.0 - (-1.0f64).exp());
        let mut t = 0.0;
        while i.re < target {
            let (k1, l1) = f(i, zeta);
            let (k2, l2) = f(i + 0.5 * dt * k1, zeta + 0.5 * dt * l1);
            let (k3, l3) = f(i + 0.5 * dt * k2, zeta + 0.5 * dt * l2);
            let (k4, l4) = f(i + dt * k3, zeta + dt * l3);
            i += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            zeta += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            t += dt;
            assert!(t < 0.01);
        }
        assert!((t - p.tau_cc).abs() < 0.1 * p.tau_cc, "time constant {t}");
    }

    proptest! {
        #[test]
        fn random_operating_points(
            vm in 0.9f64..1.1, va in -3.0f64..3.0,
            p in -12.0f64..12.0, q in -6.0f64..6.0,
        ) {
            let mut m = model();
            let v = Complex64::from_polar(vm, va);
            let x = m.initialize(v, Complex64::new(p, q)).unwrap();
            let ig = grid_current(&m, &x, v);
            prop_assert!(m.residual(&x, v, ig) < 1e-8);
        }

        #[test]
        fn references_respect_limits(
            xs in proptest::collection::vec(-5.0f64..5.0, N_STATES),
            vr in -2.0f64..2.0, vi in -2.0f64..2.0,
            dp in -0.2f64..0.2, dq in -0.2f64..0.2,
        ) {
            let m = model();
            let mut dx = vec![0.0; N_STATES];
            let v = Complex64::new(vr, vi);
            let out = m.derivatives(&xs, v, Complex64::new(1.0, -2.0), dp, dq, &mut dx);
            prop_assert!(out.i_ref.re.abs() <= 1.1 && out.i_ref.im.abs() <= 1.1);
        }
    }
}
