//! Eigenvalue-sensitivity design of a POD channel: finite-difference
//! sensitivity of the target mode to the POD gain, lead/lag phase
//! compensation centered at the mode frequency and gain sizing for a
//! required damping ratio.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{damping_ratio, eigen_analysis, follow_continuation, linearize, reidentify};
use crate::modal::select_target;
use crate::modal::{LinearModel, LinearizeOptions, Mode, TargetSelector};
use crate::model::{assemble, DynamicModel};
use crate::pod::PodParams;
use crate::spec::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    P,
    Q,
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" | "p" => Ok(Self::P),
            "Q" | "q" => Ok(Self::Q),
            _ => Err(Error::InvalidParameter(format!("unknown POD channel `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingGoal {
    /// Added to the damping ratio of the target mode without POD.
    Increment(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub device: String,
    pub channel: Channel,
    pub selector: TargetSelector,
    pub goal: DampingGoal,
    /// Initial probe gain; halved until consecutive estimates agree.
    pub probe_gain: f64,
    pub probe_rel_tol: f64,
    pub max_halvings: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub n_s: usize,
    #[serde(rename = "tf_s")]
    pub t_f: f64,
    #[serde(rename = "tw_s")]
    pub t_w: f64,
    #[serde(rename = "limit_pu")]
    pub limit: f64,
    /// Minimum mode-shape correlation for re-identifying the target.
    pub min_mac: f64,
    /// Gain increments used to follow the target up to the final gain.
    pub continuation_steps: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            device: "GFOR2".into(),
            channel: Channel::P,
            selector: TargetSelector::default(),
            goal: DampingGoal::Increment(0.10),
            probe_gain: 1.0,
            probe_rel_tol: 0.05,
            max_halvings: 10,
            k_min: 200.0,
            k_max: 400.0,
            n_s: 2,
            t_f: 0.1,
            t_w: 5.0,
            limit: 0.2,
            min_mac: 0.5,
            continuation_steps: 20,
        }
    }
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("design: {m}")));
        if !(self.probe_gain > 0.0) {
            return bad("probe gain must be positive");
        }
        if !(self.k_min >= 0.0 && self.k_min <= self.k_max) {
            return bad("gain bounds need 0 <= K_min <= K_max");
        }
        if self.k_min > 0.0 && self.probe_gain > 0.1 * self.k_min {
            return bad("probe gain must be small compared with K_min");
        }
        let zeta_ok = match self.goal {
            DampingGoal::Increment(d) => d.is_finite(),
            DampingGoal::Absolute(z) => z > 0.0 && z < 1.0,
        };
        if !zeta_ok {
            return bad("required damping must lie in (0, 1)");
        }
        if self.n_s == 0 {
            return bad("at least one lead/lag stage is needed");
        }
        self.template(0.0).validate()
    }

    fn template(&self, k: f64) -> PodParams {
        PodParams::non_compensated(k, self.t_f, self.t_w, self.n_s, self.limit)
    }
}

/// Linear plant seen by the designer: the state matrix of the closed loop
/// for a given POD on the channel under design.
pub trait PodPlant {
    fn state_matrix(&self, pod: &PodParams) -> Result<DMatrix<f64>>;
    fn labels(&self) -> Vec<String>;
}

/// Assembled system with the channel's POD slot present.
#[derive(Debug, Clone)]
pub struct ModelPlant {
    model: DynamicModel,
    device: usize,
    channel: Channel,
    opts: LinearizeOptions,
}

impl ModelPlant {
    /// Inserts an idle POD on `channel` of `device` and assembles.
    pub fn new(spec: &SystemSpec, device: &str, channel: Channel, template: &PodParams) -> Result<Self> {
        let mut spec = spec.clone();
        let g = spec
            .gfor
            .iter_mut()
            .find(|g| g.name == device)
            .ok_or_else(|| Error::InvalidParameter(format!("no converter named {device}")))?;
        let idle = PodParams {
            k: 0.0,
            ..template.clone()
        };
        match channel {
            Channel::P => g.pod_p = Some(idle),
            Channel::Q => g.pod_q = Some(idle),
        }
        let model = assemble(&spec)?;
        let device = model
            .gfors
            .iter()
            .position(|g| g.name == device)
            .expect("device exists after assembly");
        Ok(Self {
            model,
            device,
            channel,
            opts: LinearizeOptions {
                outputs: false,
                ..Default::default()
            },
        })
    }

    pub fn model(&self) -> &DynamicModel {
        &self.model
    }

    pub fn with_pod(&self, pod: &PodParams) -> Result<DynamicModel> {
        let mut m = self.model.clone();
        let g = &mut m.gfors[self.device];
        let unit = match self.channel {
            Channel::P => g.pod_p.as_mut(),
            Channel::Q => g.pod_q.as_mut(),
        }
        .expect("POD slot inserted at construction");
        if unit.params.state_count() != pod.state_count() {
            return Err(Error::InvalidParameter("POD stage count differs from the plant".into()));
        }
        pod.validate()?;
        unit.params = pod.clone();
        Ok(m)
    }
}

impl PodPlant for ModelPlant {
    fn state_matrix(&self, pod: &PodParams) -> Result<DMatrix<f64>> {
        Ok(linearize(&self.with_pod(pod)?, &self.opts)?.a)
    }

    fn labels(&self) -> Vec<String> {
        self.model.labels().to_vec()
    }
}

fn modes_of(plant: &dyn PodPlant, pod: &PodParams) -> Result<Vec<Mode>> {
    let mut lin = LinearModel::from_a(plant.state_matrix(pod)?);
    lin.state_labels = plant.labels();
    eigen_analysis(&lin)
}

/// Follows `target` while the gain of `pod` grows from zero in `steps`
/// equal increments.
pub fn follow_gain(
    plant: &dyn PodPlant,
    pod: &PodParams,
    target: &Mode,
    steps: usize,
    min_mac: f64,
) -> Result<Mode> {
    follow_continuation(target, steps, min_mac, |s| {
        modes_of(plant, &PodParams { k: pod.k * s, ..pod.clone() })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityEstimate {
    pub s: Complex64,
    /// Estimate at twice the final probe gain.
    pub s_coarse: Complex64,
    pub probe_gain: f64,
    pub lambda_probe: Complex64,
    pub halvings: usize,
}

/// Finite-difference sensitivity of `target` to the gain of `pod`.
pub fn estimate_sensitivity(
    plant: &dyn PodPlant,
    pod: &PodParams,
    target: &Mode,
    dk: f64,
    min_mac: f64,
) -> Result<(Complex64, Complex64)> {
    let probe = PodParams { k: dk, ..pod.clone() };
    let modes = modes_of(plant, &probe)?;
    let m = reidentify(&modes, target, min_mac)?;
    Ok(((m.lambda - target.lambda) / dk, m.lambda))
}

/// Halves the probe gain until two consecutive estimates agree within
/// `rel_tol`.
pub fn converged_sensitivity(
    plant: &dyn PodPlant,
    pod: &PodParams,
    target: &Mode,
    dk0: f64,
    rel_tol: f64,
    max_halvings: usize,
    min_mac: f64,
) -> Result<SensitivityEstimate> {
    let (mut prev, _) = estimate_sensitivity(plant, pod, target, dk0, min_mac)?;
    let mut dk = dk0;
    for h in 1..=max_halvings {
        dk *= 0.5;
        let (s, lambda) = estimate_sensitivity(plant, pod, target, dk, min_mac)?;
        let scale = s.norm().max(prev.norm());
        if scale < 1e-10 || (s - prev).norm() <= rel_tol * scale {
            return Ok(SensitivityEstimate {
                s,
                s_coarse: prev,
                probe_gain: dk,
                lambda_probe: lambda,
                halvings: h,
            });
        }
        prev = s;
    }
    Err(Error::SensitivityNotConverged {
        halvings: max_halvings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    Lead,
    Lag,
}

/// Lead/lag ratio `a` placing the compensated sensitivity at 180 degrees.
pub fn compensation_ratio(phi_nc: f64, n_s: usize) -> Result<(f64, Compensation)> {
    if !(-PI..=PI).contains(&phi_nc) || n_s == 0 {
        return Err(Error::InvalidParameter(format!(
            "phase {phi_nc} outside [-pi, pi] or zero stages"
        )));
    }
    let n = n_s as f64;
    if phi_nc >= 0.0 {
        let phi = (PI - phi_nc) / n;
        if phi >= FRAC_PI_2 - 1e-12 {
            return Err(Error::DegenerateLead {
                phi_nc_deg: phi_nc.to_degrees(),
            });
        }
        Ok(((1.0 - phi.sin()) / (1.0 + phi.sin()), Compensation::Lead))
    } else {
        let phi = (PI + phi_nc) / n;
        if phi >= FRAC_PI_2 - 1e-12 {
            return Err(Error::UnboundedLag {
                phi_deg: phi.to_degrees(),
            });
        }
        Ok(((1.0 + phi.sin()) / (1.0 - phi.sin()), Compensation::Lag))
    }
}

/// Stage time constants `(T_S1, T_S2)` centered at `omega`.
pub fn leadlag_times(a: f64, omega: f64) -> (f64, f64) {
    let t1 = 1.0 / (omega * a.sqrt());
    (t1, a * t1)
}

pub fn target_eigenvalue(lambda0: Complex64, zeta_d: f64) -> Complex64 {
    let w = lambda0.im;
    Complex64::new(-zeta_d * w.abs(), w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    None,
    Minimum,
    Maximum,
}

/// Gain moving the eigenvalue from `lambda0` to `lambda_d` along `s`, then
/// clamped to the bounds.
pub fn compute_gain(
    lambda0: Complex64,
    lambda_d: Complex64,
    s: Complex64,
    k_min: f64,
    k_max: f64,
) -> Result<(f64, f64, Clamp)> {
    if s.norm() < 1e-12 {
        return Err(Error::Uncontrollable(s.norm()));
    }
    let raw = (lambda_d - lambda0).norm() / s.norm();
    Ok(if raw < k_min {
        (raw, k_min, Clamp::Minimum)
    } else if raw > k_max {
        (raw, k_max, Clamp::Maximum)
    } else {
        (raw, raw, Clamp::None)
    })
}

/// Every intermediate quantity of one channel design.
#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub spec: DesignSpec,
    pub lambda0: Complex64,
    pub f0_hz: f64,
    pub zeta0: f64,
    pub lambda_nc: Complex64,
    pub s_nc: Complex64,
    pub s_nc_mag: f64,
    pub s_nc_phase_deg: f64,
    pub s_nc_coarse: Complex64,
    pub probe_gain_nc: f64,
    pub compensation: Compensation,
    pub a: f64,
    pub omega_center: f64,
    pub t_s1: f64,
    pub t_s2: f64,
    pub s_comp: Complex64,
    pub s_comp_mag: f64,
    pub s_comp_phase_deg: f64,
    pub zeta_d: f64,
    pub lambda_d: Complex64,
    pub k_unclamped: f64,
    pub k: f64,
    pub clamp: Clamp,
    pub lambda_predicted: Complex64,
    pub lambda_achieved: Complex64,
    pub zeta_achieved: f64,
    pub pod: PodParams,
}

impl DesignReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Two-step design: sensitivity without compensation, phase compensation,
/// compensated sensitivity and gain, then verification on the closed loop.
pub fn design_pod(plant: &dyn PodPlant, spec: &DesignSpec) -> Result<(PodParams, DesignReport)> {
    spec.validate()?;
    let labels = plant.labels();
    let nc = spec.template(0.0);
    let modes0 = modes_of(plant, &nc)?;
    let target = modes0[select_target(&modes0, &labels, &spec.selector)?].clone();
    let lambda0 = target.lambda;

    let est = converged_sensitivity(
        plant,
        &nc,
        &target,
        spec.probe_gain,
        spec.probe_rel_tol,
        spec.max_halvings,
        spec.min_mac,
    )?;
    if est.s.norm() < 1e-12 {
        return Err(Error::Uncontrollable(est.s.norm()));
    }
    let phi_nc = est.s.arg();
    let (a, compensation) = compensation_ratio(phi_nc, spec.n_s)?;
    let omega = lambda0.im;
    let (t_s1, t_s2) = leadlag_times(a, omega);
    let compensated = PodParams {
        t_s1,
        t_s2,
        ..nc.clone()
    };
    let comp = converged_sensitivity(
        plant,
        &compensated,
        &target,
        spec.probe_gain,
        spec.probe_rel_tol,
        spec.max_halvings,
        spec.min_mac,
    )?;
    let zeta0 = damping_ratio(lambda0);
    let zeta_d = match spec.goal {
        DampingGoal::Increment(d) => zeta0 + d,
        DampingGoal::Absolute(z) => z,
    };
    let lambda_d = target_eigenvalue(lambda0, zeta_d);
    let (k_unclamped, k, clamp) = compute_gain(lambda0, lambda_d, comp.s, spec.k_min, spec.k_max)?;
    let pod = PodParams { k, ..compensated };

    let achieved = follow_gain(plant, &pod, &target, spec.continuation_steps, spec.min_mac)?;
    let report = DesignReport {
        spec: spec.clone(),
        lambda0,
        f0_hz: target.f_hz,
        zeta0,
        lambda_nc: est.lambda_probe,
        s_nc: est.s,
        s_nc_mag: est.s.norm(),
        s_nc_phase_deg: phi_nc.to_degrees(),
        s_nc_coarse: est.s_coarse,
        probe_gain_nc: est.probe_gain,
        compensation,
        a,
        omega_center: omega,
        t_s1,
        t_s2,
        s_comp: comp.s,
        s_comp_mag: comp.s.norm(),
        s_comp_phase_deg: comp.s.arg().to_degrees(),
        zeta_d,
        lambda_d,
        k_unclamped,
        k,
        clamp,
        lambda_predicted: lambda0 + comp.s * k,
        lambda_achieved: achieved.lambda,
        zeta_achieved: achieved.zeta,
        pod: pod.clone(),
    };
    Ok((pod, report))
}

/// Designs one channel of a converter in `system`, with the other channel
/// as given in the spec.
pub fn design_for_system(system: &SystemSpec, spec: &DesignSpec) -> Result<(PodParams, DesignReport)> {
    spec.validate()?;
    let plant = ModelPlant::new(system, &spec.device, spec.channel, &spec.template(0.0))?;
    design_pod(&plant, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    /// `A + K b c^T`; the POD dynamics are left out.
    struct RankOne {
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
    }

    impl PodPlant for RankOne {
        fn state_matrix(&self, pod: &PodParams) -> Result<DMatrix<f64>> {
            Ok(&self.a + &self.b * self.c.transpose() * pod.k)
        }

        fn labels(&self) -> Vec<String> {
            (0..self.a.nrows())
                .map(|i| if i == 0 { "m.omega".into() } else { format!("x{i}") })
                .collect()
        }
    }

    fn oscillator() -> RankOne {
        RankOne {
            a: DMatrix::from_row_slice(2, 2, &[-0.1, 4.0, -4.0, -0.1]),
            b: DVector::from_vec(vec![0.3, 1.0]),
            c: DVector::from_vec(vec![1.0, -0.2]),
        }
    }

    fn target_of(p: &RankOne) -> Mode {
        let modes = modes_of(p, &PodParams::non_compensated(0.0, 0.1, 5.0, 2, 0.2)).unwrap();
        modes.into_iter().find(|m| m.lambda.im > 0.0).unwrap()
    }

    #[test]
    fn rank_one_sensitivity_matches_analytic_derivative() {
        let p = oscillator();
        let target = target_of(&p);
        // d lambda / dK = (w^T b)(c^T v) / (w^T v) with w^T v = 1
        let wb: Complex64 = target.left.iter().zip(p.b.iter()).map(|(w, b)| w * b).sum();
        let cv: Complex64 = target.right.iter().zip(p.c.iter()).map(|(v, c)| v * c).sum();
        let exact = wb * cv;
        let nc = PodParams::non_compensated(0.0, 0.1, 5.0, 2, 0.2);
        let (s1, _) = estimate_sensitivity(&p, &nc, &target, 0.02, 0.5).unwrap();
        let (s2, _) = estimate_sensitivity(&p, &nc, &target, 0.01, 0.5).unwrap();
        let e1 = (s1 - exact).norm();
        let e2 = (s2 - exact).norm();
        assert!(e1 < 0.05 * exact.norm(), "{s1} vs {exact}");
        assert!((e1 / e2 - 2.0).abs() < 0.1, "error ratio {}", e1 / e2);
    }

    #[test]
    fn disconnected_channel_has_zero_sensitivity() {
        let mut a = DMatrix::zeros(3, 3);
        a.view_mut((0, 0), (2, 2)).copy_from(&oscillator().a);
        a[(2, 2)] = -2.0;
        let p = RankOne {
            a,
            b: DVector::from_vec(vec![0.0, 0.0, 1.0]),
            c: DVector::from_vec(vec![0.0, 0.0, 1.0]),
        };
        let target = target_of(&p);
        let nc = PodParams::non_compensated(0.0, 0.1, 5.0, 2, 0.2);
        let (s, _) = estimate_sensitivity(&p, &nc, &target, 1.0, 0.5).unwrap();
        assert!(s.norm() < 1e-10);
        let spec = DesignSpec {
            selector: TargetSelector {
                f_lo_hz: 0.1,
                f_hi_hz: 5.0,
                min_speed_participation: 0.1,
            },
            probe_gain: 0.01,
            k_min: 0.0,
            k_max: 10.0,
            ..Default::default()
        };
        assert!(matches!(design_pod(&p, &spec), Err(Error::Uncontrollable(_))));
    }

    #[test]
    fn ratio_branches() {
        let (a, c) = compensation_ratio(PI, 2).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert_eq!(c, Compensation::Lead);
        let (a, c) = compensation_ratio(-FRAC_PI_2, 2).unwrap();
        let s = (PI / 4.0).sin();
        assert!((a - (1.0 + s) / (1.0 - s)).abs() < 1e-12);
        assert!((a - 5.828).abs() < 1e-3);
        assert_eq!(c, Compensation::Lag);
        assert!(matches!(compensation_ratio(0.0, 2), Err(Error::DegenerateLead { .. })));
        assert!(matches!(compensation_ratio(-1e-13, 2), Err(Error::UnboundedLag { .. })));
        for k in 0..50 {
            let phi = -PI + 0.3 + k as f64 * 0.11;
            if let Ok((a, c)) = compensation_ratio(phi, 3) {
                assert_eq!(a <= 1.0, phi >= 0.0);
                assert_eq!(c == Compensation::Lead, phi >= 0.0);
            }
        }
    }

    #[test]
    fn center_frequency_identity() {
        assert_eq!(leadlag_times(1.0, 2.0), (0.5, 0.5));
        for &(a, w) in &[(0.2, 1.0), (1.85, 3.676), (5.0, 12.0)] {
            let (t1, t2) = leadlag_times(a, w);
            assert!((t1 * t2 * w * w - 1.0).abs() < 1e-12);
            assert!((t2 / t1 - a).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_and_clamps() {
        let l0 = Complex64::new(0.06, 3.62);
        assert!((target_eigenvalue(l0, 0.10) - Complex64::new(-0.362, 3.62)).norm() < 1e-15);
        assert_eq!(target_eigenvalue(l0, 0.0), Complex64::new(0.0, 3.62));
        let ld = l0 - 0.5;
        let (raw, k, c) = compute_gain(l0, ld, Complex64::new(-0.0025, 0.0), 0.0, 1e3).unwrap();
        assert!((raw - 200.0).abs() < 1e-9 && k == raw && c == Clamp::None);
        let (_, k, c) = compute_gain(l0, l0 - 0.3, Complex64::new(-0.0025, 0.0), 200.0, 400.0).unwrap();
        assert_eq!((k, c), (200.0, Clamp::Minimum));
        let (_, k, c) = compute_gain(l0, l0, Complex64::new(-0.0025, 0.0), 200.0, 400.0).unwrap();
        assert_eq!((k, c), (200.0, Clamp::Minimum));
        assert!(matches!(
            compute_gain(l0, ld, Complex64::new(1e-13, 0.0), 0.0, 1.0),
            Err(Error::Uncontrollable(_))
        ));
    }

    /// Oscillator in feedback with the full POD dynamics.
    struct PodLoop(RankOne);

    impl PodPlant for PodLoop {
        fn state_matrix(&self, pod: &PodParams) -> Result<DMatrix<f64>> {
            let (ap, bp, cp, _) = pod.state_space();
            let (n, m) = (self.0.a.nrows(), ap.nrows());
            let mut a = DMatrix::zeros(n + m, n + m);
            a.view_mut((0, 0), (n, n)).copy_from(&self.0.a);
            a.view_mut((0, n), (n, m)).copy_from(&(&self.0.b * cp.transpose()));
            a.view_mut((n, 0), (m, n)).copy_from(&(&bp * self.0.c.transpose()));
            a.view_mut((n, n), (m, m)).copy_from(&ap);
            Ok(a)
        }

        fn labels(&self) -> Vec<String> {
            let mut l = self.0.labels();
            l.extend((0..4).map(|i| format!("pod{i}")));
            l
        }
    }

    #[test]
    fn synthetic_design_reaches_target() {
        let p = PodLoop(oscillator());
        let spec = DesignSpec {
            selector: TargetSelector {
                f_lo_hz: 0.1,
                f_hi_hz: 5.0,
                min_speed_participation: 0.1,
            },
            probe_gain: 0.01,
            k_min: 0.0,
            k_max: 10.0,
            ..Default::default()
        };
        let (_, rep) = design_pod(&p, &spec).unwrap();
        assert!((rep.s_comp_phase_deg.abs() - 180.0).abs() < 20.0, "{}", rep.s_comp_phase_deg);
        assert!(rep.zeta_achieved > rep.zeta0);
        assert!((rep.zeta_achieved - rep.zeta_d).abs() < 0.3 * (rep.zeta_d - rep.zeta0));
        assert!(rep.k > 0.0);
        assert!((rep.t_s1 * rep.t_s2 * rep.omega_center.powi(2) - 1.0).abs() < 1e-12);
    }
}
