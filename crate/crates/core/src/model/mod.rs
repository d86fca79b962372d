//! Devices and the dynamic network assembled into a single ODE
//! `x' = f(x)` in one synchronously rotating frame.
//!
//! Series branches and inductive loads carry current states, every bus
//! carries a capacitor voltage state, so bus voltages are explicit functions
//! of the state vector.

mod sim;

pub use sim::{simulate, Event, EventKind, RefChannel, SimOptions, TimeSeries};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gfor::{self, GforModel};
use crate::net::{solve_powerflow, PowerFlowSolution, PuBase};
use crate::pod::PodParams;
use crate::sg::{SgModel, OMEGA};
use crate::spec::SystemSpec;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone)]
pub struct SgUnit {
    pub name: String,
    pub bus: usize,
    pub model: SgModel,
    pub offset: usize,
    /// Rating over the system base power.
    pub s_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PodUnit {
    pub params: PodParams,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct GforUnit {
    pub name: String,
    pub bus: usize,
    pub model: GforModel,
    pub offset: usize,
    pub pod_p: Option<PodUnit>,
    pub pod_q: Option<PodUnit>,
}

#[derive(Debug, Clone)]
struct DynBranch {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    tap: f64,
    offset: usize,
}

#[derive(Debug, Clone)]
struct DynBus {
    b_fixed: f64,
    g_fixed: f64,
    r_s: f64,
    load_g: f64,
    load_bl: f64,
    load_bc: f64,
    load_scale: f64,
    vc_offset: usize,
    il_offset: Option<usize>,
}

impl DynBus {
    fn g(&self) -> f64 {
        self.g_fixed + self.load_scale * self.load_g
    }

    fn b(&self) -> f64 {
        self.b_fixed + self.load_scale * self.load_bc
    }
}

/// Externally adjustable quantity of an assembled model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    /// Multiplier on the constant-impedance load of a bus.
    LoadScale(u32),
    SgVoltageRef(String),
    SgPowerRef(String),
    /// Supplementary active-power reference of a converter droop.
    GforPowerRef(String),
    GforReactiveRef(String),
    GforVoltageRef(String),
}

impl ModelInput {
    pub fn label(&self) -> String {
        match self {
            Self::LoadScale(b) => format!("load{b}.scale"),
            Self::SgVoltageRef(d) => format!("{d}.v_ref"),
            Self::SgPowerRef(d) => format!("{d}.p_ref"),
            Self::GforPowerRef(d) => format!("{d}.P_ref"),
            Self::GforReactiveRef(d) => format!("{d}.Q_ref"),
            Self::GforVoltageRef(d) => format!("{d}.V_ref"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicModel {
    pub base: PuBase,
    pub power_flow: PowerFlowSolution,
    pub sgs: Vec<SgUnit>,
    pub gfors: Vec<GforUnit>,
    pub bus_ids: Vec<u32>,
    branches: Vec<DynBranch>,
    buses: Vec<DynBus>,
    labels: Vec<String>,
    channels: Vec<String>,
    /// Polished equilibrium.
    pub x0: Vec<f64>,
    omega_b: f64,
}

fn cplx(x: &[f64], i: usize) -> Complex64 {
    Complex64::new(x[i], x[i + 1])
}

fn put(dx: &mut [f64], i: usize, v: Complex64) {
    dx[i] = v.re;
    dx[i + 1] = v.im;
}

fn inf_norm(v: &[f64]) -> (f64, usize) {
    v.iter()
        .enumerate()
        .fold((0.0, 0), |(m, k), (i, d)| if d.abs() > m { (d.abs(), i) } else { (m, k) })
}

fn rename_device(err: Error, name: &str) -> Error {
    match err {
        Error::Initialization { reason, .. } => Error::Initialization {
            device: name.to_string(),
            reason,
        },
        e => e,
    }
}

/// Builds the model from a spec: power flow, device initialization and
/// Newton polishing of the equilibrium.
pub fn assemble(spec: &SystemSpec) -> Result<DynamicModel> {
    spec.validate()?;
    let net = spec.network()?;
    let pf = solve_powerflow(&net, spec.solver.pf_tol, spec.solver.pf_max_iter)?;
    let v = pf.voltages();
    let wb = spec.base.omega_b();
    let shunts = spec.effective_shunts()?;
    let nb = spec.buses.len();
    let mut labels: Vec<String> = Vec::new();

    // devices
    let mut sgs = Vec::new();
    for s in &spec.sg {
        let model = SgModel::new(
            s.params.clone(),
            s.exciter.clone(),
            s.governor.clone(),
            wb,
        )
        .map_err(|e| rename_device(e, &s.name))?;
        let offset = labels.len();
        labels.extend(model.layout.names().iter().map(|n| format!("{}.{n}", s.name)));
        sgs.push(SgUnit {
            name: s.name.clone(),
            bus: spec.bus_index(s.bus)?,
            model,
            offset,
            s_ratio: s.rating_mva / spec.base.s_mva,
        });
    }
    let mut gfors = Vec::new();
    for g in &spec.gfor {
        let model = GforModel::new(g.params.clone(), wb, spec.base.s_mva)?;
        let offset = labels.len();
        labels.extend(gfor::STATE_NAMES.iter().map(|n| format!("{}.{n}", g.name)));
        let mut pod = |p: &Option<PodParams>, tag: &str| {
            p.as_ref().map(|params| {
                let offset = labels.len();
                labels.extend(
                    params
                        .state_names()
                        .iter()
                        .map(|n| format!("{}.{tag}.{n}", g.name)),
                );
                PodUnit {
                    params: params.clone(),
                    offset,
                }
            })
        };
        let pod_p = pod(&g.pod_p, "pod_p");
        let pod_q = pod(&g.pod_q, "pod_q");
        gfors.push(GforUnit {
            name: g.name.clone(),
            bus: spec.bus_index(g.bus)?,
            model,
            offset,
            pod_p,
            pod_q,
        });
    }

    // network
    let mut branches = Vec::new();
    let mut charging = vec![0.0; nb];
    for (k, b) in spec.branches.iter().enumerate() {
        if !(b.x > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "branch {}-{} needs positive reactance in the dynamic network",
                b.from, b.to
            )));
        }
        let from = spec.bus_index(b.from)?;
        let to = spec.bus_index(b.to)?;
        charging[from] += b.b / 2.0 / (b.tap * b.tap);
        charging[to] += b.b / 2.0;
        let dup = spec.branches[..k]
            .iter()
            .filter(|o| o.from == b.from && o.to == b.to)
            .count();
        let tag = if dup == 0 {
            format!("net.br{}-{}", b.from, b.to)
        } else {
            format!("net.br{}-{}_{}", b.from, b.to, dup + 1)
        };
        branches.push(DynBranch {
            from,
            to,
            r: b.r,
            x: b.x,
            tap: b.tap,
            offset: labels.len(),
        });
        labels.push(format!("{tag}.i_re"));
        labels.push(format!("{tag}.i_im"));
    }
    let mut buses = Vec::new();
    for (i, bspec) in spec.buses.iter().enumerate() {
        let (p, q) = spec
            .loads
            .iter()
            .filter(|l| l.bus == bspec.id)
            .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q));
        let vm2 = v[i].norm_sqr();
        let load_g = p / vm2;
        let (load_bl, load_bc) = if q > 0.0 { (q / vm2, 0.0) } else { (0.0, -q / vm2) };
        let bus = DynBus {
            b_fixed: shunts[i].b + charging[i],
            g_fixed: shunts[i].g,
            r_s: shunts[i].r_series,
            load_g,
            load_bl,
            load_bc,
            load_scale: 1.0,
            vc_offset: 0,
            il_offset: None,
        };
        if !(bus.b() > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "bus {} has no capacitance; set a shunt or solver.min_bus_b_pu_sys",
                bspec.id
            )));
        }
        buses.push(bus);
    }
    for (i, bus) in buses.iter_mut().enumerate() {
        let id = spec.buses[i].id;
        if bus.load_bl > 0.0 {
            bus.il_offset = Some(labels.len());
            labels.push(format!("net.load{id}.il_re"));
            labels.push(format!("net.load{id}.il_im"));
        }
    }
    for (i, bus) in buses.iter_mut().enumerate() {
        let id = spec.buses[i].id;
        bus.vc_offset = labels.len();
        labels.push(format!("net.bus{id}.vc_re"));
        labels.push(format!("net.bus{id}.vc_im"));
    }

    let mut model = DynamicModel {
        base: spec.base,
        power_flow: pf,
        sgs,
        gfors,
        bus_ids: spec.buses.iter().map(|b| b.id).collect(),
        branches,
        buses,
        labels,
        channels: Vec::new(),
        x0: Vec::new(),
        omega_b: wb,
    };
    model.channels = model.build_channel_names();
    let mut x = vec![0.0; model.labels.len()];
    model.initialize_states(spec, &mut x)?;
    model.x0 = model.polish(x, spec.solver.init_tol)?;
    Ok(model)
}

impl DynamicModel {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channels
    }

    pub fn omega_b(&self) -> f64 {
        self.omega_b
    }

    fn bus_pos(&self, id: u32) -> Result<usize> {
        self.bus_ids
            .iter()
            .position(|&b| b == id)
            .ok_or(Error::UnknownBus(id))
    }

    fn sg_pos(&self, name: &str) -> Result<usize> {
        self.sgs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::InvalidSpec(format!("no synchronous machine named {name}")))
    }

    fn gfor_pos(&self, name: &str) -> Result<usize> {
        self.gfors
            .iter()
            .position(|g| g.name == name)
            .ok_or_else(|| Error::InvalidSpec(format!("no converter named {name}")))
    }

    pub fn input(&self, input: &ModelInput) -> Result<f64> {
        Ok(match input {
            ModelInput::LoadScale(b) => self.buses[self.bus_pos(*b)?].load_scale,
            ModelInput::SgVoltageRef(d) => self.sgs[self.sg_pos(d)?].model.v_ref,
            ModelInput::SgPowerRef(d) => self.sgs[self.sg_pos(d)?].model.p_ref,
            ModelInput::GforPowerRef(d) => self.gfors[self.gfor_pos(d)?].model.p_set,
            ModelInput::GforReactiveRef(d) => self.gfors[self.gfor_pos(d)?].model.q_set,
            ModelInput::GforVoltageRef(d) => self.gfors[self.gfor_pos(d)?].model.v_set,
        })
    }

    pub fn set_input(&mut self, input: &ModelInput, value: f64) -> Result<()> {
        match input {
            ModelInput::LoadScale(b) => {
                let i = self.bus_pos(*b)?;
                self.buses[i].load_scale = value;
            }
            ModelInput::SgVoltageRef(d) => {
                let i = self.sg_pos(d)?;
                self.sgs[i].model.v_ref = value;
            }
            ModelInput::SgPowerRef(d) => {
                let i = self.sg_pos(d)?;
                self.sgs[i].model.p_ref = value;
            }
            ModelInput::GforPowerRef(d) => {
                let i = self.gfor_pos(d)?;
                self.gfors[i].model.p_set = value;
            }
            ModelInput::GforReactiveRef(d) => {
                let i = self.gfor_pos(d)?;
                self.gfors[i].model.q_set = value;
            }
            ModelInput::GforVoltageRef(d) => {
                let i = self.gfor_pos(d)?;
                self.gfors[i].model.v_set = value;
            }
        }
        Ok(())
    }

    /// Load buses and converter P/Q references.
    pub fn default_inputs(&self) -> Vec<ModelInput> {
        let mut out: Vec<ModelInput> = self
            .bus_ids
            .iter()
            .zip(&self.buses)
            .filter(|(_, b)| b.load_g != 0.0 || b.load_bl != 0.0 || b.load_bc != 0.0)
            .map(|(id, _)| ModelInput::LoadScale(*id))
            .collect();
        for g in &self.gfors {
            out.push(ModelInput::GforPowerRef(g.name.clone()));
            out.push(ModelInput::GforReactiveRef(g.name.clone()));
        }
        out
    }

    fn build_channel_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.sgs {
            for c in [
                "freq_pu", "P_pu", "Q_pu", "id_pu", "iq_pu", "vd_pu", "vq_pu", "efd_pu", "pm_pu",
            ] {
                out.push(format!("{}.{c}", s.name));
            }
        }
        for g in &self.gfors {
            for c in ["freq_pu", "P_pu", "Q_pu", "V_pu", "pod_p_out_pu", "pod_q_out_pu"] {
                out.push(format!("{}.{c}", g.name));
            }
        }
        for id in &self.bus_ids {
            out.push(format!("bus{id}.V_pu"));
        }
        out
    }

    fn initialize_states(&mut self, spec: &SystemSpec, x: &mut [f64]) -> Result<()> {
        let v = self.power_flow.voltages();
        let nb = self.buses.len();
        let mut s_dev = vec![Complex64::new(0.0, 0.0); nb];
        for i in 0..nb {
            s_dev[i] = Complex64::new(self.power_flow.p[i], self.power_flow.q[i]);
        }
        for l in &spec.loads {
            s_dev[self.bus_pos(l.bus)?] += Complex64::new(l.p, l.q);
        }

        // network states at the power-flow point
        let mut i_grid = vec![Complex64::new(0.0, 0.0); nb];
        for br in &self.branches {
            let i = (v[br.from] / br.tap - v[br.to]) / Complex64::new(br.r, br.x);
            put(x, br.offset, i);
            i_grid[br.from] += i / br.tap;
            i_grid[br.to] -= i;
        }
        for (k, bus) in self.buses.iter().enumerate() {
            if let Some(o) = bus.il_offset {
                put(x, o, -J * bus.load_bl * bus.load_scale * v[k]);
            }
            let cap = if bus.r_s == 0.0 {
                Complex64::new(0.0, bus.b())
            } else {
                Complex64::new(bus.r_s, -1.0 / bus.b()).inv()
            };
            put(x, bus.vc_offset, v[k] - bus.r_s * v[k] * cap);
        }

        // generators: slack power shared by rating, reactive power by rating
        for k in 0..nb {
            let here: Vec<usize> = (0..self.sgs.len()).filter(|&i| self.sgs[i].bus == k).collect();
            if here.is_empty() {
                continue;
            }
            let total_rating: f64 = here.iter().map(|&i| self.sgs[i].s_ratio).sum();
            let slack = spec.buses[k].kind == crate::net::BusKind::Slack;
            for &i in &here {
                let share = self.sgs[i].s_ratio / total_rating;
                let p = if slack { s_dev[k].re * share } else { spec.sg[i].p };
                let s = Complex64::new(p, s_dev[k].im * share);
                let unit = &mut self.sgs[i];
                let xs = unit
                    .model
                    .initialize(v[k], s / unit.s_ratio)
                    .map_err(|e| rename_device(e, &unit.name))?;
                x[unit.offset..unit.offset + xs.len()].copy_from_slice(&xs);
            }
        }
        for unit in &mut self.gfors {
            let k = unit.bus;
            let cap = unit.model.capacitor_shunt().admittance();
            let s_grid = s_dev[k] - v[k] * (v[k] * cap).conj();
            let xs = unit
                .model
                .initialize(v[k], s_grid)
                .map_err(|e| rename_device(e, &unit.name))?;
            x[unit.offset..unit.offset + xs.len()].copy_from_slice(&xs);
        }

        // device-level consistency with the power-flow voltages
        let tol = spec.solver.init_tol;
        for unit in &self.sgs {
            let xs = &x[unit.offset..unit.offset + unit.model.layout.len()];
            let mut dx = vec![0.0; xs.len()];
            unit.model.derivatives(xs, v[unit.bus], &mut dx);
            let (r, i) = inf_norm(&dx);
            if r > tol {
                return Err(Error::Residual {
                    state: self.labels[unit.offset + i].clone(),
                    residual: r,
                });
            }
        }
        for unit in &self.gfors {
            let xs = &x[unit.offset..unit.offset + gfor::N_STATES];
            let mut dx = vec![0.0; xs.len()];
            unit.model
                .derivatives(xs, v[unit.bus], i_grid[unit.bus], 0.0, 0.0, &mut dx);
            let (r, i) = inf_norm(&dx);
            if r > tol {
                return Err(Error::Residual {
                    state: self.labels[unit.offset + i].clone(),
                    residual: r,
                });
            }
        }
        Ok(())
    }

    /// Newton iteration on `f(x) = 0` with a pseudo-inverse step; the angle
    /// reference makes the Jacobian singular.
    fn polish(&self, mut x: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
        let n = x.len();
        let mut f = vec![0.0; n];
        self.derivatives(&x, &mut f);
        let (mut norm, _) = inf_norm(&f);
        for _ in 0..8 {
            if norm < 1e-11 {
                break;
            }
            let jac = self.jacobian(&x, 1e-6, 1.0);
            let svd = jac.svd(true, true);
            let smax = svd.singular_values.max();
            let rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
            let step = svd
                .solve(&rhs, smax * 1e-12)
                .map_err(|e| Error::Eigen(e.to_string()))?;
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..12 {
                let trial: Vec<f64> = (0..n).map(|i| x[i] + alpha * step[i]).collect();
                let mut ft = vec![0.0; n];
                self.derivatives(&trial, &mut ft);
                let (nt, _) = inf_norm(&ft);
                if nt < norm {
                    x = trial;
                    f = ft;
                    norm = nt;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let (r, i) = inf_norm(&f);
        if r > tol {
            return Err(Error::Residual {
                state: self.labels[i].clone(),
                residual: r,
            });
        }
        Ok(x)
    }

    /// Central-difference Jacobian of the state derivatives with step
    /// `rel * max(|x_j|, scale_floor)`.
    pub fn jacobian(&self, x: &[f64], rel: f64, scale_floor: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = rel * x[j].abs().max(scale_floor);
            xp[j] = x[j] + h;
            self.derivatives(&xp, &mut fp);
            xp[j] = x[j] - h;
            self.derivatives(&xp, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    pub fn derivatives(&self, x: &[f64], dx: &mut [f64]) {
        self.evaluate(x, dx, None);
    }

    /// Channel values at `x`, in the order of [`Self::channel_names`].
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        let mut out = Vec::with_capacity(self.channels.len());
        self.evaluate(x, &mut dx, Some(&mut out));
        out
    }

    /// Infinity norm of the derivatives and the offending state label.
    pub fn residual(&self, x: &[f64]) -> (f64, &str) {
        let mut dx = vec![0.0; x.len()];
        self.derivatives(x, &mut dx);
        let (r, i) = inf_norm(&dx);
        (r, &self.labels[i])
    }

    fn evaluate(&self, x: &[f64], dx: &mut [f64], mut out: Option<&mut Vec<f64>>) {
        let nb = self.buses.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut i_in = vec![zero; nb];
        let mut i_grid = vec![zero; nb];
        for s in &self.sgs {
            let xs = &x[s.offset..s.offset + s.model.layout.len()];
            i_in[s.bus] += s.model.injection(xs) * s.s_ratio;
        }
        for g in &self.gfors {
            i_in[g.bus] += g.model.injection(&x[g.offset..g.offset + gfor::N_STATES]);
        }
        for br in &self.branches {
            let i = cplx(x, br.offset);
            i_in[br.from] -= i / br.tap;
            i_in[br.to] += i;
            i_grid[br.from] += i / br.tap;
            i_grid[br.to] -= i;
        }
        let mut v = vec![zero; nb];
        for (k, bus) in self.buses.iter().enumerate() {
            if let Some(o) = bus.il_offset {
                i_in[k] -= cplx(x, o);
            }
            let vc = cplx(x, bus.vc_offset);
            v[k] = (vc + bus.r_s * i_in[k]) / (1.0 + bus.r_s * bus.g());
        }

        let wb = self.omega_b;
        for br in &self.branches {
            let i = cplx(x, br.offset);
            let di = (v[br.from] / br.tap - v[br.to] - Complex64::new(br.r, br.x) * i) * (wb / br.x);
            put(dx, br.offset, di);
        }
        for (k, bus) in self.buses.iter().enumerate() {
            if let Some(o) = bus.il_offset {
                let il = cplx(x, o);
                put(dx, o, (bus.load_bl * bus.load_scale * v[k] - J * il) * wb);
            }
            let vc = cplx(x, bus.vc_offset);
            let i_cap = i_in[k] - bus.g() * v[k];
            put(dx, bus.vc_offset, (i_cap / bus.b() - J * vc) * wb);
        }

        for s in &self.sgs {
            let n = s.model.layout.len();
            let o = s
                .model
                .derivatives(&x[s.offset..s.offset + n], v[s.bus], &mut dx[s.offset..s.offset + n]);
            if let Some(out) = out.as_deref_mut() {
                let sv = v[s.bus] * o.i_net.conj();
                out.extend_from_slice(&[
                    x[s.offset + OMEGA],
                    sv.re,
                    sv.im,
                    o.i_rotor.re,
                    o.i_rotor.im,
                    o.v_rotor.re,
                    o.v_rotor.im,
                    o.efd,
                    o.p_mech,
                ]);
            }
        }
        for g in &self.gfors {
            let pod_out = |p: &Option<PodUnit>| {
                p.as_ref().map_or(0.0, |u| {
                    u.params
                        .output(&x[u.offset..u.offset + u.params.state_count()])
                })
            };
            let dp = pod_out(&g.pod_p);
            let dq = pod_out(&g.pod_q);
            let n = gfor::N_STATES;
            let o = g.model.derivatives(
                &x[g.offset..g.offset + n],
                v[g.bus],
                i_grid[g.bus],
                dp,
                dq,
                &mut dx[g.offset..g.offset + n],
            );
            for u in g.pod_p.iter().chain(g.pod_q.iter()) {
                let m = u.params.state_count();
                u.params.derivatives(
                    &x[u.offset..u.offset + m],
                    o.omega - 1.0,
                    &mut dx[u.offset..u.offset + m],
                );
            }
            if let Some(out) = out.as_deref_mut() {
                out.extend_from_slice(&[o.omega, o.p, o.q, v[g.bus].norm(), dp, dq]);
            }
        }
        if let Some(out) = out.as_deref_mut() {
            out.extend(v.iter().map(|c| c.norm()));
        }
    }

    /// Device electrical power minus load and shunt consumption and losses,
    /// all evaluated at `x` (system base).
    pub fn power_balance(&self, x: &[f64]) -> f64 {
        let nb = self.buses.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut i_in = vec![zero; nb];
        let mut gen = 0.0;
        for s in &self.sgs {
            let xs = &x[s.offset..s.offset + s.model.layout.len()];
            i_in[s.bus] += s.model.injection(xs) * s.s_ratio;
        }
        for g in &self.gfors {
            i_in[g.bus] += g.model.injection(&x[g.offset..g.offset + gfor::N_STATES]);
        }
        let dev = i_in.clone();
        let mut losses = 0.0;
        for br in &self.branches {
            let i = cplx(x, br.offset);
            i_in[br.from] -= i / br.tap;
            i_in[br.to] += i;
            losses += br.r * i.norm_sqr();
        }
        let mut consumed = 0.0;
        for (k, bus) in self.buses.iter().enumerate() {
            if let Some(o) = bus.il_offset {
                i_in[k] -= cplx(x, o);
            }
            let vc = cplx(x, bus.vc_offset);
            let v = (vc + bus.r_s * i_in[k]) / (1.0 + bus.r_s * bus.g());
            gen += (v * dev[k].conj()).re;
            let i_cap = i_in[k] - bus.g() * v;
            consumed += bus.g() * v.norm_sqr() + bus.r_s * i_cap.norm_sqr();
        }
        gen - consumed - losses
    }
}
