//! Benchmark builders, generation-unit splitting and the scenario and sweep
//! drivers.

mod matrix;
mod param;

pub use matrix::{
    analyze, run_scenarios, run_sweep, scenario_rows_to_csv, sweep_events_to_csv, sweep_to_csv,
    Analysis, EventMode, ModeSummary, Scenario, ScenarioMatrix, ScenarioRow, SweepEvent, SweepMode,
    SweepOptions, SweepPoint, SweepReport, SweepSpec,
};
pub use param::ParamPath;


use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfor::GforParams;
use crate::net::{solve_powerflow, BusKind, PuBase};
use crate::sg::{Ac4aParams, Ieeeg1Params, SgParams};
use crate::spec::{BranchSpec, BusSpec, GforSpec, LoadSpec, SgSpec, SolverSettings, SystemSpec};

/// Knobs of the two-area benchmark that the published description leaves
/// open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAreaOptions {
    #[serde(rename = "h_s")]
    pub h: f64,
    /// Reactive over active power of both loads.
    pub load_q_ratio: f64,
    /// Active load at the receiving bus 3.
    #[serde(rename = "load3_p_pu_sys")]
    pub load3_p: f64,
    /// Line 2-3 transfer at the operating point.
    #[serde(rename = "line_flow_pu_sys")]
    pub line_flow: f64,
    #[serde(rename = "unit_p_pu_sys")]
    pub unit_p: f64,
    #[serde(rename = "bus_shunt_b_pu_sys")]
    pub bus_shunt_b: f64,
    #[serde(rename = "transformer_x_pu_dev")]
    pub transformer_x: f64,
    #[serde(rename = "transformer_r_pu_dev")]
    pub transformer_r: f64,
    /// Resistance of line 2-3 relative to its reactance.
    pub line_r_over_x: f64,
    pub with_gfor: bool,
    pub gfor: GforParams,
}

impl Default for TwoAreaOptions {
    fn default() -> Self {
        Self {
            h: 4.0,
            load_q_ratio: 0.1,
            load3_p: 40.0,
            line_flow: 1.0,
            unit_p: 13.5,
            bus_shunt_b: 0.5,
            transformer_x: 0.15,
            transformer_r: 0.002,
            line_r_over_x: 0.1,
            with_gfor: true,
            gfor: GforParams::default(),
        }
    }
}

fn bus(id: u32, kind: BusKind, shunt_b: f64) -> BusSpec {
    BusSpec {
        id,
        kind,
        v_set: 1.0,
        shunt_g: 0.0,
        shunt_b,
    }
}

fn branch(from: u32, to: u32, r: f64, x: f64) -> BranchSpec {
    BranchSpec {
        from,
        to,
        r,
        x,
        b: 0.0,
        tap: 1.0,
    }
}

fn sg(name: &str, bus: u32, rating: f64, p: f64, h: f64, x_tr: f64) -> SgSpec {
    SgSpec {
        name: name.into(),
        bus,
        rating_mva: rating,
        p,
        params: SgParams {
            h,
            x_tr,
            ..Default::default()
        },
        exciter: Some(Ac4aParams::default()),
        governor: Some(Ieeeg1Params::default()),
        snubber: true,
    }
}

/// Two-area system: SG1 (bus 1) and the converter (bus 5) feed bus 2
/// through their step-up transformers, line 2-3 of reactance `x_l` carries
/// the transfer to bus 3, where SG2 (bus 4, slack) is connected.
pub fn build_two_area(x_l: f64, opts: &TwoAreaOptions) -> Result<SystemSpec> {
    if !(x_l > 0.0 && x_l < 10.0) {
        return Err(Error::InvalidParameter(format!("line reactance {x_l} outside (0, 10) pu")));
    }
    let base = PuBase::default();
    let (s1, s2) = (1500.0, 5000.0);
    let xt = |s: f64| base.z_to_sys(opts.transformer_x, s);
    let rt = |s: f64| base.z_to_sys(opts.transformer_r, s);
    let gfor_p = if opts.with_gfor { opts.unit_p } else { 0.0 };
    let load2 = opts.unit_p + gfor_p - opts.line_flow;
    let mut spec = SystemSpec {
        base,
        buses: vec![
            bus(1, BusKind::PV, opts.bus_shunt_b),
            bus(2, BusKind::PQ, opts.bus_shunt_b),
            bus(3, BusKind::PQ, opts.bus_shunt_b),
            bus(4, BusKind::Slack, opts.bus_shunt_b),
        ],
        branches: vec![
            branch(1, 2, rt(s1), xt(s1)),
            branch(2, 3, opts.line_r_over_x * x_l, x_l),
            branch(4, 3, rt(s2), xt(s2)),
        ],
        loads: vec![
            LoadSpec {
                bus: 2,
                p: load2,
                q: load2 * opts.load_q_ratio,
            },
            LoadSpec {
                bus: 3,
                p: opts.load3_p,
                q: opts.load3_p * opts.load_q_ratio,
            },
        ],
        sg: vec![
            sg("SG1", 1, s1, opts.unit_p, opts.h, opts.transformer_x),
            sg("SG2", 4, s2, opts.load3_p - opts.line_flow, opts.h, opts.transformer_x),
        ],
        gfor: vec![],
        solver: SolverSettings::default(),
    };
    if opts.with_gfor {
        let params = GforParams {
            rating_mva: s1,
            ..opts.gfor.clone()
        };
        spec.buses.push(bus(5, BusKind::PV, 0.0));
        spec.branches.push(branch(5, 2, rt(s1), xt(s1)));
        spec.gfor.push(GforSpec {
            name: "GFOR2".into(),
            bus: 5,
            p: opts.unit_p,
            params,
            pod_p: None,
            pod_q: None,
        });
    }
    spec.validate()?;
    hold_line_flow(&mut spec, opts.line_flow)?;
    Ok(spec)
}

/// Two-area systems rebuilt at each line reactance of `grid`, so the line
/// flow is held at every point. Converter PODs are copied by name from
/// `controllers`.
pub fn two_area_sweep_systems(
    grid: &[f64],
    opts: &TwoAreaOptions,
    controllers: &SystemSpec,
) -> Result<Vec<SystemSpec>> {
    grid.iter()
        .map(|&x| {
            let mut s = build_two_area(x, opts)?;
            for g in &mut s.gfor {
                if let Some(c) = controllers.gfor.iter().find(|c| c.name == g.name) {
                    g.pod_p = c.pod_p.clone();
                    g.pod_q = c.pod_q.clone();
                }
            }
            Ok(s)
        })
        .collect()
}

/// Adjusts the bus-2 load (constant power factor) until the sending-end
/// flow of line 2-3 equals `target`; absorbs the transformer losses.
fn hold_line_flow(spec: &mut SystemSpec, target: f64) -> Result<()> {
    let line = spec
        .branches
        .iter()
        .position(|b| (b.from, b.to) == (2, 3))
        .ok_or_else(|| Error::InvalidSpec("two-area line 2-3 missing".into()))?;
    let load = spec
        .loads
        .iter()
        .position(|l| l.bus == 2)
        .ok_or_else(|| Error::InvalidSpec("two-area load at bus 2 missing".into()))?;
    let ratio = spec.loads[load].q / spec.loads[load].p;
    for _ in 0..30 {
        let net = spec.network()?;
        let pf = solve_powerflow(&net, 1e-12, spec.solver.pf_max_iter)?;
        let flow = net.branch_flow(&net.branches[line], &pf.voltages())?.re;
        let err = flow - target;
        if err.abs() < 1e-10 {
            return Ok(());
        }
        let l = &mut spec.loads[load];
        l.p += err;
        l.q = l.p * ratio;
    }
    Err(Error::InvalidSpec("line flow correction did not settle".into()))
}

/// Removes every converter together with its dedicated bus and branch.
/// The complex power each converter delivered into the bus it fed is taken
/// off that bus's load, so the remaining bus voltages are unchanged.
pub fn without_gfor(spec: &SystemSpec) -> Result<SystemSpec> {
    let net = spec.network()?;
    let pf = solve_powerflow(&net, spec.solver.pf_tol.min(1e-10), spec.solver.pf_max_iter)?;
    let v = pf.voltages();
    let mut out = spec.clone();
    for g in &spec.gfor {
        for br in net.branches.iter().filter(|b| b.from == g.bus || b.to == g.bus) {
            let feeds = if br.from == g.bus { br.to } else { br.from };
            let f = net.index_of(br.from)?;
            let t = net.index_of(br.to)?;
            let y = br.series_admittance();
            let ysh = Complex64::new(0.0, br.b / 2.0);
            let delivered = if br.from == g.bus {
                let i_to = (y + ysh) * v[t] - y / br.tap * v[f];
                -v[t] * i_to.conj()
            } else {
                let i_from = (y + ysh) / (br.tap * br.tap) * v[f] - y / br.tap * v[t];
                -v[f] * i_from.conj()
            };
            match out.loads.iter_mut().find(|l| l.bus == feeds) {
                Some(load) => {
                    load.p -= delivered.re;
                    load.q -= delivered.im;
                }
                None => out.loads.push(LoadSpec {
                    bus: feeds,
                    p: -delivered.re,
                    q: -delivered.im,
                }),
            }
        }
        out.buses.retain(|b| b.id != g.bus);
        out.branches.retain(|b| b.from != g.bus && b.to != g.bus);
    }
    out.gfor.clear();
    out.validate()?;
    Ok(out)
}

/// Splits the synchronous unit at `bus` into an SG share `1 - alpha` and a
/// converter share `alpha` of rating and dispatch. The converter gets its
/// own bus behind a step-up transformer whose set-point keeps the original
/// voltages, so the network operating point is unchanged.
pub fn split_generation_unit(spec: &SystemSpec, bus_id: u32, alpha: f64) -> Result<SystemSpec> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("split ratio {alpha} outside [0, 1]")));
    }
    let k = spec
        .sg
        .iter()
        .position(|s| s.bus == bus_id)
        .ok_or_else(|| Error::InvalidParameter(format!("no synchronous unit at bus {bus_id}")))?;
    if alpha == 0.0 {
        return Ok(spec.clone());
    }
    let net = spec.network()?;
    let pf = solve_powerflow(&net, spec.solver.pf_tol, spec.solver.pf_max_iter)?;
    let bi = spec.bus_index(bus_id)?;
    let unit = spec.sg[k].clone();
    let kind = spec.buses[bi].kind;
    // unit share of the bus injection, split by rating as in assembly
    let devices_here: f64 = spec
        .sg
        .iter()
        .filter(|s| s.bus == bus_id)
        .map(|s| s.rating_mva)
        .sum();
    let load_q: f64 = spec.loads.iter().filter(|l| l.bus == bus_id).map(|l| l.q).sum();
    let load_p: f64 = spec.loads.iter().filter(|l| l.bus == bus_id).map(|l| l.p).sum();
    let vb = pf.voltage(bi);
    let s_bus = Complex64::new(pf.p[bi] + load_p, pf.q[bi] + load_q);
    let share = unit.rating_mva / devices_here;
    let p_unit = if kind == BusKind::Slack { s_bus.re * share } else { unit.p };
    let q_unit = s_bus.im * share;
    // the snubber conductance shrinks with the synchronous rating
    let snubber_p = if unit.snubber {
        vb.norm_sqr() * unit.rating_mva / spec.base.s_mva / unit.params.r_snb
    } else {
        0.0
    };
    let p_conv = alpha * (p_unit - snubber_p);
    let q_conv = alpha * q_unit;

    let new_id = spec.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    let name = format!("GFOR{bus_id}");
    if spec.device_names().contains(&name.as_str()) {
        return Err(Error::InvalidSpec(format!("device {name} already exists")));
    }
    let rating = alpha * unit.rating_mva;
    let params = GforParams {
        rating_mva: rating,
        ..GforParams::default()
    };
    let x_t = spec.base.z_to_sys(unit.params.x_tr, rating);
    // converter bus voltage delivering (p_conv, q_conv) into the unit bus
    let vm_b = vb.norm();
    let re = q_conv * x_t / vm_b + vm_b;
    let im = p_conv * x_t / vm_b;
    let vg = Complex64::new(re, im) * (vb / vm_b);
    let ratio = rating / spec.base.s_mva;
    let cap = crate::net::Shunt {
        g: 0.0,
        b: params.b_c * ratio,
        r_series: params.r_cap() / ratio,
    };
    let p_cap = (vg * (cap.admittance() * vg).conj()).re;

    let mut out = spec.clone();
    let remaining = 1.0 - alpha;
    let gfor_kind = if alpha == 1.0 { kind } else { BusKind::PV };
    out.buses.push(BusSpec {
        id: new_id,
        kind: gfor_kind,
        v_set: vg.norm(),
        shunt_g: 0.0,
        shunt_b: 0.0,
    });
    out.branches.push(BranchSpec {
        from: new_id,
        to: bus_id,
        r: 0.0,
        x: x_t,
        b: 0.0,
        tap: 1.0,
    });
    out.gfor.push(GforSpec {
        name,
        bus: new_id,
        p: p_conv + p_cap,
        params,
        pod_p: None,
        pod_q: None,
    });
    if alpha == 1.0 {
        out.sg.remove(k);
        if !out.sg.iter().any(|s| s.bus == bus_id) {
            out.buses[bi].kind = BusKind::PQ;
        }
    } else {
        let s = &mut out.sg[k];
        s.rating_mva *= remaining;
        s.p = if kind == BusKind::Slack { s.p } else { remaining * unit.p };
    }
    out.validate()?;
    Ok(out)
}
