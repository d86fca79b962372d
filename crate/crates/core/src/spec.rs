//! Serializable system description. Field names carry their per-unit base:
//! `_pu_sys` on the system base, `_pu_dev` on the device rating.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfor::GforParams;
use crate::net::{Branch, Bus, BusKind, Network, PuBase, Shunt};
use crate::pod::PodParams;
use crate::sg::{Ac4aParams, Ieeeg1Params, SgParams};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: u32,
    pub kind: BusKind,
    #[serde(rename = "v_set_pu", default = "one")]
    pub v_set: f64,
    #[serde(rename = "shunt_g_pu_sys", default)]
    pub shunt_g: f64,
    #[serde(rename = "shunt_b_pu_sys", default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: u32,
    pub to: u32,
    #[serde(rename = "r_pu_sys", default)]
    pub r: f64,
    #[serde(rename = "x_pu_sys")]
    pub x: f64,
    #[serde(rename = "b_pu_sys", default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tap: f64,
}

/// Constant-impedance load defined by its power at the power-flow voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: u32,
    #[serde(rename = "p_pu_sys")]
    pub p: f64,
    #[serde(rename = "q_pu_sys")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgSpec {
    pub name: String,
    pub bus: u32,
    pub rating_mva: f64,
    /// Active power dispatch; ignored at the slack bus.
    #[serde(rename = "p_pu_sys")]
    pub p: f64,
    pub params: SgParams,
    #[serde(default)]
    pub exciter: Option<Ac4aParams>,
    #[serde(default)]
    pub governor: Option<Ieeeg1Params>,
    /// Adds the terminal snubber resistance as a bus conductance.
    #[serde(default)]
    pub snubber: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GforSpec {
    pub name: String,
    pub bus: u32,
    #[serde(rename = "p_pu_sys")]
    pub p: f64,
    pub params: GforParams,
    #[serde(default)]
    pub pod_p: Option<PodParams>,
    #[serde(default)]
    pub pod_q: Option<PodParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub pf_tol: f64,
    pub pf_max_iter: usize,
    /// Bound on the device initialization and equilibrium residuals.
    pub init_tol: f64,
    /// Lower bound on each bus shunt susceptance (the network is dynamic, so
    /// every bus needs some capacitance).
    pub min_bus_b_pu_sys: f64,
    pub dt_s: f64,
    pub integrator: Integrator,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            pf_tol: 1e-8,
            pf_max_iter: 50,
            init_tol: 1e-8,
            min_bus_b_pu_sys: 0.0,
            dt_s: 50e-6,
            integrator: Integrator::Rk4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub base: PuBase,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub sg: Vec<SgSpec>,
    #[serde(default)]
    pub gfor: Vec<GforSpec>,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn bus_index(&self, id: u32) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBus(id))
    }

    pub fn device_names(&self) -> Vec<&str> {
        self.sg
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.gfor.iter().map(|g| g.name.as_str()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidSpec(m));
        if self.sg.is_empty() && self.gfor.is_empty() {
            return invalid("no dynamic devices: the slack bus needs a source".into());
        }
        let names = self.device_names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return invalid(format!("duplicate device name {n}"));
            }
        }
        for l in &self.loads {
            self.bus_index(l.bus)?;
        }
        for s in &self.sg {
            self.bus_index(s.bus)?;
            if !(s.rating_mva > 0.0) {
                return invalid(format!("{}: rating must be positive", s.name));
            }
        }
        for g in &self.gfor {
            self.bus_index(g.bus)?;
            g.params.validate()?;
            for pod in g.pod_p.iter().chain(g.pod_q.iter()) {
                pod.validate()?;
            }
        }
        for s in &self.sg {
            let kind = self.buses[self.bus_index(s.bus)?].kind;
            if kind != BusKind::Slack && s.p.abs() > s.rating_mva / self.base.s_mva * 1.0001 {
                return invalid(format!("{}: dispatch exceeds rating", s.name));
            }
        }
        for g in &self.gfor {
            if g.p.abs() > g.params.rating_mva / self.base.s_mva * 1.0001 {
                return invalid(format!("{}: dispatch exceeds rating", g.name));
            }
            let bus = &self.buses[self.bus_index(g.bus)?];
            let others = self.sg.iter().filter(|s| s.bus == g.bus).count()
                + self.gfor.iter().filter(|o| o.bus == g.bus).count()
                - 1;
            let loads = self.loads.iter().filter(|l| l.bus == g.bus).count();
            let charged = self
                .branches
                .iter()
                .any(|b| (b.from == g.bus || b.to == g.bus) && b.b != 0.0);
            if others > 0 || loads > 0 || bus.shunt_b != 0.0 || bus.shunt_g != 0.0 || charged {
                return invalid(format!(
                    "{}: bus {} must hold only the converter (no other device, load, shunt or line charging)",
                    g.name, g.bus
                ));
            }
        }
        for b in &self.buses {
            if b.kind != BusKind::PQ
                && !self.sg.iter().any(|s| s.bus == b.id)
                && !self.gfor.iter().any(|g| g.bus == b.id)
            {
                return invalid(format!("{:?} bus {} has no device", b.kind, b.id));
            }
        }
        for s in &self.sg {
            if self.buses[self.bus_index(s.bus)?].kind == BusKind::PQ {
                return invalid(format!("{} sits on PQ bus {}", s.name, s.bus));
            }
        }
        for g in &self.gfor {
            if self.buses[self.bus_index(g.bus)?].kind == BusKind::PQ {
                return invalid(format!("{} sits on PQ bus {}", g.name, g.bus));
            }
        }
        self.network()?.validate()
    }

    /// Shunt actually present at each bus: declared shunt (floored), converter
    /// filter capacitor and generator snubbers.
    pub fn effective_shunts(&self) -> Result<Vec<Shunt>> {
        let mut out: Vec<Shunt> = self
            .buses
            .iter()
            .map(|b| Shunt {
                g: b.shunt_g,
                b: b.shunt_b,
                r_series: 0.0,
            })
            .collect();
        for g in &self.gfor {
            let i = self.bus_index(g.bus)?;
            let ratio = g.params.rating_mva / self.base.s_mva;
            out[i] = Shunt {
                g: 0.0,
                b: g.params.b_c * ratio,
                r_series: g.params.r_cap() / ratio,
            };
        }
        for (i, b) in self.buses.iter().enumerate() {
            if !self.gfor.iter().any(|g| g.bus == b.id) {
                out[i].b = out[i].b.max(self.solver.min_bus_b_pu_sys);
            }
        }
        for s in self.sg.iter().filter(|s| s.snubber) {
            let i = self.bus_index(s.bus)?;
            out[i].g += s.rating_mva / self.base.s_mva / s.params.r_snb;
        }
        Ok(out)
    }

    /// Power-flow network: loads as constant power, devices as dispatch.
    pub fn network(&self) -> Result<Network> {
        let shunts = self.effective_shunts()?;
        let mut buses = Vec::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            let gen: f64 = self
                .sg
                .iter()
                .filter(|s| s.bus == b.id)
                .map(|s| s.p)
                .chain(self.gfor.iter().filter(|g| g.bus == b.id).map(|g| g.p))
                .sum();
            let (pl, ql) = self
                .loads
                .iter()
                .filter(|l| l.bus == b.id)
                .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q));
            buses.push(Bus {
                id: b.id,
                kind: b.kind,
                v_set: b.v_set,
                p_inj: gen - pl,
                q_inj: -ql,
                shunt: shunts[i],
            });
        }
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                r: b.r,
                x: b.x,
                b: b.b,
                tap: b.tap,
            })
            .collect();
        Ok(Network { buses, branches })
    }
}
