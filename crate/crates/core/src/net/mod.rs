//! Per-unit network representation: buses, branches, nodal admittance,
//! Newton power flow and the conversion of loads into constant impedances.

mod admittance;
mod powerflow;

pub use admittance::build_admittance;
pub use powerflow::{load_to_impedance, solve_powerflow, PowerFlowSolution};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-unit base shared by the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuBase {
    pub s_mva: f64,
    pub v_kv: f64,
    pub f_hz: f64,
}

impl Default for PuBase {
    fn default() -> Self {
        Self {
            s_mva: 100.0,
            v_kv: 230.0,
            f_hz: 50.0,
        }
    }
}

impl PuBase {
    /// Electrical base angular frequency in rad/s.
    pub fn omega_b(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_hz
    }

    /// Device-base impedance to system base (same voltage base).
    pub fn z_to_sys(&self, z_dev: f64, s_dev_mva: f64) -> f64 {
        z_dev * self.s_mva / s_dev_mva
    }

    pub fn z_to_dev(&self, z_sys: f64, s_dev_mva: f64) -> f64 {
        z_sys * s_dev_mva / self.s_mva
    }

    /// Device-base power (or current) to system base.
    pub fn s_to_sys(&self, s_dev: f64, s_dev_mva: f64) -> f64 {
        s_dev * s_dev_mva / self.s_mva
    }

    pub fn s_to_dev(&self, s_sys: f64, s_dev_mva: f64) -> f64 {
        s_sys * self.s_mva / s_dev_mva
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

/// Shunt element at a bus: conductance `g` in parallel with a capacitor of
/// susceptance `b` that may carry a series damping resistance `r_series`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub g: f64,
    pub b: f64,
    pub r_series: f64,
}

impl Shunt {
    pub fn admittance(&self) -> Complex64 {
        let cap = if self.b == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            let z = Complex64::new(self.r_series, -1.0 / self.b);
            z.inv()
        };
        Complex64::new(self.g, 0.0) + cap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude set-point for slack and PV buses.
    pub v_set: f64,
    /// Net specified injection (generation minus load), system pu.
    pub p_inj: f64,
    pub q_inj: f64,
    pub shunt: Shunt,
}

impl Bus {
    pub fn pq(id: u32, p_inj: f64, q_inj: f64) -> Self {
        Self {
            id,
            kind: BusKind::PQ,
            v_set: 1.0,
            p_inj,
            q_inj,
            shunt: Shunt::default(),
        }
    }

    pub fn pv(id: u32, p_inj: f64, v_set: f64) -> Self {
        Self {
            id,
            kind: BusKind::PV,
            v_set,
            p_inj,
            q_inj: 0.0,
            shunt: Shunt::default(),
        }
    }

    pub fn slack(id: u32, v_set: f64) -> Self {
        Self {
            id,
            kind: BusKind::Slack,
            v_set,
            p_inj: 0.0,
            q_inj: 0.0,
            shunt: Shunt::default(),
        }
    }
}

/// Series branch with a pi-model charging susceptance and an off-nominal
/// tap on the `from` side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
}

impl Branch {
    pub fn new(from: u32, to: u32, r: f64, x: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            b: 0.0,
            tap: 1.0,
        }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl Network {
    pub fn index_of(&self, id: u32) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBus(id))
    }

    /// Checks referential integrity, branch data and the slack rule.
    pub fn validate(&self) -> Result<()> {
        for (i, bus) in self.buses.iter().enumerate() {
            if self.buses[..i].iter().any(|b| b.id == bus.id) {
                return Err(Error::InvalidSpec(format!("duplicate bus id {}", bus.id)));
            }
            if bus.kind != BusKind::PQ && bus.v_set <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "bus {} voltage set-point must be positive",
                    bus.id
                )));
            }
        }
        for br in &self.branches {
            self.index_of(br.from)?;
            self.index_of(br.to)?;
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "branch {}-{} has zero impedance",
                    br.from, br.to
                )));
            }
            if br.tap <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "branch {}-{} tap must be positive",
                    br.from, br.to
                )));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::InvalidSpec(format!(
                "exactly one slack bus required, found {slacks}"
            )));
        }
        Ok(())
    }

    /// Complex power flowing from `from` into the branch at its sending end.
    pub fn branch_flow(&self, branch: &Branch, v: &[Complex64]) -> Result<Complex64> {
        let f = self.index_of(branch.from)?;
        let t = self.index_of(branch.to)?;
        let y = branch.series_admittance();
        let ysh = Complex64::new(0.0, branch.b / 2.0);
        let tap = branch.tap;
        let i_from = (y + ysh) / (tap * tap) * v[f] - y / tap * v[t];
        Ok(v[f] * i_from.conj())
    }
}
