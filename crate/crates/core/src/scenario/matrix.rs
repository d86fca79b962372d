use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{without_gfor, ParamPath};
use crate::error::{Error, Result};
use crate::modal::{
    eigen_analysis, follow_continuation, linearize, select_target, track_target,
    LinearizeOptions, Mode, TargetSelector,
};
use crate::model::{assemble, DynamicModel};
use crate::pod::PodParams;
use crate::spec::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Synchronous generation only.
    Base,
    SgGfor,
    PodP,
    PodQ,
    PodPq,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Self::Base, Self::SgGfor, Self::PodP, Self::PodQ, Self::PodPq];

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "Base",
            Self::SgGfor => "SG+GFOR",
            Self::PodP => "POD-P",
            Self::PodQ => "POD-Q",
            Self::PodPq => "POD-PQ",
        }
    }

    /// System for this scenario. POD scenarios differ from `SgGfor` only in
    /// the controller slots of `device`.
    pub fn system(self, m: &ScenarioMatrix) -> Result<SystemSpec> {
        let mut s = m.system.clone();
        for g in &mut s.gfor {
            g.pod_p = None;
            g.pod_q = None;
        }
        if self == Self::Base {
            return without_gfor(&s);
        }
        let g = s
            .gfor
            .iter_mut()
            .find(|g| g.name == m.device)
            .ok_or_else(|| Error::InvalidParameter(format!("no converter named {}", m.device)))?;
        if matches!(self, Self::PodP | Self::PodPq) {
            g.pod_p = Some(m.pod_p.clone());
        }
        if matches!(self, Self::PodQ | Self::PodPq) {
            g.pod_q = Some(m.pod_q.clone());
        }
        Ok(s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_steps() -> usize {
    20
}

fn default_mac() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    /// System with the converter in place; any POD in it is ignored.
    pub system: SystemSpec,
    pub device: String,
    pub pod_p: PodParams,
    pub pod_q: PodParams,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub selector: TargetSelector,
    #[serde(default = "default_steps")]
    pub continuation_steps: usize,
    #[serde(default = "default_mac")]
    pub min_mac: f64,
}

impl ScenarioMatrix {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn all_scenarios() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub lambda: Complex64,
    pub f_hz: f64,
    pub zeta: f64,
}

impl From<&Mode> for ModeSummary {
    fn from(m: &Mode) -> Self {
        Self {
            lambda: m.lambda,
            f_hz: m.f_hz,
            zeta: m.zeta,
        }
    }
}

/// Spectrum of one operating point together with the two views of the
/// electromechanical mode.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub labels: Vec<String>,
    pub modes: Vec<Mode>,
    /// Least-damped mode passing the selector.
    pub target: usize,
    /// Mode reached by following the target of the POD-free loop while all
    /// POD gains grow from zero to their set values.
    pub tracked: usize,
}

fn spectrum(model: &DynamicModel) -> Result<(Vec<String>, Vec<Mode>)> {
    let opts = LinearizeOptions {
        outputs: false,
        ..Default::default()
    };
    let lin = linearize(model, &opts)?;
    let modes = eigen_analysis(&lin)?;
    Ok((lin.state_labels, modes))
}

fn scale_pod_gains(model: &mut DynamicModel, base: &DynamicModel, s: f64) {
    for (g, g0) in model.gfors.iter_mut().zip(&base.gfors) {
        for (u, u0) in [(&mut g.pod_p, &g0.pod_p), (&mut g.pod_q, &g0.pod_q)] {
            if let (Some(u), Some(u0)) = (u.as_mut(), u0.as_ref()) {
                u.params.k = s * u0.params.k;
            }
        }
    }
}

pub fn analyze(
    system: &SystemSpec,
    selector: &TargetSelector,
    steps: usize,
    min_mac: f64,
) -> Result<Analysis> {
    let model = assemble(system)?;
    let (labels, modes) = spectrum(&model)?;
    let target = select_target(&modes, &labels, selector)?;
    let has_pod = model.gfors.iter().any(|g| g.pod_p.is_some() || g.pod_q.is_some());
    if !has_pod {
        return Ok(Analysis {
            labels,
            modes,
            target,
            tracked: target,
        });
    }
    let mut work = model.clone();
    scale_pod_gains(&mut work, &model, 0.0);
    let (_, open) = spectrum(&work)?;
    let start = open[select_target(&open, &labels, selector)?].clone();
    let end = follow_continuation(&start, steps, min_mac, |s| {
        scale_pod_gains(&mut work, &model, s);
        Ok(spectrum(&work)?.1)
    })?;
    let tracked = nearest(&modes, end.lambda);
    Ok(Analysis {
        labels,
        modes,
        target,
        tracked,
    })
}

fn nearest(modes: &[Mode], lambda: Complex64) -> usize {
    modes
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.lambda - lambda).norm().total_cmp(&(b.1.lambda - lambda).norm()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub target: Option<ModeSummary>,
    pub tracked: Option<ModeSummary>,
    pub error: Option<String>,
}

/// Runs the scenarios in parallel; rows keep the order of the matrix and a
/// failing scenario yields a row with its error.
pub fn run_scenarios(m: &ScenarioMatrix) -> Vec<ScenarioRow> {
    m.scenarios
        .par_iter()
        .map(|&sc| {
            let res = sc
                .system(m)
                .and_then(|s| analyze(&s, &m.selector, m.continuation_steps, m.min_mac));
            match res {
                Ok(a) => ScenarioRow {
                    scenario: sc,
                    target: Some((&a.modes[a.target]).into()),
                    tracked: Some((&a.modes[a.tracked]).into()),
                    error: None,
                },
                Err(e) => ScenarioRow {
                    scenario: sc,
                    target: None,
                    tracked: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn mode_fields(m: Option<&ModeSummary>) -> String {
    match m {
        Some(m) => format!(
            "{:.6},{:.6},{:.6},{:.4}",
            m.lambda.re,
            m.lambda.im,
            m.f_hz,
            100.0 * m.zeta
        ),
        None => ",,,".into(),
    }
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

pub fn scenario_rows_to_csv(rows: &[ScenarioRow]) -> String {
    let mut out = String::from(
        "scenario,target_re_1_s,target_im_rad_s,target_f_hz,target_damping_pct,\
         tracked_re_1_s,tracked_im_rad_s,tracked_f_hz,tracked_damping_pct,error\n",
    );
    for r in rows {
        out += &format!(
            "{},{},{},{}\n",
            r.scenario,
            mode_fields(r.target.as_ref()),
            mode_fields(r.tracked.as_ref()),
            r.error.as_deref().map(csv_text).unwrap_or_default()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: ParamPath,
    pub grid: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sweep grid has non-finite values".into()));
        }
        let up = self.grid.windows(2).all(|w| w[1] > w[0]);
        let down = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::InvalidParameter("sweep grid must be strictly monotone".into()));
        }
        Ok(())
    }

    /// `n` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(param: ParamPath, lo: f64, hi: f64, n: usize) -> Self {
        let grid = match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        };
        Self { param, grid }
    }

    /// Copies of `base` with the parameter set to each grid value.
    pub fn systems(&self, base: &SystemSpec) -> Result<Vec<SystemSpec>> {
        self.validate()?;
        self.grid
            .iter()
            .map(|&v| {
                let mut s = base.clone();
                self.param.set(&mut s, v)?;
                Ok(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub selector: TargetSelector,
    pub continuation_steps: usize,
    pub min_mac: f64,
    /// Modes above this frequency are left out of the report.
    pub max_f_hz: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            selector: TargetSelector::default(),
            continuation_steps: 20,
            min_mac: 0.5,
            max_f_hz: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMode {
    pub mode: ModeSummary,
    /// Trajectory id from mode tracking across the sweep.
    pub trajectory: Option<usize>,
    pub is_target: bool,
    pub is_tracked: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub modes: Vec<SweepMode>,
    pub target: Option<ModeSummary>,
    pub tracked: Option<ModeSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
    pub branch_events: Vec<SweepEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventMode {
    Target,
    Tracked,
}

/// The reported mode moved to another trajectory between `step - 1` and
/// `step` (global point indices).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEvent {
    pub mode: EventMode,
    pub step: usize,
    pub from: usize,
    pub to: usize,
}

/// Analyses `systems[i]` as the sweep point `values[i]`. Failures are kept
/// per point; tracking restarts after a failed point.
pub fn run_sweep(
    param: &str,
    values: &[f64],
    systems: &[SystemSpec],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if values.len() != systems.len() {
        return Err(Error::InvalidParameter(format!(
            "{} sweep values for {} systems",
            values.len(),
            systems.len()
        )));
    }
    let results: Vec<Result<Analysis>> = systems
        .par_iter()
        .map(|s| analyze(s, &opts.selector, opts.continuation_steps, opts.min_mac))
        .collect();

    let mut trajectory: Vec<Vec<Option<usize>>> = results
        .iter()
        .map(|r| r.as_ref().map(|a| vec![None; a.modes.len()]).unwrap_or_default())
        .collect();
    let mut branch_events = Vec::new();
    let mut next_id = 0;
    let mut i = 0;
    while i < results.len() {
        if results[i].is_err() {
            i += 1;
            continue;
        }
        let start = i;
        while i < results.len() && results[i].is_ok() {
            i += 1;
        }
        let seg: Vec<&Analysis> = results[start..i].iter().map(|r| r.as_ref().unwrap()).collect();
        let steps: Vec<Vec<Mode>> = seg.iter().map(|a| a.modes.clone()).collect();
        let trajs = crate::modal::track_modes(&steps, opts.min_mac);
        for (t, tr) in trajs.iter().enumerate() {
            for (s, k) in tr.index.iter().enumerate() {
                if let Some(k) = k {
                    trajectory[start + s][*k] = Some(next_id + t);
                }
            }
        }
        if let Ok(tt) = track_target(&steps, &seg[0].labels, &opts.selector, opts.min_mac) {
            branch_events.extend(tt.branch_events.into_iter().map(|e| SweepEvent {
                mode: EventMode::Target,
                step: e.step + start,
                from: e.from + next_id,
                to: e.to + next_id,
            }));
        }
        for s in 1..seg.len() {
            let from = trajectory[start + s - 1][seg[s - 1].tracked];
            let to = trajectory[start + s][seg[s].tracked];
            if let (Some(from), Some(to)) = (from, to) {
                if from != to {
                    branch_events.push(SweepEvent {
                        mode: EventMode::Tracked,
                        step: start + s,
                        from,
                        to,
                    });
                }
            }
        }
        next_id += trajs.len();
    }

    let points = values
        .iter()
        .zip(results)
        .zip(trajectory)
        .map(|((&value, res), traj)| match res {
            Ok(a) => SweepPoint {
                value,
                modes: a
                    .modes
                    .iter()
                    .enumerate()
                    .filter(|(k, m)| m.f_hz <= opts.max_f_hz || *k == a.target || *k == a.tracked)
                    .map(|(k, m)| SweepMode {
                        mode: m.into(),
                        trajectory: traj[k],
                        is_target: k == a.target,
                        is_tracked: k == a.tracked,
                    })
                    .collect(),
                target: Some((&a.modes[a.target]).into()),
                tracked: Some((&a.modes[a.tracked]).into()),
                error: None,
            },
            Err(e) => SweepPoint {
                value,
                modes: Vec::new(),
                target: None,
                tracked: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(SweepReport {
        param: param.to_string(),
        points,
        branch_events,
    })
}

/// One line per branch event.
pub fn sweep_events_to_csv(r: &SweepReport) -> String {
    let mut out = String::from("mode,step,value,from,to\n");
    for e in &r.branch_events {
        let mode = match e.mode {
            EventMode::Target => "target",
            EventMode::Tracked => "tracked",
        };
        out += &format!("{mode},{},{:.6},{},{}\n", e.step, r.points[e.step].value, e.from, e.to);
    }
    out
}

pub fn sweep_to_csv(r: &SweepReport) -> String {
    let mut out = String::from(
        "value,trajectory,re_1_s,im_rad_s,f_hz,damping_pct,is_target,is_tracked,error\n",
    );
    for p in &r.points {
        if let Some(e) = &p.error {
            out += &format!("{:.6},,,,,,,,{}\n", p.value, csv_text(e));
            continue;
        }
        for m in &p.modes {
            out += &format!(
                "{:.6},{},{},{},{},\n",
                p.value,
                m.trajectory.map(|t| t.to_string()).unwrap_or_default(),
                mode_fields(Some(&m.mode)),
                m.is_target as u8,
                m.is_tracked as u8
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_two_area, TwoAreaOptions};

    fn matrix() -> ScenarioMatrix {
        let system = build_two_area(0.1, &TwoAreaOptions::default()).unwrap();
        let pod = PodParams {
            k: 50.0,
            ..PodParams::non_compensated(0.0, 0.1, 5.0, 2, 0.2)
        };
        ScenarioMatrix {
            system,
            device: "GFOR2".into(),
            pod_p: pod.clone(),
            pod_q: pod,
            scenarios: Scenario::ALL.to_vec(),
            selector: TargetSelector::default(),
            continuation_steps: 10,
            min_mac: 0.5,
        }
    }

    #[test]
    fn pod_scenarios_share_the_operating_point() {
        let m = matrix();
        let reference = assemble(&Scenario::SgGfor.system(&m).unwrap()).unwrap();
        for sc in [Scenario::PodP, Scenario::PodQ, Scenario::PodPq] {
            let model = assemble(&sc.system(&m).unwrap()).unwrap();
            assert_eq!(model.power_flow.vm, reference.power_flow.vm, "{sc}");
            assert_eq!(model.power_flow.va, reference.power_flow.va, "{sc}");
        }
        let base = Scenario::Base.system(&m).unwrap();
        assert!(base.gfor.is_empty());
        assert!(m.system.gfor[0].pod_p.is_none());
    }

    #[test]
    fn failing_scenario_keeps_its_row() {
        let mut m = matrix();
        m.device = "nope".into();
        m.scenarios = vec![Scenario::Base, Scenario::PodP];
        let rows = run_scenarios(&m);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.as_deref().unwrap().contains("nope"));
        let csv = scenario_rows_to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("Base,"));
    }

    #[test]
    fn grid_validation() {
        let p: ParamPath = "branch:2-3:x".parse().unwrap();
        let ok = SweepSpec::linspace(p.clone(), 0.1, 0.3, 3);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.grid.len(), 3);
        for grid in [vec![], vec![0.1, 0.1], vec![0.1, 0.3, 0.2], vec![f64::NAN]] {
            let s = SweepSpec { param: p.clone(), grid };
            assert!(s.validate().is_err());
        }
        assert!(SweepSpec { param: p, grid: vec![0.3, 0.2] }.validate().is_ok());
    }

    #[test]
    fn sweep_records_failed_points() {
        let base = build_two_area(0.1, &TwoAreaOptions::default()).unwrap();
        let sweep = SweepSpec {
            param: "branch:2-3:x".parse().unwrap(),
            grid: vec![0.1, 0.11, 0.12],
        };
        let mut systems = sweep.systems(&base).unwrap();
        systems[1].loads[0].p = 1e3;
        let r = run_sweep("branch:2-3:x", &sweep.grid, &systems, &SweepOptions::default()).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.points[0].error.is_none());
        assert!(r.points[1].error.is_some());
        assert!(r.points[2].error.is_none());
        let csv = sweep_to_csv(&r);
        assert!(csv.lines().any(|l| l.starts_with("0.110000,,")));
        assert!(run_sweep("x", &[0.1], &[], &SweepOptions::default()).is_err());
    }
}
