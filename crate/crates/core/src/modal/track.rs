use num_complex::Complex64;
use serde::Serialize;

use super::eigen::{mac, select_target, Mode, TargetSelector};
use crate::error::{Error, Result};

/// One mode followed across the steps of a parameter sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    /// Mode index at each step, `None` where the branch was not present.
    pub index: Vec<Option<usize>>,
    pub lambda: Vec<Option<Complex64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchEvent {
    pub step: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetTrack {
    /// Selected mode index per step.
    pub mode: Vec<usize>,
    /// Trajectory holding the selected mode per step.
    pub trajectory: Vec<usize>,
    pub lambda: Vec<Complex64>,
    pub branch_events: Vec<BranchEvent>,
}

/// Mode of `modes` that continues `reference`: highest shape correlation,
/// ties broken by eigenvalue distance.
pub fn reidentify<'a>(modes: &'a [Mode], reference: &Mode, min_mac: f64) -> Result<&'a Mode> {
    let best = modes
        .iter()
        .map(|m| (m, mac(&reference.right, &m.right), (m.lambda - reference.lambda).norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.total_cmp(&a.2)))
        .ok_or_else(|| Error::ModeLost("no modes".into()))?;
    if best.1 < min_mac {
        return Err(Error::ModeLost(format!(
            "best shape correlation {:.3} below {min_mac}",
            best.1
        )));
    }
    Ok(best.0)
}

/// Follows `start` along a homotopy parameter `s` from 0 to 1 in `steps`
/// equal increments; `modes_at(s)` returns the spectrum at `s`.
pub fn follow_continuation(
    start: &Mode,
    steps: usize,
    min_mac: f64,
    mut modes_at: impl FnMut(f64) -> Result<Vec<Mode>>,
) -> Result<Mode> {
    let steps = steps.max(1);
    let mut current = start.clone();
    for i in 1..=steps {
        let modes = modes_at(i as f64 / steps as f64)?;
        current = reidentify(&modes, &current, min_mac)?.clone();
    }
    Ok(current)
}

/// Greedy mode-shape matching between consecutive steps. Pairs are taken by
/// descending MAC, ties broken by eigenvalue distance; pairs below
/// `min_mac` are not linked.
pub fn track_modes(steps: &[Vec<Mode>], min_mac: f64) -> Vec<Trajectory> {
    let n = steps.len();
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut last: Vec<usize> = Vec::new();
    for (s, modes) in steps.iter().enumerate() {
        let mut taken = vec![false; modes.len()];
        let mut linked = vec![false; trajs.len()];
        if s > 0 {
            let prev = &steps[s - 1];
            let mut pairs = Vec::new();
            for (t, traj) in trajs.iter().enumerate() {
                let Some(Some(pi)) = traj.index.get(s - 1) else { continue };
                let pm = &prev[*pi];
                for (k, m) in modes.iter().enumerate() {
                    let c = mac(&pm.right, &m.right);
                    if c >= min_mac {
                        pairs.push((t, k, c, (pm.lambda - m.lambda).norm()));
                    }
                }
            }
            pairs.sort_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then(a.3.total_cmp(&b.3))
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            for (t, k, _, _) in pairs {
                if linked[t] || taken[k] {
                    continue;
                }
                linked[t] = true;
                taken[k] = true;
                trajs[t].index[s] = Some(k);
                trajs[t].lambda[s] = Some(modes[k].lambda);
                last[t] = s;
            }
        }
        for (k, m) in modes.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let mut index = vec![None; n];
            let mut lambda = vec![None; n];
            index[s] = Some(k);
            lambda[s] = Some(m.lambda);
            trajs.push(Trajectory { index, lambda });
            last.push(s);
        }
    }
    trajs
}

/// Target mode at each step and the trajectory it belongs to. A change of
/// trajectory between consecutive steps is recorded as a branch event.
pub fn track_target(
    steps: &[Vec<Mode>],
    labels: &[String],
    sel: &TargetSelector,
    min_mac: f64,
) -> Result<TargetTrack> {
    let trajs = track_modes(steps, min_mac);
    let mut out = TargetTrack {
        mode: Vec::with_capacity(steps.len()),
        trajectory: Vec::with_capacity(steps.len()),
        lambda: Vec::with_capacity(steps.len()),
        branch_events: Vec::new(),
    };
    for (s, modes) in steps.iter().enumerate() {
        let k = select_target(modes, labels, sel)?;
        let t = trajs
            .iter()
            .position(|tr| tr.index[s] == Some(k))
            .ok_or_else(|| Error::ModeLost(format!("step {s}: mode {k} not on any trajectory")))?;
        if let Some(&prev) = out.trajectory.last() {
            if prev != t {
                out.branch_events.push(BranchEvent {
                    step: s,
                    from: prev,
                    to: t,
                });
            }
        }
        out.mode.push(k);
        out.trajectory.push(t);
        out.lambda.push(modes[k].lambda);
    }
    Ok(out)
}
