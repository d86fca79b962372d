use approx::assert_relative_eq;
use num_complex::Complex64;
use oscdamp::design::{design_for_system, Channel, Compensation, DesignSpec, ModelPlant, PodPlant};
use oscdamp::modal::{eigen_analysis, eigenvalues, linearize, LinearModel, LinearizeOptions, TargetSelector};
use oscdamp::modal::{follow_continuation, select_target};
use oscdamp::pod::PodParams;
use oscdamp::scenario::{
    analyze, build_two_area, run_sweep, split_generation_unit, without_gfor, SweepOptions,
    TwoAreaOptions,
};
use oscdamp::{assemble, SystemSpec};

fn system() -> SystemSpec {
    build_two_area(0.1, &TwoAreaOptions::default()).unwrap()
}

fn spectrum(spec: &SystemSpec) -> Vec<Complex64> {
    let m = assemble(spec).unwrap();
    let opts = LinearizeOptions {
        outputs: false,
        ..Default::default()
    };
    let mut e = eigenvalues(&linearize(&m, &opts).unwrap().a).unwrap();
    e.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    e
}

/// Same system expressed on a different power base.
fn rebased(spec: &SystemSpec, s_mva: f64) -> SystemSpec {
    let k = spec.base.s_mva / s_mva;
    let mut s = spec.clone();
    s.base.s_mva = s_mva;
    for b in &mut s.buses {
        b.shunt_b *= k;
        b.shunt_g *= k;
    }
    for br in &mut s.branches {
        br.r /= k;
        br.x /= k;
        br.b *= k;
    }
    for l in &mut s.loads {
        l.p *= k;
        l.q *= k;
    }
    for g in &mut s.sg {
        g.p *= k;
    }
    for g in &mut s.gfor {
        g.p *= k;
    }
    s
}

#[test]
fn spectrum_is_independent_of_the_power_base() {
    let a = spectrum(&system());
    let b = spectrum(&rebased(&system(), 250.0));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        if x.norm() > 1e-3 {
            assert!((x - y).norm() < 1e-5 * x.norm().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn spec_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("oscdamp-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("two_area.json");
    let s = system();
    s.save(&path).unwrap();
    assert_eq!(SystemSpec::load(&path).unwrap(), s);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn converter_adds_damping() {
    let sel = TargetSelector::default();
    let with = analyze(&system(), &sel, 1, 0.5).unwrap();
    let base = analyze(&without_gfor(&system()).unwrap(), &sel, 1, 0.5).unwrap();
    assert!(with.modes[with.target].zeta > base.modes[base.target].zeta + 0.05);
}

#[test]
fn frequency_falls_with_line_reactance() {
    let grid = [0.05, 0.2, 0.4];
    let systems: Vec<_> = grid
        .iter()
        .map(|&x| without_gfor(&build_two_area(x, &TwoAreaOptions::default()).unwrap()).unwrap())
        .collect();
    let r = run_sweep("branch:2-3:x", &grid, &systems, &SweepOptions::default()).unwrap();
    let f: Vec<f64> = r.points.iter().map(|p| p.target.unwrap().f_hz).collect();
    assert!(f[0] > f[1] && f[1] > f[2], "{f:?}");
}

#[test]
fn singleton_sweep_equals_a_modes_run() {
    let s = system();
    let r = run_sweep("branch:2-3:x", &[0.1], &[s.clone()], &SweepOptions::default()).unwrap();
    let a = analyze(&s, &TargetSelector::default(), 20, 0.5).unwrap();
    let t = r.points[0].target.unwrap();
    assert_eq!(t.lambda, a.modes[a.target].lambda);
    assert!(r.branch_events.is_empty());
}

#[test]
fn full_split_of_both_units_keeps_the_power_flow() {
    let s = without_gfor(&system()).unwrap();
    let split = split_generation_unit(&split_generation_unit(&s, 1, 0.25).unwrap(), 4, 0.25).unwrap();
    let before = assemble(&s).unwrap().power_flow;
    let after = assemble(&split).unwrap().power_flow;
    for id in [1, 2, 3, 4] {
        let i = before.index_of(id).unwrap();
        let j = after.index_of(id).unwrap();
        assert_relative_eq!(before.vm[i], after.vm[j], epsilon = 1e-9);
        assert_relative_eq!(before.va[i], after.va[j], epsilon = 1e-9);
    }
    assert_eq!(split.gfor.len(), 2);
}

#[test]
fn p_design_is_a_lag_at_the_minimum_gain() {
    let (_, r) = design_for_system(&system(), &DesignSpec::default()).unwrap();
    assert_eq!(r.compensation, Compensation::Lag);
    assert!(r.a > 1.0);
    assert!(r.t_s2 > r.t_s1);
    assert_eq!(r.k, 200.0);
    assert!(r.zeta_achieved > r.zeta0);
}

#[test]
fn q_design_needs_less_phase_than_p() {
    let (_, p) = design_for_system(&system(), &DesignSpec::default()).unwrap();
    let q_spec = DesignSpec {
        channel: Channel::Q,
        ..Default::default()
    };
    let (_, q) = design_for_system(&system(), &q_spec).unwrap();
    assert!(q.a.ln().abs() < p.a.ln().abs(), "a_Q = {}, a_P = {}", q.a, p.a);
    assert!(q.zeta_achieved > q.zeta0);
}

#[test]
#[ignore = "the Q channel needs lead compensation (a < 1) on this benchmark"]
fn q_design_is_a_lag() {
    let spec = DesignSpec {
        channel: Channel::Q,
        ..Default::default()
    };
    let (_, q) = design_for_system(&system(), &spec).unwrap();
    assert!(q.a > 1.0, "a = {}", q.a);
}

/// Damping of the continued target at `n` gains from 0 to the designed gain.
fn damping_along_gain(channel: Channel, n: usize) -> Vec<f64> {
    let spec = DesignSpec {
        channel,
        ..Default::default()
    };
    let (pod, _) = design_for_system(&system(), &spec).unwrap();
    let plant = ModelPlant::new(&system(), "GFOR2", channel, &pod).unwrap();
    let labels = plant.labels();
    let modes_at = |k: f64| {
        let mut lin = LinearModel::from_a(plant.state_matrix(&PodParams { k, ..pod.clone() })?);
        lin.state_labels = labels.clone();
        eigen_analysis(&lin)
    };
    let open = modes_at(0.0).unwrap();
    let mut mode = open[select_target(&open, &labels, &TargetSelector::default()).unwrap()].clone();
    let mut out = vec![mode.zeta];
    for i in 1..n {
        let (k0, k1) = (pod.k * (i - 1) as f64 / (n - 1) as f64, pod.k * i as f64 / (n - 1) as f64);
        mode = follow_continuation(&mode, 10, 0.5, |s| modes_at(k0 + s * (k1 - k0))).unwrap();
        out.push(mode.zeta);
    }
    out
}

#[test]
fn q_damping_grows_with_gain() {
    let z = damping_along_gain(Channel::Q, 5);
    assert!(z.windows(2).all(|w| w[1] >= w[0]), "{z:?}");
}

#[test]
#[ignore = "P-channel damping peaks well below the clamped K = 200 and falls off towards it"]
fn p_damping_grows_with_gain() {
    let z = damping_along_gain(Channel::P, 5);
    assert!(z.windows(2).all(|w| w[1] >= w[0]), "{z:?}");
}
