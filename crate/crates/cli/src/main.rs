use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oscdamp::design::{design_for_system, Channel, DampingGoal, DesignSpec};
use oscdamp::modal::{eigen_analysis, linearize, modes_to_csv, select_target, LinearizeOptions};
use oscdamp::net::solve_powerflow;
use oscdamp::scenario::{
    build_two_area, run_scenarios, run_sweep, scenario_rows_to_csv, split_generation_unit,
    sweep_events_to_csv, sweep_to_csv, two_area_sweep_systems, ParamPath, ScenarioMatrix,
    SweepOptions, SweepSpec, TwoAreaOptions,
};
use oscdamp::spec::Integrator;
use oscdamp::{assemble, simulate, Event, SimOptions, SystemSpec};

#[derive(Parser)]
#[command(name = "oscdamp", version, about = "Oscillation damping analysis for grid-forming converters")]
struct Cli {
    /// Directory for the output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Power flow; writes pf.csv.
    Pf { spec: PathBuf },
    /// Eigenvalues, damping and participation; writes modes.csv.
    Modes { spec: PathBuf },
    /// Time-domain simulation; writes timeseries.csv.
    Sim {
        spec: PathBuf,
        /// `load:bus=2,factor=1.01,t=1` or `ref:device=GFOR2,channel=P,delta=0.05,t=1`.
        #[arg(long = "event")]
        events: Vec<String>,
        #[arg(long, default_value_t = 50e-6)]
        dt: f64,
        #[arg(long = "T", default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 20)]
        record_every: usize,
        #[arg(long)]
        trapezoidal: bool,
    },
    /// Modal sweep of one parameter; writes sweep.csv and sweep_events.csv.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        param: String,
        /// `lo:hi:n` or a comma-separated list.
        #[arg(long)]
        grid: String,
        /// Rebuild the two-area benchmark at each line reactance, keeping the
        /// converter PODs of `spec`.
        #[arg(long)]
        two_area: bool,
        #[arg(long, default_value_t = 3.0)]
        max_f_hz: f64,
    },
    /// POD design for one converter channel; writes design.json.
    Design {
        spec: PathBuf,
        #[arg(long, default_value = "P")]
        channel: Channel,
        #[arg(long, default_value = "GFOR2")]
        device: String,
        #[arg(long, default_value_t = 0.10)]
        dzeta: f64,
        #[arg(long, default_value_t = 200.0)]
        kmin: f64,
        #[arg(long, default_value_t = 400.0)]
        kmax: f64,
        #[arg(long, default_value_t = 2)]
        ns: usize,
        #[arg(long, default_value_t = 0.1)]
        tf: f64,
        #[arg(long, default_value_t = 5.0)]
        tw: f64,
        #[arg(long, default_value_t = 0.2)]
        limit: f64,
        /// Also write the spec with the designed POD installed.
        #[arg(long)]
        apply: Option<PathBuf>,
    },
    /// Scenario comparison matrix; writes compare.csv.
    Compare { matrix: PathBuf },
    /// Writes the two-area benchmark spec.
    BuildTwoArea {
        #[arg(long, default_value_t = 0.1)]
        xl: f64,
        #[arg(long, default_value_t = 4.0)]
        h: f64,
        #[arg(long)]
        no_gfor: bool,
        #[arg(long, default_value = "two_area.json")]
        output: PathBuf,
    },
    /// Splits the generator at a bus into SG and converter shares.
    Split {
        spec: PathBuf,
        #[arg(long)]
        bus: u32,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value = "split.json")]
        output: PathBuf,
    },
}

type Res<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn write(dir: &Path, name: &Path, text: &str) -> Res<()> {
    fs::create_dir_all(dir).map_err(err)?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_grid(s: &str) -> Res<Vec<f64>> {
    let bad = || format!("cannot parse grid `{s}`");
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        if n < 2 {
            return Ok(vec![lo]);
        }
        return Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

/// `Ok(false)` means outputs were written but some part failed.
fn run(cli: Cli) -> Res<bool> {
    let out = &cli.out;
    match cli.cmd {
        Cmd::Pf { spec } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            s.validate().map_err(err)?;
            let pf = solve_powerflow(&s.network().map_err(err)?, s.solver.pf_tol, s.solver.pf_max_iter)
                .map_err(err)?;
            println!("converged in {} iterations, mismatch {:.3e}", pf.iterations, pf.max_mismatch);
            write(out, Path::new("pf.csv"), &pf.to_csv())?;
        }
        Cmd::Modes { spec } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            let model = assemble(&s).map_err(err)?;
            let opts = LinearizeOptions {
                outputs: false,
                ..Default::default()
            };
            let lin = linearize(&model, &opts).map_err(err)?;
            let modes = eigen_analysis(&lin).map_err(err)?;
            match select_target(&modes, &lin.state_labels, &Default::default()) {
                Ok(k) => println!(
                    "target mode {k}: {:.4} Hz, damping {:.2} %",
                    modes[k].f_hz,
                    100.0 * modes[k].zeta
                ),
                Err(e) => println!("{e}"),
            }
            write(out, Path::new("modes.csv"), &modes_to_csv(&modes, &lin.state_labels))?;
        }
        Cmd::Sim {
            spec,
            events,
            dt,
            t_end,
            record_every,
            trapezoidal,
        } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            let model = assemble(&s).map_err(err)?;
            let events: Vec<Event> = events.iter().map(|e| Event::parse(e)).collect::<Result<_, _>>().map_err(err)?;
            let opts = SimOptions {
                dt,
                t_end,
                integrator: if trapezoidal { Integrator::Trapezoidal } else { Integrator::Rk4 },
                record_every,
            };
            let ts = simulate(&model, &events, &opts).map_err(err)?;
            write(out, Path::new("timeseries.csv"), &ts.to_csv())?;
        }
        Cmd::Sweep {
            spec,
            param,
            grid,
            two_area,
            max_f_hz,
        } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            let path: ParamPath = param.parse().map_err(err)?;
            let sweep = SweepSpec {
                param: path,
                grid: parse_grid(&grid)?,
            };
            sweep.validate().map_err(err)?;
            let systems = if two_area {
                two_area_sweep_systems(&sweep.grid, &TwoAreaOptions::default(), &s).map_err(err)?
            } else {
                sweep.systems(&s).map_err(err)?
            };
            let opts = SweepOptions {
                max_f_hz,
                ..Default::default()
            };
            let report = run_sweep(&param, &sweep.grid, &systems, &opts).map_err(err)?;
            write(out, Path::new("sweep.csv"), &sweep_to_csv(&report))?;
            write(out, Path::new("sweep_events.csv"), &sweep_events_to_csv(&report))?;
            let failed = report.points.iter().filter(|p| p.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} of {} sweep points failed", report.points.len());
                return Ok(false);
            }
        }
        Cmd::Design {
            spec,
            channel,
            device,
            dzeta,
            kmin,
            kmax,
            ns,
            tf,
            tw,
            limit,
            apply,
        } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            let ds = DesignSpec {
                device: device.clone(),
                channel,
                goal: DampingGoal::Increment(dzeta),
                k_min: kmin,
                k_max: kmax,
                n_s: ns,
                t_f: tf,
                t_w: tw,
                limit,
                ..Default::default()
            };
            let (pod, report) = design_for_system(&s, &ds).map_err(err)?;
            println!(
                "{:?}: f0 {:.4} Hz, damping {:.2} % -> {:.2} %, K = {:.3}, T_S1 = {:.4} s, T_S2 = {:.4} s",
                report.compensation,
                report.f0_hz,
                100.0 * report.zeta0,
                100.0 * report.zeta_achieved,
                report.k,
                report.t_s1,
                report.t_s2
            );
            write(out, Path::new("design.json"), &(report.to_json().map_err(err)? + "\n"))?;
            if let Some(apply) = apply {
                let mut s = s;
                let g = s.gfor.iter_mut().find(|g| g.name == device).ok_or("device vanished")?;
                match channel {
                    Channel::P => g.pod_p = Some(pod),
                    Channel::Q => g.pod_q = Some(pod),
                }
                write(out, &apply, &(s.to_json().map_err(err)? + "\n"))?;
            }
        }
        Cmd::Compare { matrix } => {
            let m = ScenarioMatrix::load(&matrix).map_err(err)?;
            let rows = run_scenarios(&m);
            for r in &rows {
                match (&r.tracked, &r.error) {
                    (Some(t), _) => println!(
                        "{:<8} {:.4} Hz  {:6.2} %",
                        r.scenario.name(),
                        t.f_hz,
                        100.0 * t.zeta
                    ),
                    (None, Some(e)) => println!("{:<8} failed: {e}", r.scenario.name()),
                    _ => {}
                }
            }
            write(out, Path::new("compare.csv"), &scenario_rows_to_csv(&rows))?;
            if rows.iter().any(|r| r.error.is_some()) {
                return Ok(false);
            }
        }
        Cmd::BuildTwoArea {
            xl,
            h,
            no_gfor,
            output,
        } => {
            let opts = TwoAreaOptions {
                h,
                with_gfor: !no_gfor,
                ..Default::default()
            };
            let s = build_two_area(xl, &opts).map_err(err)?;
            write(out, &output, &(s.to_json().map_err(err)? + "\n"))?;
        }
        Cmd::Split {
            spec,
            bus,
            alpha,
            output,
        } => {
            let s = SystemSpec::load(&spec).map_err(err)?;
            let split = split_generation_unit(&s, bus, alpha).map_err(err)?;
            write(out, &output, &(split.to_json().map_err(err)? + "\n"))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
