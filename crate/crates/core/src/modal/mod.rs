//! Numerical linearization around the equilibrium and modal analysis.

mod eigen;
mod track;

pub use eigen::{
    balance, damping_ratio, eigen_analysis, eigenvalues, frequency_hz, mac, modes_to_csv,
    participation_factors, select_target, Mode, TargetSelector,
};
pub use track::{
    follow_continuation, reidentify, track_modes, track_target, BranchEvent, TargetTrack,
    Trajectory,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DynamicModel, ModelInput, TimeSeries};

/// `x' = A x + B u`, `y = C x + D u` around the stored equilibrium.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    /// Outputs at the equilibrium.
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearizeOptions {
    /// Perturbation is `rel * max(|x_j|, scale_floor)`.
    pub rel: f64,
    pub scale_floor: f64,
    /// Input channels; `None` takes the model defaults.
    pub inputs: Option<Vec<ModelInput>>,
    /// Skip `C` and `D` when only the spectrum is needed.
    pub outputs: bool,
    pub residual_tol: f64,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        Self {
            rel: 1e-6,
            scale_floor: 1.0,
            inputs: None,
            outputs: true,
            residual_tol: 1e-8,
        }
    }
}

pub fn linearize(model: &DynamicModel, opts: &LinearizeOptions) -> Result<LinearModel> {
    let x0 = &model.x0;
    let (r, state) = model.residual(x0);
    if !(r < opts.residual_tol) {
        return Err(Error::Residual {
            state: state.to_string(),
            residual: r,
        });
    }
    let n = x0.len();
    let a = model.jacobian(x0, opts.rel, opts.scale_floor);
    let inputs = opts.inputs.clone().unwrap_or_else(|| model.default_inputs());
    let ny = if opts.outputs {
        model.channel_names().len()
    } else {
        0
    };
    let mut b = DMatrix::zeros(n, inputs.len());
    let mut d = DMatrix::zeros(ny, inputs.len());
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for (j, input) in inputs.iter().enumerate() {
        let u0 = model.input(input)?;
        let h = opts.rel * u0.abs().max(opts.scale_floor);
        let mut mp = model.clone();
        mp.set_input(input, u0 + h)?;
        let mut mm = model.clone();
        mm.set_input(input, u0 - h)?;
        mp.derivatives(x0, &mut fp);
        mm.derivatives(x0, &mut fm);
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        if opts.outputs {
            let (yp, ym) = (mp.outputs(x0), mm.outputs(x0));
            for i in 0..ny {
                d[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
            }
        }
    }
    let mut c = DMatrix::zeros(ny, n);
    let y0 = if opts.outputs {
        let mut xp = x0.clone();
        for j in 0..n {
            let h = opts.rel * x0[j].abs().max(opts.scale_floor);
            xp[j] = x0[j] + h;
            let yp = model.outputs(&xp);
            xp[j] = x0[j] - h;
            let ym = model.outputs(&xp);
            xp[j] = x0[j];
            for i in 0..ny {
                c[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
            }
        }
        model.outputs(x0)
    } else {
        Vec::new()
    };
    Ok(LinearModel {
        a,
        b,
        c,
        d,
        state_labels: model.labels().to_vec(),
        input_labels: inputs.iter().map(|i| i.label()).collect(),
        output_labels: if opts.outputs {
            model.channel_names().to_vec()
        } else {
            Vec::new()
        },
        y0,
    })
}

impl LinearModel {
    /// State matrix only, e.g. for synthetic systems.
    pub fn from_a(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            state_labels: (0..n).map(|i| format!("x{i}")).collect(),
            b: DMatrix::zeros(n, 0),
            c: DMatrix::zeros(0, n),
            d: DMatrix::zeros(0, 0),
            a,
            input_labels: Vec::new(),
            output_labels: Vec::new(),
            y0: Vec::new(),
        }
    }

    /// Exact zero-order-hold discretization over `h`.
    pub fn discretize(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * h));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * h));
        let e = aug.exp();
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, m)).into_owned(),
        )
    }

    /// Output trajectories (absolute, deviation added to `y0`) for a step of
    /// `amplitude` on input `input` applied at `t_step`.
    pub fn step_response(
        &self,
        input: usize,
        amplitude: f64,
        t_step: f64,
        h: f64,
        t_end: f64,
    ) -> Result<TimeSeries> {
        if input >= self.b.ncols() || self.c.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "step response needs a valid input and output matrices".into(),
            ));
        }
        let (phi, gamma) = self.discretize(h);
        let n = self.a.nrows();
        let ny = self.c.nrows();
        let steps = (t_end / h).round() as usize;
        let k_step = (t_step / h).round() as usize;
        let mut x = DVector::zeros(n);
        let g = gamma.column(input).into_owned();
        let dcol = self.d.column(input).into_owned();
        let mut ts = TimeSeries {
            time: Vec::with_capacity(steps + 1),
            names: self.output_labels.clone(),
            data: vec![Vec::with_capacity(steps + 1); ny],
        };
        for k in 0..=steps {
            let u = if k >= k_step { amplitude } else { 0.0 };
            let y = &self.c * &x + &dcol * u;
            ts.time.push(k as f64 * h);
            for i in 0..ny {
                ts.data[i].push(self.y0[i] + y[i]);
            }
            x = &phi * &x + &g * u;
        }
        Ok(ts)
    }
}
