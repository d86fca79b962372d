use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown bus {0}")]
    UnknownBus(u32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid system spec: {0}")]
    InvalidSpec(String),

    #[error("power flow did not converge after {iterations} iterations (last mismatch {last:.3e} pu)")]
    PowerFlowDiverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("initialization of {device} failed: {reason}")]
    Initialization { device: String, reason: String },

    #[error("equilibrium residual {residual:.3e} exceeds tolerance at state `{state}`")]
    Residual { state: String, residual: f64 },

    #[error("non-finite value in state `{state}` at t = {time:.6} s")]
    NonFinite { time: f64, state: String },

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("no mode qualifies as target: {0}")]
    NoTargetMode(String),

    #[error("target mode could not be tracked: {0}")]
    ModeLost(String),

    #[error("non-compensated phase {phi_nc_deg:.2} deg requires a pure differentiator (lead ratio a = 0); use a larger stage count")]
    DegenerateLead { phi_nc_deg: f64 },

    #[error("lag compensation of {phi_deg:.2} deg per stage is unbounded (a -> inf); use a larger stage count")]
    UnboundedLag { phi_deg: f64 },

    #[error("eigenvalue sensitivity magnitude {0:.3e} too small: mode is uncontrollable from this channel")]
    Uncontrollable(f64),

    #[error("sensitivity estimate did not settle after {halvings} halvings of the probe gain")]
    SensitivityNotConverged { halvings: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
