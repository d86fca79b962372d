//! Small-signal analysis, EMT-type time-domain simulation and eigenvalue
//! sensitivity design of power oscillation damping (POD) controllers for
//! droop-based grid-forming converters.

pub mod design;
pub mod error;
pub mod gfor;
pub mod modal;
pub mod model;
pub mod net;
pub mod pod;
pub mod scenario;
pub mod sg;
pub mod spec;

pub use error::{Error, Result};
pub use model::{assemble, simulate, DynamicModel, Event, ModelInput, SimOptions, TimeSeries};
pub use spec::SystemSpec;
