//! Spatio-temporal transformer thermal modelling: a finite-difference
//! oil-temperature oracle, a physics-informed neural network with fixed,
//! self-adaptive and residual-based attention loss weighting, the IEC
//! 60076-7 hotspot model, and insulation ageing fields.

pub mod ageing;
pub mod error;
pub mod experiments;
pub mod iec;
pub mod metrics;
pub mod nn;
pub mod pde;
pub mod pinn;
pub mod timeseries;

pub use error::{Error, Result};
