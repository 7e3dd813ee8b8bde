//! Space-time horizontal ray method for pulses in shallow-water waveguides.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod error;
pub mod export;
pub mod fronts;
pub mod interp;
pub mod linalg;
pub mod modes;
pub mod ode;
pub mod quad;
pub mod raytrace;
pub mod roots;
pub mod scalar;
pub mod source;
pub mod variational;

pub use error::{Error, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `f64` instantiations of the main model types.
pub type Waveguide64 = environment::Waveguide<f64>;
pub type DispersionPoint64 = modes::DispersionPoint<f64>;
pub type DispersionSurface64 = modes::DispersionSurface<f64>;
pub type AnalyticDispersion64 = modes::AnalyticDispersion<f64>;
pub type RayState64 = raytrace::RayState<f64>;
pub type RayPath64 = raytrace::RayPath<f64>;
pub type VariationalPath64 = variational::VariationalPath<f64>;
pub type SourceSurface64 = source::SourceSurface<f64>;
pub type EigenrayResult64 = fronts::EigenrayResult<f64>;
pub type Tolerances64 = ode::Tolerances<f64>;
