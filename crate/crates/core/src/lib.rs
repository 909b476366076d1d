//! Generalized bathtub model of city-scale traffic and a projected-gradient
//! solver for the social-optimum departure-time pattern.

pub mod cost;
pub mod dynamics;
pub mod error;
pub mod gradient;
pub mod io;
pub mod model;
pub mod optimizer;
mod overlap;
pub mod particles;
pub mod projection;
pub mod scenario;

pub use error::{Error, Result};
