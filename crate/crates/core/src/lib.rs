//! Simulation and analysis of γ-ray echoes from nuclear frequency combs.
//!
//! The physics is generic over the float type; the aliases below fix it to
//! `f64` (and [`f32`](crate::single) for the reduced-precision variants).

pub mod analytic;
pub mod cli;
pub mod comb;
pub mod config;
pub mod error;
pub mod fsio;
pub mod metrics;
pub mod scalar;
pub mod scan;
pub mod solver;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PhysConstants = comb::PhysConstants<f64>;
pub type MotionProfile = comb::MotionProfile<f64>;
pub type TargetSpec = comb::TargetSpec<f64>;
pub type CombSystem = comb::CombSystem<f64>;
pub type PulseSpec = comb::PulseSpec<f64>;
pub type FieldTrace = trace::FieldTrace<f64>;
pub type SeriesConfig = analytic::SeriesConfig<f64>;
pub type Grid = solver::Grid<f64>;
pub type EchoWindow = metrics::EchoWindow<f64>;
pub type EchoReport = metrics::EchoReport<f64>;
pub type MetricOptions = metrics::MetricOptions<f64>;

/// `f32` aliases.
pub mod single {
    pub type PhysConstants = crate::comb::PhysConstants<f32>;
    pub type TargetSpec = crate::comb::TargetSpec<f32>;
    pub type CombSystem = crate::comb::CombSystem<f32>;
    pub type PulseSpec = crate::comb::PulseSpec<f32>;
    pub type FieldTrace = crate::trace::FieldTrace<f32>;
    pub type Grid = crate::solver::Grid<f32>;
    pub type EchoReport = crate::metrics::EchoReport<f32>;
}
