//! Quasi-static time-series simulation of a radial distribution feeder with
//! PV smart inverters.
//!
//! The library models a balanced positive-sequence feeder in per-unit, solves
//! steady-state power flow with a backward/forward sweep, and closes the loop
//! with five inverter reactive-power control methods: no control, a fixed
//! Volt-Var curve, and three adaptive (gradient-based) controllers that differ
//! in how agent estimates are mixed over the communication topology (no
//! communication, fixed weights, dynamic headroom-based weights).
//!
//! Core math is generic over the scalar type; `f64` aliases are exported at
//! the crate root and are what the CLI uses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod cli;
pub mod coordination;
pub mod feeder_model;
pub mod inverter_agent;
pub mod power_flow;
pub mod scenario;
pub mod simulation;

/// Scalar type the numerical core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Display + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Display + Debug + Send + Sync + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
pub(crate) fn num<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

pub type FeederModel64 = feeder_model::FeederModel<f64>;
pub type FeederModel32 = feeder_model::FeederModel<f32>;
pub type NormalizedFeeder64 = feeder_model::NormalizedFeeder<f64>;
pub type VoltageSolution64 = power_flow::VoltageSolution<f64>;
pub type InverterAgent64 = inverter_agent::InverterAgent<f64>;
pub type VoltVarParams64 = inverter_agent::VoltVarParams<f64>;
pub type ScenarioResults64 = simulation::ScenarioResults<f64>;
