//! Distributed real-time vehicle control for emergency-vehicle (EMV) transit
//! on a discrete cellular road.
//!
//! Every ordinary vehicle (OV) runs the same local loop each tick:
//!
//! 1. judge whether a neighbour's predicted motion threatens it
//!    ([`influence`]),
//! 2. if so, pick the successor state minimising a weighted strategy
//!    function ([`strategy`]),
//! 3. exchange candidate next states and settle conflicting candidates inside
//!    a coalition resolved in priority order ([`coalition`]).
//!
//! [`engine`] drives the loop for a whole road segment and accumulates the
//! global impact objective. [`baseline`] is a non-cooperative car-following
//! comparator, [`oracle`] an exhaustive centralized optimum for tiny
//! instances, and [`io`] holds file formats, the scenario generator and the
//! space-time plot.

pub mod baseline;
pub mod coalition;
pub mod domain;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod influence;
pub mod io;
pub mod oracle;
pub mod prediction;
pub mod rng;
pub mod safety;
pub mod strategy;

pub use domain::{
    GridSpec, Rational, Scenario, ScenarioConfig, VehicleClass, VehicleId, VehicleState,
};
pub use engine::{run, Controller, RunOutput, RunMetrics};
pub use error::{Error, Result};
