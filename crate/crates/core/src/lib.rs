//! Knowledge-enhanced joint inference over a main classifier and
//! auxiliary rule sensors.
//!
//! The crate is organized around a small factor graph ([`graph`]) whose
//! weights are learned by maximum likelihood ([`train`]) or derived in
//! closed form from sensor reliability rates ([`theory`]). The same rates
//! drive a synthetic world ([`sim`]) used as a brute-force oracle for the
//! robustness bounds, and [`io`] carries everything across process
//! boundaries.

pub mod error;
pub mod graph;
pub mod io;
pub mod rng;
pub mod sim;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use graph::{AuxKind, AuxModel, Dist, Example, GraphSpec, ModelIndex, Weights};
pub use sim::WorldConfig;
pub use theory::{AuxRates, BoundReport, PerDist, RateProfile};
