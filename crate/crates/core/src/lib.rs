//! Online resource allocation in episodic finite-horizon MDPs with an
//! unknown kernel: optimistic occupancy-measure LPs over Bernstein
//! confidence boxes, a mirror-descent budget price, and a hard budget stop.

pub mod allocator;
pub mod confidence;
pub mod dual;
pub mod error;
pub mod harness;
pub mod lp;
pub mod mdp;
mod nested;

pub use allocator::{
    regret_terms, run, run_with, DualConfig, EpisodeRecord, Planning, RegretTerms, RunConfig, RunRecord, StopPoint,
};
pub use confidence::{ConfidenceSet, LogArgument, RadiusParams, VisitCounters};
pub use dual::{DualState, ReferenceFunction};
pub use error::{Error, Result};
pub use mdp::{EpisodeFunctions, ExtendedOccupancy, MdpShape, OccupancyMeasure, Policy, Trajectory, TransitionKernel};
