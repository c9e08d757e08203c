//! Identification of switching interaction topologies in open multi-agent
//! systems.
//!
//! The crate simulates a network whose agent set and edges change at known
//! switching instants, excites it with a sinusoidal probe, and recovers each
//! interaction mode's connectivity matrix from filtered Gramians:
//!
//! * [`simulator`] integrates the plant together with an observer, a low-pass
//!   filter and the Gramians `Y`, `Z` for which `Z = L Y` holds on every
//!   interval;
//! * [`estimation`] sums Gramians over intervals of one mode and solves for `L`;
//! * [`clustering`] groups intervals into modes without knowing the labels,
//!   using a dissimilarity that compares least-squares operators only on
//!   the directions each interval actually excited;
//! * [`pipeline`] chains clustering and estimation and handles file I/O.
//!
//! The guide in `book/` walks through each step with runnable listings.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod preset;
pub mod simulator;

pub use error::{Result, TopoError};
pub use model::{ModeId, ModeSpec, NodeId, Scenario, SwitchingSchedule, VertexSet};
pub use numerics::Matrix;
pub use simulator::{simulate_scenario, SegmentRecord};
