//! Complete robustness verification for message-passing neural networks
//! under budgeted edge perturbations.
//!
//! The verifier decides whether the margin `f_{c*}(X*, A) - f_c(X*, A)`
//! stays nonnegative for every adjacency matrix `A` in the perturbation set
//! around `A*`. It runs a branch-and-bound search over the edge variables
//! whose dual bounds come from interval propagation with topology-based
//! bounds tightening, and it can export the equivalent big-M mixed-integer
//! program in LP format for external solvers.

pub mod bench;
pub mod bnb;
pub mod bounds;
pub mod error;
pub mod graph;
pub mod io;
pub mod mip;
pub mod model;
pub mod perturbation;
pub mod synth;

pub use bnb::{verify, SearchConfig, Status, Verdict};
pub use bounds::{propagate, BoundsEngine, BoundsTable, Interval, Strategy};
pub use error::{Error, Result};
pub use graph::{Adjacency, GraphInstance, Target};
pub use model::{Activation, MpnnLayer, MpnnModel, Pooling};
pub use perturbation::{Fixings, PerturbationMode, PerturbationSpec};
