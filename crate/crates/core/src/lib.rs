//! Follow-Me Cloud analytical and simulation toolkit.
//!
//! - [`hexgrid`]: hexagonal cell lattice, symmetry classes and the user random walk.
//! - [`chain`]: Markov chains, exact lumping and steady-state metrics.
//! - [`cost`]: signaling, migration and service-disruption cost models.
//! - [`mdp`]: migration decision MDP, uniformisation and solvers.
//! - [`sim`]: discrete-event simulator shared by the control planes.
//! - [`lisp`]: LISP-based mobility control plane.
//! - [`sdn`]: OpenFlow-style control plane with address-rewriting tunnels.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cost;
pub mod hexgrid;
pub mod lisp;
pub mod mdp;
pub mod sdn;
pub mod sim;

pub use chain::{DelayModel, MarkovChain, StationaryDist};
pub use cost::{RttModel, TransferParams};
pub use hexgrid::{AggState, HexCell, WalkParams};
