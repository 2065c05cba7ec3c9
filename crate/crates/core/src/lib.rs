//! Comparator-adaptive online learning with movement cost, a strongly
//! adaptive learner for online convex optimization with memory, and an
//! adversarial tracking controller for linear time-varying systems built on
//! top of them.
//!
//! Layering, bottom-up:
//!
//! * [`betting`]: scalar coin-betting learner on `[0, r]` whose wealth pays
//!   for its own movement.
//! * [`ball`]: the same on a Euclidean ball via magnitude × direction.
//! * [`subroutine`]: accumulator-gated wrappers and GC-interval arithmetic.
//! * [`meta`]: the strongly adaptive combination across GC levels.
//! * [`control`]: reduction from tracking control to the meta-learner.
//! * [`sim`]: plants, reference signals and named experiment configurations.
//! * [`audit`] and [`harness`]: invariant checks, traces, regret oracles.

pub mod audit;
pub mod ball;
pub mod betting;
pub mod control;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod meta;
pub mod sim;
pub mod subroutine;

pub use error::{Error, Result};
pub use linalg::{Domain, Matrix, Vector};
