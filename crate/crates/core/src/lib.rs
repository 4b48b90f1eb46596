//! Policy-evaluation laboratory for linear architectures.
//!
//! - [`chain`]: finite Markov reward processes and exact operators
//!   (Bellman maps, projection, MSBE/MSPBE, fixed points).
//! - [`agents`]: online evaluators sharing one stepper contract: TD(0), TD(λ),
//!   residual gradient, GTD2, coordinate descent and alternating coordinate
//!   descent.
//! - [`coop`]: the cooperative two-parameter update for differentiable
//!   approximators and its Q-factor control variant on a gridworld.
//! - [`harness`]: scenarios, seeded transition streams, experiment runs and
//!   their on-disk formats.

pub mod agents;
pub mod chain;
pub mod coop;
pub mod harness;
