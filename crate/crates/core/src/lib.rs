//! Control variable genetic programming (CVGP) for symbolic regression.
//!
//! The engine discovers a multi-variable expression by querying a
//! controllable data oracle. It starts with every input held fixed but one,
//! fits a reduced-form expression with genetic programming, freezes what the
//! data confirms, then releases the next variable and extends the frozen
//! skeleton. Module map:
//!
//! - [`expr`]: expression trees, evaluation, freezing, canonical text.
//! - [`oracle`]: the data oracle answering control-variable trial queries.
//! - [`fitting`]: per-trial constant fitting, experiments, freezing rule.
//! - [`gp`]: mutation, mating, selection, hall of fame, the GP loop.
//! - [`cvgp`]: the stage-by-stage outer loop.
//! - [`bench`]: random benchmark ground truths.
//! - [`metrics`]: NMSE and friends, recovery checking, quantiles.
//! - [`combinatorics`]: exact expression-space counts and enumeration.

pub mod bench;
pub mod combinatorics;
pub mod config;
pub mod cvgp;
pub mod expr;
pub mod fitting;
pub mod gp;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod seed;

pub use expr::{ConstStatus, ConstantSlot, ExpressionTree, Node, Operator};
