//! Numerical learning machinery shared by the MARL agents.

pub mod dense;
pub mod optim;
pub mod replay;
pub mod schedule;

pub use dense::{soft_update, Activation, DenseNet, NetSnapshot, Trace};
pub use optim::{Adam, Optimizer, OptimizerKind};
pub use replay::{Action, ReplayBuffer, Transition};
pub use schedule::{ExplorationSchedule, ScheduleKind};
