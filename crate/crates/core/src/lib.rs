//! Multitask model search: a task-conditioned LSTM controller that samples
//! discrete model configurations, trained off-policy with a clipped
//! surrogate objective and per-task normalized advantages, plus transfer of
//! a pre-trained controller to new tasks.

// validation compares with `!(x > 0.0)` so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod controller;
pub mod evaluators;
pub mod harness;
pub mod numeric;
pub mod searchspace;
pub mod trainer;
pub mod transfer;

pub use controller::{ControllerConfig, ControllerError, ControllerParams, SampledModel, TaskRegistry};
pub use searchspace::{ChoiceValue, Configuration, ModelConfig, ParamSpec, SearchSpace, SpaceError};
