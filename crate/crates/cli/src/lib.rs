//! Scenario runner for the traction experiments: configuration, the
//! built-in scenario library and the staged report pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod run;
pub mod scenario;

pub use run::{execute, Outcome, Stage};
pub use scenario::{Scenario, BUILTINS};
