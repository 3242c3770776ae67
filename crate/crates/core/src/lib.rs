#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environments;
pub mod harness;
pub mod nn_dynamics;
pub mod smppi;
pub mod tvlqr;
pub mod types;
