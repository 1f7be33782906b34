// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod hqp;
pub mod model;
pub mod qp;
pub mod sim;
pub mod sweep;
pub mod tasks;
