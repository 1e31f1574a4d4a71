// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ag;
pub mod embedstore;
pub mod eval;
pub mod format;
pub mod geometry;
pub mod model;
pub mod synth;
pub mod training;
