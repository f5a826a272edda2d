#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod gdpo;
pub mod harness;
pub mod imagecore;
pub mod numcore;
