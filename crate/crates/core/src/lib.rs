//! Certified DER dispatch on radial distribution feeders.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod error;
pub mod exec;
pub mod inner;
pub mod lp;
pub mod network;
pub mod projection;
pub mod robust;
pub mod surrogate;

pub use error::{Error, Result};
pub use exec::Execution;
