#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod bishop;
pub mod cone;
pub mod error;
pub mod geometry;
pub mod harmonics;
pub mod hull;
pub mod poly;
pub mod quadric_discs;
pub mod rank;
pub mod sampling;
pub mod wedge;

pub use error::{Error, Result};
