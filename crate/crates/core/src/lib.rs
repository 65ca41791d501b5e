// `!(x > 0.0)` is deliberate throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod decomposition;
pub mod error;
pub mod exec;
pub mod fiber;
pub mod fields;
pub mod fit;
pub mod io;
pub mod material;
pub mod propagation;
pub mod quad;
pub mod render;
pub mod scan;
pub mod special;
pub mod tomography;

pub use error::{Error, Result};
