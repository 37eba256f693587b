//! Horizon-conditioned graph-convolution emulator for transient fields on
//! unstructured meshes.
//!
//! One shared-parameter network learns residual transitions `t → t + h` for
//! every lead time in a [`HorizonSet`]. Long windows are forecast with a
//! greedy descending-horizon rollout that uses the largest jumps first and
//! fills the remaining gaps with smaller ones.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod horizon;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod rollout;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use graph::{CsrMatrix, MeshGraph};
pub use horizon::HorizonSet;
pub use numeric::DenseMatrix;
