//! Bus power injections and their sparse polar Jacobians, computed two ways:
//!
//! * [`ybus`]: through the bus admittance matrix (sparse product, two-pass
//!   derivatives, in-place assembly through precomputed positions);
//! * [`elementwise`]: per-branch vectorized evaluation followed by a
//!   reduction onto buses and into a frozen sparsity pattern.
//!
//! [`oracle`] holds dense references for both, [`netcase`] reads MATPOWER
//! case files and [`sparse`] the CSC kernels everything sits on.

pub mod elementwise;
pub mod error;
pub mod netcase;
pub mod oracle;
pub mod sparse;
pub mod ybus;

pub use error::{Error, Result};
pub use netcase::{
    index_network, load_case, parse_matpower, replicate_case, IndexedNetwork, RawCase,
};
pub use sparse::{CscMatrix, SparsityPattern, TripletList};
