//! Variational Monte Carlo for pure Z_N lattice gauge theory in two
//! spatial dimensions, using gauged Gaussian fermionic PEPS as the
//! variational family.

pub mod ansatz;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod fock;
pub mod galg;
pub mod gstate;
pub mod lattice;
pub mod optimize;
pub mod sampler;

pub use error::Error;
