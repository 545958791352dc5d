//! Differentially private federated representation learning in the linear
//! setting.
//!
//! A server keeps a shared `d x k` column-orthonormal representation `B`.
//! Each round a Poisson sample of clients fits private linear heads on top of
//! `B`, returns the representation gradient, and the server releases a
//! clipped, noised average and takes a QR-retracted step. A private power
//! method, boosted by cross-validation, supplies the starting point. A Rényi
//! DP accountant tracks the spend of both phases.

pub mod accountant;
pub mod client;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mechanisms;
pub mod metrics;
pub mod ppm;
pub mod quadrature;
pub mod server;
pub mod stream;
pub mod synthetic;

pub use error::{CentaurError, Result};
pub use metrics::OrthonormalBasis;
