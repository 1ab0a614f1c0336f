//! Numerical laboratory for discrete-time mean-field and McKean-Vlasov BSDEs
//! driven by finite-support martingales with jumps.

pub mod error;
pub mod chaos;
pub mod driver;
pub mod fvcalc;
pub mod generator;
pub mod scenario;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
