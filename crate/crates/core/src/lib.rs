//! Renormalized-action minimization for expansive motions of the Newtonian
//! N-body problem, with value-function, Hamilton-Jacobi and spectral
//! diagnostics.

pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod minimize;
pub mod model;
pub mod action;
pub mod central_config;
pub mod optimize;
pub mod potential;
pub mod reference;
pub mod spectral;
pub mod trajectory;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ClusterPartition, Configuration, MassSystem};
