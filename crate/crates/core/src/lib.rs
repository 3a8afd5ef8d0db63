//! Weak adversarial networks: mesh-free weak solutions of high-dimensional
//! elliptic and parabolic PDEs by min-max training of a solution network
//! against a test-function network.

pub mod checks;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod field;
pub mod geometry;
pub mod library;
pub mod network;
pub mod objective;
pub mod optim;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod rng;
pub mod trainer;

pub use error::{Result, WanError};
pub use network::{default_phi_spec, default_u_spec, init_params, Activation, MlpSpec, ParamVector};
