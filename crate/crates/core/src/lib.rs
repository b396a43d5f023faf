//! Approximate and exact controllability toolkit for the viscous incompressible
//! flow on the three-dimensional torus driven by low-mode forcing.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod nnls;
pub mod saturation;
pub mod scenarios;
pub mod spectral;
pub mod subspace;
pub mod synthesis;

pub use control::{ControlSignal, Side};
pub use dynamics::{SolverConfig, Trajectory};
pub use error::{Error, Result};
pub use saturation::{ConeDecomposition, ConeGenerators, GeneratorPolicy};
pub use spectral::{FourierField, Truncation, Wavevector};
pub use subspace::ModeSubspace;
