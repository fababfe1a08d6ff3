//! Neumann heat flow, entropy, Fisher information, entropic optimal transport
//! and JKO minimizing movements on triangulated planar domains, together with
//! a harness that checks the quantitative estimates relating them.

pub mod curves;
pub mod error;
pub mod functionals;
pub mod heat;
pub mod jko;
pub mod mesh;
pub mod report;
pub mod transport;
pub mod verify;

pub use curves::{Curve, Provenance};
pub use error::{Error, Result};
pub use functionals::{Density, VectorField};
pub use heat::HeatOperator;
pub use mesh::{DomainSpec, TriMesh};
