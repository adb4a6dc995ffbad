//! Minimizing movements for the Canham-Helfrich energy of oriented varifolds.
//!
//! Surfaces are closed triangle meshes with constant multiplicities; the
//! transport side works with weighted atoms on position-normal space.

pub mod curvature;
pub mod energy;
pub mod error;
pub mod flow;
pub mod mesh;
pub mod params;
pub mod transport;
pub mod validation;
pub mod varifold;

pub use curvature::{CurvatureField, SecondForm};
pub use energy::{EnergyBreakdown, SphereAnalytics, SphereArgmin};
pub use error::{Error, Result};
pub use mesh::{MeshVarifold, Vec3};
pub use params::HelfrichParams;
pub use transport::{Solver, TransportConfig, TransportPlan};
pub use varifold::{Atom, Isometry, Measure, ParticleVarifold, QuadratureRule};
