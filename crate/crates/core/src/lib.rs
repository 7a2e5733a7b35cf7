//! Directed polymers in random environment: exact transfer-matrix partition
//! functions, second-moment recursions, change-of-measure chaos statistics
//! and the estimators built on them.

pub mod chaos;
pub mod cli;
pub mod env;
pub mod error;
pub mod estimator;
pub mod lattice;
pub mod moments;
pub mod partition;
pub mod rng;
pub mod stats;
pub mod walk;

pub use env::{EnvironmentField, EnvironmentModel};
pub use error::{Error, Result};
pub use lattice::{LatticePoint, SiteBox};
pub use walk::WalkPath;
