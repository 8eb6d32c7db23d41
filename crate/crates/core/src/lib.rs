//! Laminar-matroid secretary algorithm KickNext, with exact and Monte Carlo
//! tooling to check its analysis.

pub mod error;
pub mod experiments;
pub mod generators;
pub mod kicknext;
pub mod matroid;
pub mod model;
pub mod theory;

pub use error::{Error, Result};
pub use model::{Element, ElementId, FamilyNode, LaminarInstance, NodeId};
