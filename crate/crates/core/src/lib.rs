//! Numerical verification of the index theorem for regular exchange
//! economies: the indices `(-1)^n sign det [[Df, p], [p^T, 0]]` of the
//! equilibria sum to +1, and a homotopy to a reference field with a single
//! zero pairs them up.

pub mod calculus;
pub mod cli;
pub mod economy;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod homotopy;
pub mod linalg;
pub mod reference_field;
pub mod solver;
pub mod verifier;

pub use calculus::{g_value, index_of, index_via_images, EquilibriumRecord};
pub use economy::{build_ces_economy, ExcessDemandModel, ExchangeEconomySpec, SharedModel};
pub use error::{Error, Result};
pub use geometry::PricePoint;
pub use verifier::{run_theorem_check, TheoremConfig, TheoremReport, Verdict};
