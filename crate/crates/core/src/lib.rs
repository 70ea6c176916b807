//! Vertical stochastic calculus on submersions.
//!
//! Semimartingales on the total space `E` of a submersion `π: E → M` are
//! simulated in an adapted chart `(x, v)` and paired with vertical forms
//! through vertical Itô and Stratonovich integrals. On top of this sit
//! statistical vertical-martingale tests, vertical tension fields of maps and
//! sections, and the tangent-bundle and product-bundle constructions.
//!
//! ```
//! use vertmart::{corpus, maps};
//!
//! let tb = vertmart::bundles::complete_lift_bundle(corpus::flat_torus(2));
//! let v = corpus::vector_field("sin-field", &[1.0], 2).unwrap();
//! let sigma = vertmart::bundles::section_of_tm(&v);
//! let tau = maps::tension_field(&sigma, tb.submersion(), tb.base(), &[1.0, 0.0]).unwrap();
//! assert!((tau[0] + 1.0f64.sin()).abs() < 1e-6);
//! ```

#![allow(clippy::needless_range_loop)]

pub mod bundles;
pub mod corpus;
pub mod error;
pub mod geometry;
pub mod integrals;
pub mod maps;
pub mod martingale;
pub mod paths;
pub mod submersion;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use geometry::{ChartedManifold, Christoffel, Connection, Jet, SecondOrderVector};
pub use integrals::RealPath;
pub use martingale::{MartingaleConfig, MartingaleReport};
pub use paths::{Ensemble, SamplePath, TimeGrid};
pub use submersion::{AdaptedSubmersion, VerticalForm};
