//! Dyadic Haar machinery for the signed small ball inequality.
//!
//! The crate evaluates signed hyperbolic Haar sums exactly on midpoint grids,
//! computes their sup-norms, builds explicit witness points in two and three
//! (or more) dimensions, checks the probability lemmas behind the
//! three-dimensional argument on exact finite distributions, and computes
//! discrepancy functions of explicit point sets.

pub mod discrepancy;
pub mod dyadic;
pub mod error;
pub mod extremal;
pub mod field;
mod kernel;
pub mod prob;
pub mod rng;
pub mod shapes;
pub mod signs;
pub mod witness2d;
pub mod witness3d;

pub use dyadic::{BitIndex, Dyadic, DyadicInterval, DyadicRect, GridPoint};
pub use error::{Error, Result};
pub use field::{rfunction_eval, HaarField};
pub use shapes::{hyperbolic_shapes, Constraint, ShapeFamily, ShapeVector};
pub use signs::{ExplicitSigns, SignOracle};
