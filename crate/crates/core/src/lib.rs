//! Numerical laboratory for one-phase Stefan problems driven by fully
//! nonlinear uniformly parabolic operators.
//!
//! The crate simulates graph-type free boundaries, measures flatness and
//! nondegeneracy of the computed solutions, certifies closed-form barrier
//! functions and runs the flat-implies-trapped experiment end to end.
//!
//! ```
//! use stefanlab::elliptic::{pucci_plus, pucci_minus};
//! use nalgebra::DMatrix;
//!
//! let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
//! assert_eq!(pucci_plus(&m, 2.0), 1.0);
//! assert_eq!(pucci_minus(&m, 2.0), -3.5);
//! ```

pub mod barrier;
pub mod config;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod solver;
pub mod stefan;
pub mod svg;

pub use error::{Error, Result};
