#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Numerical laboratory for the family of inequalities
//! `Var_p(f) ≤ C (2-p)^a E(f)` that interpolates between the Poincaré
//! inequality (p = 1) and the logarithmic Sobolev inequality (p → 2).

pub mod concentration;
pub mod dual;
pub mod error;
pub mod expr;
pub mod functionals;
pub mod measures;
pub mod phi_class;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod transport;
pub mod two_point;

pub use error::{LabError, Result};
