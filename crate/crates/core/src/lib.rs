//! Exact matrix realizations of finite-rank simple dimension groups.
//!
//! Builders produce sequences of nonnegative integer matrices whose direct
//! limit is a prescribed dimension group, with equal column sums, equal row
//! sums, or both. Every structural claim is re-checkable with exact
//! arithmetic.

pub mod ecrs_builder;
pub mod ecs_builder;
pub mod ers_builder;
pub mod exact_core;
pub mod io;
pub mod matrix;
pub mod perron;
pub mod realization;
pub mod supernatural;
pub mod traces;
pub mod verify;

pub use exact_core::{ElementaryOp, ExactError, ExactInt, UnimodularTransform};
pub use matrix::{Matrix, ShapeError};

use num_bigint::BigInt;
use num_rational::BigRational;

pub type IntMatrix = Matrix<BigInt>;
pub type RatMatrix = Matrix<BigRational>;
pub type IntVector = Vec<BigInt>;
pub type RatVector = Vec<BigRational>;
