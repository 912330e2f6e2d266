//! Stochastic Runge-Kutta methods of weak order two: tableaux, random
//! variables, steppers, order conditions and the forest calculus behind
//! them, plus a Monte Carlo harness for weak error experiments.

pub mod conditions;
pub mod error;
pub mod forests;
pub mod harness;
pub mod randvars;
pub mod stepper;
pub mod tableau;

pub use error::{Error, Result};
