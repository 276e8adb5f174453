//! Deterministic min-plus filtering for nonlinear systems.
//!
//! The estimation value function is carried as the pointwise minimum of a
//! finite set of quadratics ([`quadform::QuadSet`]). Each filter step expands
//! the nonlinear terms over a window around the current estimate
//! ([`expander`]), pushes the set through the dynamic-programming recursion
//! ([`propagator`]), reads off the estimate, and prunes the grown set by
//! clustering member minimizers ([`pruner`]).

pub mod error;
pub mod filter;
pub mod harness;
pub mod oracles;
pub mod expander;
pub mod propagator;
pub mod pruner;
pub mod quadform;
pub mod window;

pub use error::{Error, Result};
pub use quadform::{QuadForm, QuadSet};
pub use window::Window;
