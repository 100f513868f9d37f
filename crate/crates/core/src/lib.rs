//! Laboratory for 1D conservation-form PDEs of the family
//!
//! ```text
//! u_t + (alpha u^2 - beta u_x + gamma u_xx)_x = delta(t, x),   u(0, x) = delta(0, x)
//! ```
//!
//! The crate bundles three things that share one set of types:
//!
//! * [`classical`]: a method-of-lines reference solver (WENO5 finite-volume
//!   reconstruction, central stencils for the linear terms, SSP-RK3 under a
//!   CFL limit) used both as ground-truth generator and as a baseline.
//! * [`tensor`] and [`model`]: a small reverse-mode autodiff engine and the
//!   message-passing neural solver built on it (MLP encoder, `M` processor
//!   layers, CNN decoder emitting a temporal bundle of `K` steps).
//! * [`training`] and [`eval`]: one-step and pushforward losses, the Adam
//!   training loop, and the accumulated-error / survival-time harness.

pub mod classical;
pub mod error;
pub mod eval;
pub mod model;
pub mod pde;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
