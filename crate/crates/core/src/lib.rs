//! Traveling-wave profiles of the follow-the-leader traffic model.
//!
//! Each car moves with speed `V phi(rho_i)` where `rho_i = ell / (z_{i+1} - z_i)`.
//! A stationary profile `W` is a monotone curve along which every car's
//! `(position, density)` pair stays for all time; it solves an advanced-argument
//! differential equation that this crate integrates backward by the method of
//! steps, then drives to the two-point boundary values `rho_-`, `rho_+`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod bvp;
pub mod config;
pub mod csv;
pub mod curve;
pub mod dde;
pub mod diagnostics;
pub mod error;
pub mod interp;
pub mod macro_ref;
pub mod model;
pub mod moving_frame;
pub mod quad;
pub mod rates;
pub mod roots;
pub mod sim;
pub mod stats;
pub mod svg;

pub use curve::{ProfileCurve, RightTail};
pub use error::{Error, Result};
pub use model::{FluxInfo, ModelParams, VelocityLaw};
