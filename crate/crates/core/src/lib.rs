//! Forward models and parameter extraction for flux-tunable superconducting resonators.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod cli;
pub mod config;
pub mod constants;
pub mod error;
pub mod ftr;
pub mod io;
pub mod lsq;
pub mod magnetics;
pub mod quad;
pub mod roots;
pub mod s21;
pub mod squid;
pub mod synth;

pub use error::{Error, Result};
