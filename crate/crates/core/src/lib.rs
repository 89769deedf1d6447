//! Open-system simulation of a three-level lambda emitter coupled to two
//! cavity modes, operated as an all-optical switch.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches the file
//! system or the command line lives in the companion `lambda-switch-cli`
//! crate.
//!
//! Units: all rates, couplings, detunings and times are expressed in units of
//! the `|E> -> |G>` half spontaneous-emission rate `gamma_b`, which is fixed
//! to 1.
#![no_std]
// Modules import `num_traits::Float` for `libm`-backed float methods. When a
// dependency links `std` (as dev-dependencies do) the inherent methods take
// over, hence the `allow(unused_imports)` on those imports.

extern crate alloc;

pub mod analysis;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod optimize;
pub mod rng;
pub mod sparse;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);
