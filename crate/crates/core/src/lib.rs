//! Compliant peg-in-hole insertion: a quasi-static contact simulator, an
//! adaptive parallel position-force controller driven by a learned policy,
//! a small reverse-mode network engine, and soft actor-critic with
//! prioritized replay.
//!
//! The crate is `no_std` + `alloc`. IO, configuration files, checkpoints and
//! the command line live in the `peginsert` companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod control;
pub mod env;
mod error;
pub mod geom;
pub mod nn;
pub mod sac;
pub mod sim;

pub use error::{Error, Result};

/// Seedable generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;
