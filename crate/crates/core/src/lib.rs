#![no_std]

//! Federated training of a compact time-domain source separator.
//!
//! Clients hold private, non-IID noisy recordings and train locally with
//! either a supervised permutation-invariant loss or mixture invariant
//! training (MixIT). A server averages the returned weights every
//! communication round. Everything in this crate is pure computation over
//! in-memory buffers; file formats, checkpoints and the command line live in
//! the `fedsep` companion crate.

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rng;
pub mod signal;

mod math;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use signal::{AudioBuffer, SourceStack};
