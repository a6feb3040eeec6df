//! Unsupervised domain adaptation on a small, self-contained autodiff engine.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and seeds; file formats, configuration and the
//! command-line runner live in the companion `uda-lab` crate.
#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod methods;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradMap, Tape, Tensor, Var};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
