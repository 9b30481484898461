//! Minimal reverse-mode autodiff and the layers built on it.

pub mod layers;
pub mod params;
pub mod tape;

pub use params::{AdamW, BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};
