#![no_std]
extern crate alloc;

pub mod autodiff;
pub mod channel;
pub mod codec;
pub mod error;
pub mod fft;
pub mod learned;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
