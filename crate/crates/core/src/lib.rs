//! Masked signal modelling for few-shot radar waveform recognition.
//!
//! The crate covers the whole pipeline: I/Q frame handling and the on-disk
//! dataset format, synthetic waveform generation, masking strategies,
//! convolutional autoencoders with a small reverse-mode gradient engine,
//! pretraining and fine-tuning loops, n-shot sampling, and evaluation.

pub mod autograd;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod iqcore;
pub mod masking;
pub mod models;
pub mod rng;
pub mod siggen;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
