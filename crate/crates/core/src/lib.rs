//! Desk-scale quantization laboratory.
//!
//! Uniform and floating-point quantizers, post-training quantization
//! (RTN, GPTQ, GPTVQ, block reconstruction with clipping and equivalent
//! transforms), TopKLD distillation with quantization-aware training, two
//! toy generative pipelines (a codebook autoregressive model and a
//! diffusion denoiser), an error-tolerance harness, and bit-level scaling
//! analysis.

pub mod cli;
pub mod distill;
pub mod error;
pub mod genmodels;
pub mod numerics;
pub mod oracle;
pub mod plot;
pub mod ptq;
pub mod quant;
pub mod scaling;
pub mod tolerance;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
