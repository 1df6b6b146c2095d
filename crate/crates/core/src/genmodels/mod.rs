//! Toy generative pipelines: a codebook autoregressive token model and a
//! 2-D diffusion denoiser, plus the synthetic data they train on.

pub mod ar;
pub mod codebook;
pub mod data;
pub mod diffusion;
pub mod optim;

pub use ar::{ar_generate, ar_generate_with, train_toy_ar, ArConfig, Generation, ToyARModel, TrainConfig};
pub use codebook::{build_codebook, vq_decode, vq_encode, Codebook};
pub use diffusion::{
    diffusion_sample, diffusion_sample_with, diffusion_step, train_toy_denoiser, DenoiserTrainConfig,
    DiffusionSchedule, DiffusionTrajectory, GaussianOracle, NoisePredictor, SigmaMode, ToyDenoiser,
};
pub use data::{GaussianMixture, MarkovSource, Sequence};
pub use optim::ParamSet;
