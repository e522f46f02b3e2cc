//! Blind deconvolution with diffusion posterior sampling and EM kernel updates.

pub mod benchmark;
pub mod denoiser;
pub mod em;
pub mod error;
pub mod fft;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod mstep;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod simplex;
pub mod sweep;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleConfig};
pub use score::ScoreModel;
pub use tensor::{BlurKernel, FreqImage, ImageTensor, KernelGrid};
