//! Small-scale denoising diffusion: schedules, the noise-prediction network,
//! training and sampling.
//!
//! Ancestral sampling consumes per-step `alpha_t`; implicit sampling and the
//! guided sampler consume cumulative `alpha_bar_t` only.

pub mod net;
pub mod sample;
pub mod schedule;
pub mod train;

pub use net::{NetArch, ParamBlock, ScoreNet};
pub use sample::{
    ddim_sample, ddim_sample_chains, ddpm_sample, ddpm_sample_chains, quadratic_subsequence,
    ChainSetup, DdimStep,
};
pub use schedule::{build_schedule, forward_noise, NoiseSchedule, ScheduleSpec};
pub use train::{
    denoise_loss_and_grads, denoise_loss_and_grads_at, train_score_net, Optimizer, TrainOpts,
    TrainReport, TrainedNet,
};
