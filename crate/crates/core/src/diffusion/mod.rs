//! Diffusion machinery: schedules, noising, deterministic DDIM sampling and
//! inversion, closed-form priors, the latent codec and the remote denoiser
//! transport.

mod codec;
mod ddim;
mod denoiser;
pub mod protocol;
mod schedule;

pub use codec::{Codec, Upsample};
pub use ddim::{add_noise, ddim_denoise_n, ddim_invert_n, InversionSolve};
pub use denoiser::{
    analytic_eps, AnalyticDenoiser, AnalyticPrior, Broadcast, Conditioning, Denoiser, DenoiserError,
    DenoiserRequest, LatentImage,
};
pub use protocol::{Endpoint, RemoteDenoiser};
pub use schedule::{DiffusionSchedule, ScheduleKind};
