//! Geometry-grounded distillation: loss assembly, Langevin updates, density
//! control and the optimization loop.
//!
//! Each step renders a viewpoint, maps the render's latent to a noise level
//! by DDIM inversion, denoises it in `N` steps under proxy-disparity
//! conditioning and pulls the scene towards the decoded result, while normal
//! and disparity losses keep the splats on the proxy geometry.

mod config;
mod density;
mod losses;
mod sgld;
mod step;

pub use config::{GgdsConfig, NoiseMode, Omega, Preconditioner, StepSizes, DEFAULT_CONFIG_TEXT};
pub use density::{densify_prune, DensifyOutcome, DensifyStats};
pub use losses::{compute_losses, LossReport};
pub use sgld::{sgld_update, AdamState, SgldOutcome, SgldParams};
pub use step::{
    default_defer_level, deferred_render, optimize, sample_noise_level, CameraPool, Optimizer, StepEvent,
    StepOutcome,
};
