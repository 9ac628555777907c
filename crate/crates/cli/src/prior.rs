//! Prior specs: `builtin:gaussian[:mean:variance]`, `builtin:delta:<image>`
//! and `bridge:<endpoint>`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use ggds_core::diffusion::{AnalyticDenoiser, AnalyticPrior, Broadcast, Codec, Denoiser, Endpoint, RemoteDenoiser};
use ggds_core::image::Image;

pub const DEFAULT_GAUSSIAN_MEAN: f32 = 0.5;
pub const DEFAULT_GAUSSIAN_VARIANCE: f32 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub enum PriorSpec {
    Gaussian { mean: f32, variance: f32 },
    Delta(PathBuf),
    Bridge(Endpoint),
}

impl PriorSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("builtin:gaussian") {
            if rest.is_empty() {
                return Ok(PriorSpec::Gaussian {
                    mean: DEFAULT_GAUSSIAN_MEAN,
                    variance: DEFAULT_GAUSSIAN_VARIANCE,
                });
            }
            let parts: Vec<&str> = rest.trim_start_matches(':').split(':').collect();
            let [mean, variance] = parts[..] else {
                bail!("prior {s:?}: expected builtin:gaussian or builtin:gaussian:<mean>:<variance>");
            };
            let mean: f32 = mean.parse().with_context(|| format!("prior {s:?}: bad mean"))?;
            let variance: f32 = variance.parse().with_context(|| format!("prior {s:?}: bad variance"))?;
            if !(variance >= 0.0 && variance.is_finite() && mean.is_finite()) {
                bail!("prior {s:?}: variance must be finite and non-negative");
            }
            return Ok(PriorSpec::Gaussian { mean, variance });
        }
        if let Some(path) = s.strip_prefix("builtin:delta:") {
            if path.is_empty() {
                bail!("prior {s:?} names no target image");
            }
            return Ok(PriorSpec::Delta(PathBuf::from(path)));
        }
        if let Some(ep) = s.strip_prefix("bridge:") {
            return Ok(PriorSpec::Bridge(Endpoint::parse(ep)?));
        }
        Err(anyhow!(
            "unknown prior {s:?}: expected builtin:gaussian, builtin:delta:<image> or bridge:<endpoint>"
        ))
    }

    /// Builds the denoiser for views of `width × height` pixels.
    pub fn build(&self, codec: &Codec, width: usize, height: usize, timeout: Duration) -> Result<Box<dyn Denoiser<f32>>> {
        Ok(match self {
            PriorSpec::Gaussian { mean, variance } => Box::new(AnalyticDenoiser::new(AnalyticPrior::Gaussian {
                mean: Broadcast::Scalar(*mean),
                variance: Broadcast::Scalar(*variance),
            })),
            PriorSpec::Delta(path) => {
                let target = load_rgb(path)?;
                if (target.width, target.height) != (width, height) {
                    bail!(
                        "{}: delta target is {}x{} but views render at {width}x{height}",
                        path.display(),
                        target.width,
                        target.height
                    );
                }
                let mean = codec.encode(&target)?;
                Box::new(AnalyticDenoiser::new(AnalyticPrior::Delta {
                    mean: Broadcast::Full(mean),
                }))
            }
            PriorSpec::Bridge(endpoint) => Box::new(RemoteDenoiser::connect(endpoint, timeout)?),
        })
    }
}

/// Reads a PFM or PNG image as three-channel linear values in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Image<f32>> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let img = if is_pfm {
        ggds_core::io::load_pfm(path)?
    } else {
        let rgb = image::open(path)
            .with_context(|| format!("{}: cannot read image", path.display()))?
            .to_rgb32f();
        let (w, h) = rgb.dimensions();
        Image::from_vec(w as usize, h as usize, 3, rgb.into_raw())?
    };
    if img.channels != 3 {
        bail!("{}: expected an RGB image, found {} channels", path.display(), img.channels);
    }
    Ok(img)
}
