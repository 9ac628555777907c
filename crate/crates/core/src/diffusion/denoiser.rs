//! Noise-prediction interface and the closed-form analytic priors.

use thiserror::Error;

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::{cast, Real};

/// Latent tensor tagged with its noise level (0 = clean).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage<T> {
    pub data: Image<T>,
    pub t: usize,
}

impl<T: Real> LatentImage<T> {
    pub fn new(data: Image<T>, t: usize) -> Self {
        Self { data, t }
    }

    pub fn clean(data: Image<T>) -> Self {
        Self { data, t: 0 }
    }
}

/// Optional conditioning forwarded to the denoiser untouched.
#[derive(Clone, Copy, Debug, Default)]
pub struct Conditioning<'a, T> {
    /// Disparity at latent resolution, `height × width`.
    pub disparity: Option<&'a Image<T>>,
    pub text: Option<&'a str>,
}

impl<T> Conditioning<'_, T> {
    pub fn none() -> Self {
        Self {
            disparity: None,
            text: None,
        }
    }
}

/// One noise-prediction query.
#[derive(Clone, Copy, Debug)]
pub struct DenoiserRequest<'a, T> {
    pub latent: &'a Image<T>,
    pub t: usize,
    pub alpha_bar: f64,
    pub conditioning: Conditioning<'a, T>,
}

impl<T: Real> DenoiserRequest<'_, T> {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        if let Some(d) = self.conditioning.disparity {
            if d.width != self.latent.width || d.height != self.latent.height || d.channels != 1 {
                return Err(DenoiserError::InvalidRequest(format!(
                    "disparity is {}x{}x{}, latent is {}x{}",
                    d.height, d.width, d.channels, self.latent.height, self.latent.width
                )));
            }
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar <= 1.0) {
            return Err(DenoiserError::InvalidRequest(format!(
                "alpha_bar {} outside (0, 1]",
                self.alpha_bar
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("cannot connect to denoiser at {endpoint}: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("denoiser did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("denoiser speaks protocol version {found}, expected {expected}")]
    VersionMismatch { expected: u8, found: u8 },
    #[error("denoiser returned dims {received:?}, expected {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, received: Vec<usize> },
    #[error("denoiser reported: {0}")]
    Remote(String),
    #[error("malformed denoiser message: {0}")]
    Protocol(String),
    #[error("invalid denoiser request: {0}")]
    InvalidRequest(String),
    #[error("denoiser transport: {0}")]
    Io(#[from] std::io::Error),
}

/// Predicts the noise `ε̂` contained in a latent at level `t`.
///
/// Implementations may hold connections, hence `&mut self`.
pub trait Denoiser<T: Real> {
    fn predict_eps(&mut self, request: &DenoiserRequest<'_, T>) -> Result<Image<T>, DenoiserError>;
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for Box<D> {
    fn predict_eps(&mut self, request: &DenoiserRequest<'_, T>) -> Result<Image<T>, DenoiserError> {
        (**self).predict_eps(request)
    }
}

/// Per-element parameter: one value, one per channel, or one per element.
#[derive(Clone, Debug, PartialEq)]
pub enum Broadcast<T> {
    Scalar(T),
    PerChannel(Vec<T>),
    Full(Image<T>),
}

impl<T: Real> Broadcast<T> {
    fn check(&self, shape: &Image<T>) -> Result<()> {
        let ok = match self {
            Broadcast::Scalar(_) => true,
            Broadcast::PerChannel(v) => v.len() == shape.channels,
            Broadcast::Full(img) => img.same_shape(shape),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior parameter does not broadcast to the latent shape"))
        }
    }

    #[inline]
    fn at(&self, i: usize, channels: usize) -> T {
        match self {
            Broadcast::Scalar(v) => *v,
            Broadcast::PerChannel(v) => v[i % channels],
            Broadcast::Full(img) => img.data[i],
        }
    }

    /// Materializes the parameter at the shape of `like`.
    pub fn expand(&self, like: &Image<T>) -> Result<Image<T>> {
        self.check(like)?;
        let mut out = like.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v = self.at(i, like.channels);
        }
        Ok(out)
    }
}

/// Closed-form priors over clean latents.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticPrior<T> {
    /// Independent `N(μ, σ²)` per element.
    Gaussian { mean: Broadcast<T>, variance: Broadcast<T> },
    /// All mass at `μ`.
    Delta { mean: Broadcast<T> },
}

impl<T: Real> AnalyticPrior<T> {
    pub fn standard_normal() -> Self {
        AnalyticPrior::Gaussian {
            mean: Broadcast::Scalar(T::zero()),
            variance: Broadcast::Scalar(T::one()),
        }
    }

    fn check(&self, shape: &Image<T>) -> Result<()> {
        match self {
            AnalyticPrior::Gaussian { mean, variance } => {
                mean.check(shape)?;
                variance.check(shape)
            }
            AnalyticPrior::Delta { mean } => mean.check(shape),
        }
    }
}

/// Exact `ε̂ = (z_t − √ᾱ E[z_0|z_t]) / √(1−ᾱ)` under an analytic prior.
///
/// For the Gaussian this simplifies to `√(1−ᾱ)(z_t − √ᾱ μ)/(ᾱσ² + 1 − ᾱ)`,
/// which stays finite at `ᾱ = 1`. The delta prior returns zero at `ᾱ = 1`.
pub fn analytic_eps<T: Real>(
    zt: &Image<T>,
    t: usize,
    prior: &AnalyticPrior<T>,
    schedule: &DiffusionSchedule,
) -> Result<Image<T>> {
    schedule.check_level(t)?;
    prior.check(zt)?;
    Ok(analytic_eps_at(zt, schedule.alpha_bar(t), prior))
}

fn analytic_eps_at<T: Real>(zt: &Image<T>, alpha_bar: f64, prior: &AnalyticPrior<T>) -> Image<T> {
    let a: T = cast(alpha_bar);
    let sa = a.sqrt();
    let one_minus = T::one() - a;
    let s1 = one_minus.sqrt();
    let c = zt.channels;
    let mut out = zt.clone();
    match prior {
        AnalyticPrior::Gaussian { mean, variance } => {
            for (i, e) in out.data.iter_mut().enumerate() {
                let den = a * variance.at(i, c) + one_minus;
                let r = zt.data[i] - sa * mean.at(i, c);
                *e = if den > T::zero() { s1 * r / den } else { T::zero() };
            }
        }
        AnalyticPrior::Delta { mean } => {
            for (i, e) in out.data.iter_mut().enumerate() {
                *e = if s1 > T::zero() {
                    (zt.data[i] - sa * mean.at(i, c)) / s1
                } else {
                    T::zero()
                };
            }
        }
    }
    out
}

/// [`Denoiser`] backed by an [`AnalyticPrior`]; ignores conditioning.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser<T> {
    pub prior: AnalyticPrior<T>,
}

impl<T: Real> AnalyticDenoiser<T> {
    pub fn new(prior: AnalyticPrior<T>) -> Self {
        Self { prior }
    }
}

impl<T: Real> Denoiser<T> for AnalyticDenoiser<T> {
    fn predict_eps(&mut self, request: &DenoiserRequest<'_, T>) -> Result<Image<T>, DenoiserError> {
        request.validate()?;
        self.prior
            .check(request.latent)
            .map_err(|e| DenoiserError::InvalidRequest(e.to_string()))?;
        Ok(analytic_eps_at(request.latent, request.alpha_bar, &self.prior))
    }
}
