//! Equirectangular environment map composited at infinity.
//!
//! Row axis is the polar angle `η ∈ (0, π]` measured from world `+z`, column
//! axis the azimuth `φ ∈ (0, 2π]` measured from `+x` towards `+y`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::{cast, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvSampling {
    Nearest,
    #[default]
    Bilinear,
}

/// Sample positions are snapped to this fraction of a texel so that
/// `φ` and `φ + 2π` land on the same texel coordinate bit-for-bit.
const TEXEL_QUANTUM: f64 = 65536.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap<T> {
    pub width: usize,
    pub height: usize,
    /// Row-major radiance, `height × width`.
    pub pixels: Vec<Vec3<T>>,
    pub sampling: EnvSampling,
}

impl<T: Real> EnvironmentMap<T> {
    pub fn uniform(width: usize, height: usize, color: Vec3<T>) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
            sampling: EnvSampling::default(),
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Vec3<T>>) -> Result<Self> {
        let env = Self {
            width,
            height,
            pixels,
            sampling: EnvSampling::default(),
        };
        env.validate()?;
        Ok(env)
    }

    pub fn with_sampling(mut self, sampling: EnvSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("environment map needs at least one texel"));
        }
        if self.pixels.len() != self.width * self.height {
            return Err(Error::invalid(format!(
                "environment map has {} texels, expected {}x{}",
                self.pixels.len(),
                self.height,
                self.width
            )));
        }
        let bad = self
            .pixels
            .iter()
            .any(|p| !p.is_finite() || p.x < T::zero() || p.y < T::zero() || p.z < T::zero());
        if bad {
            return Err(Error::invalid("environment map texels must be finite and non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> Vec3<T> {
        self.pixels[row * self.width + col]
    }

    /// Color seen along a world-space direction (need not be unit length).
    pub fn query(&self, dir: Vec3<T>) -> Result<Vec3<T>> {
        let (phi, eta) = direction_to_angles(dir)?;
        Ok(self.sample(phi, eta))
    }

    /// Color for an explicit `(φ, η)` pair.
    pub fn query_angles(&self, phi: T, eta: T) -> Result<Vec3<T>> {
        if !phi.is_finite() || !eta.is_finite() {
            return Err(Error::invalid("environment query angles must be finite"));
        }
        Ok(self.sample(phi.as_f64(), eta.as_f64()))
    }

    /// The single texel color of a map whose texels are all equal.
    pub fn constant_color(&self) -> Option<Vec3<T>> {
        let first = *self.pixels.first()?;
        self.pixels.iter().all(|p| *p == first).then_some(first)
    }

    /// Infallible lookup for directions already known to be nonzero.
    pub(crate) fn query_unchecked(&self, dir: Vec3<T>) -> Vec3<T> {
        match direction_to_angles(dir) {
            Ok((phi, eta)) => self.sample(phi, eta),
            Err(_) => self.sample(0.0, 0.0),
        }
    }

    fn sample(&self, phi: f64, eta: f64) -> Vec3<T> {
        // At the poles the azimuth is meaningless.
        let phi = if eta.sin() == 0.0 { 0.0 } else { phi };
        let w = self.width as f64;
        let h = self.height as f64;
        let quantize = |x: f64| (x * TEXEL_QUANTUM).round() / TEXEL_QUANTUM;
        let x = quantize(phi / TAU * w - 0.5);
        let y = quantize(eta / PI * h - 0.5);
        let wrap = |c: f64| (c.rem_euclid(w)) as usize % self.width;
        let clamp_row = |r: f64| r.clamp(0.0, h - 1.0) as usize;
        match self.sampling {
            EnvSampling::Nearest => {
                let col = wrap((x + 0.5).floor());
                let row = clamp_row((y + 0.5).floor());
                self.texel(row, col)
            }
            EnvSampling::Bilinear => {
                let x0 = x.floor();
                let y0 = y.floor();
                let fx: T = cast(x - x0);
                let fy: T = cast(y - y0);
                let (c0, c1) = (wrap(x0), wrap(x0 + 1.0));
                let (r0, r1) = (clamp_row(y0), clamp_row(y0 + 1.0));
                let one = T::one();
                let top = self.texel(r0, c0) * (one - fx) + self.texel(r0, c1) * fx;
                let bottom = self.texel(r1, c0) * (one - fx) + self.texel(r1, c1) * fx;
                top * (one - fy) + bottom * fy
            }
        }
    }
}

/// Maps a direction to `(φ, η)` with `φ ∈ (0, 2π]`, `η ∈ [0, π]`.
pub fn direction_to_angles<T: Real>(dir: Vec3<T>) -> Result<(f64, f64)> {
    let d = dir.cast::<f64>();
    if !d.is_finite() {
        return Err(Error::invalid("direction must be finite"));
    }
    let len = d.norm();
    if len == 0.0 {
        return Err(Error::invalid("direction must be nonzero"));
    }
    let eta = (d.z / len).clamp(-1.0, 1.0).acos();
    let mut phi = if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        d.y.atan2(d.x)
    };
    if phi <= 0.0 && !(d.x == 0.0 && d.y == 0.0) {
        phi += TAU;
    }
    Ok((phi, eta))
}

/// Inverse of [`direction_to_angles`].
pub fn angles_to_direction<T: Real>(phi: T, eta: T) -> Vec3<T> {
    let (sp, cp) = phi.sin_cos();
    let (se, ce) = eta.sin_cos();
    Vec3::new(cp * se, sp * se, ce)
}
