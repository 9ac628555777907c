//! Fixed image ↔ latent codec.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    /// Block replication; exact inverse of pooling on block-constant images.
    #[default]
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Codec {
    #[default]
    Identity,
    /// `factor × factor` average pooling, three latent channels.
    Pooled { factor: usize, upsample: Upsample },
}

impl Codec {
    pub fn pooled(factor: usize) -> Self {
        Codec::Pooled {
            factor,
            upsample: Upsample::Nearest,
        }
    }

    pub fn factor(&self) -> usize {
        match self {
            Codec::Identity => 1,
            Codec::Pooled { factor, .. } => *factor,
        }
    }

    /// Latent `(width, height)` for an image of the given size.
    pub fn latent_dims(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let f = self.factor();
        if f == 0 {
            return Err(Error::invalid("pooling factor must be positive"));
        }
        if width % f != 0 || height % f != 0 {
            return Err(Error::invalid(format!(
                "{width}x{height} image is not divisible by pooling factor {f}"
            )));
        }
        Ok((width / f, height / f))
    }

    pub fn encode<T: Real>(&self, image: &Image<T>) -> Result<Image<T>> {
        let (lw, lh) = self.latent_dims(image.width, image.height)?;
        let f = self.factor();
        if f == 1 {
            return Ok(image.clone());
        }
        let c = image.channels;
        let norm = T::one() / T::of_usize(f * f);
        let mut out = Image::zeros(lw, lh, c);
        for y in 0..image.height {
            for x in 0..image.width {
                for ch in 0..c {
                    *out.at_mut(x / f, y / f, ch) += image.at(x, y, ch) * norm;
                }
            }
        }
        Ok(out)
    }

    /// Upsamples a latent back to image resolution.
    pub fn decode<T: Real>(&self, latent: &Image<T>) -> Result<Image<T>> {
        match *self {
            Codec::Identity => Ok(latent.clone()),
            Codec::Pooled { factor, upsample } => {
                if factor == 0 {
                    return Err(Error::invalid("pooling factor must be positive"));
                }
                Ok(match upsample {
                    Upsample::Nearest => upsample_nearest(latent, factor),
                    Upsample::Bilinear => upsample_bilinear(latent, factor),
                })
            }
        }
    }

    /// `(encode(image), decode(encode(image)))`.
    pub fn roundtrip<T: Real>(&self, image: &Image<T>) -> Result<(Image<T>, Image<T>)> {
        let latent = self.encode(image)?;
        let recon = self.decode(&latent)?;
        Ok((latent, recon))
    }

    /// Adjoint of [`Codec::encode`]: spreads latent gradients over their pools.
    pub fn encode_adjoint<T: Real>(&self, grad_latent: &Image<T>) -> Image<T> {
        let f = self.factor();
        if f == 1 {
            return grad_latent.clone();
        }
        let mut g = upsample_nearest(grad_latent, f);
        let norm = T::one() / T::of_usize(f * f);
        g.data.iter_mut().for_each(|v| *v *= norm);
        g
    }
}

fn upsample_nearest<T: Real>(latent: &Image<T>, f: usize) -> Image<T> {
    let c = latent.channels;
    let mut out = Image::zeros(latent.width * f, latent.height * f, c);
    for y in 0..out.height {
        for x in 0..out.width {
            for ch in 0..c {
                *out.at_mut(x, y, ch) = latent.at(x / f, y / f, ch);
            }
        }
    }
    out
}

fn upsample_bilinear<T: Real>(latent: &Image<T>, f: usize) -> Image<T> {
    let c = latent.channels;
    let (lw, lh) = (latent.width, latent.height);
    let mut out = Image::zeros(lw * f, lh * f, c);
    let fs = T::of_usize(f);
    let half = T::lit(0.5);
    let coord = |i: usize, n: usize| {
        let s = ((T::of_usize(i) + half) / fs - half).max(T::zero()).min(T::of_usize(n - 1));
        let i0 = s.floor().to_usize().unwrap_or(0);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - T::of_usize(i0))
    };
    for y in 0..out.height {
        let (y0, y1, ty) = coord(y, lh);
        for x in 0..out.width {
            let (x0, x1, tx) = coord(x, lw);
            for ch in 0..c {
                let top = latent.at(x0, y0, ch) * (T::one() - tx) + latent.at(x1, y0, ch) * tx;
                let bot = latent.at(x0, y1, ch) * (T::one() - tx) + latent.at(x1, y1, ch) * tx;
                *out.at_mut(x, y, ch) = top * (T::one() - ty) + bot * ty;
            }
        }
    }
    out
}
