//! Forward noising and deterministic (η = 0) DDIM sampling and inversion.

use crate::diffusion::{Conditioning, DenoiserRequest, Denoiser, DiffusionSchedule, LatentImage};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::{cast, Real};

/// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`.
pub fn add_noise<T: Real>(
    z0: &Image<T>,
    eps: &Image<T>,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<LatentImage<T>> {
    schedule.check_level(t)?;
    if !z0.same_shape(eps) {
        return Err(Error::invalid("noise shape differs from latent shape"));
    }
    let a = schedule.alpha_bar(t);
    let sa: T = cast(a.sqrt());
    let sn: T = cast((1.0 - a).sqrt());
    let mut z = z0.clone();
    for (v, e) in z.data.iter_mut().zip(&eps.data) {
        *v = sa * *v + sn * *e;
    }
    Ok(LatentImage::new(z, t))
}

/// How each inversion step treats the noise estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InversionSolve {
    /// Noise predicted at the lower level, the usual one-pass inversion.
    Explicit,
    /// Solve for the upper latent whose DDIM step lands exactly on the lower
    /// one, by fixed-point iteration seeded with the explicit estimate.
    FixedPoint { max_iters: usize, tol: f64 },
}

fn predict<T: Real>(
    denoiser: &mut dyn Denoiser<T>,
    z: &Image<T>,
    t: usize,
    cond: Conditioning<'_, T>,
    schedule: &DiffusionSchedule,
) -> Result<Image<T>> {
    let request = DenoiserRequest {
        latent: z,
        t,
        alpha_bar: schedule.alpha_bar(t),
        conditioning: cond,
    };
    let eps = denoiser.predict_eps(&request)?;
    if !eps.same_shape(z) {
        return Err(crate::diffusion::DenoiserError::ShapeMismatch {
            expected: vec![z.height, z.width, z.channels],
            received: vec![eps.height, eps.width, eps.channels],
        }
        .into());
    }
    Ok(eps)
}

/// One DDIM transition between levels with cumulative signal `a_from` and
/// `a_to`, given the noise estimate: `√a_to ẑ_0 + √(1−a_to) ε̂` where
/// `ẑ_0 = (z − √(1−a_from) ε̂)/√a_from`.
fn transfer<T: Real>(z: &Image<T>, eps: &Image<T>, a_from: f64, a_to: f64) -> Image<T> {
    let k: T = cast((a_to / a_from).sqrt());
    let c_from: T = cast((1.0 - a_from).sqrt());
    let c_to: T = cast((1.0 - a_to).sqrt());
    let mut out = z.clone();
    for (v, e) in out.data.iter_mut().zip(&eps.data) {
        *v = k * (*v - c_from * *e) + c_to * *e;
    }
    out
}

fn check_steps(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("step count must be at least 1"));
    }
    Ok(())
}

/// Runs `n` evenly spaced deterministic DDIM steps from `zt.t` down to level 0.
pub fn ddim_denoise_n<T: Real>(
    zt: &LatentImage<T>,
    n: usize,
    denoiser: &mut dyn Denoiser<T>,
    cond: Conditioning<'_, T>,
    schedule: &DiffusionSchedule,
) -> Result<LatentImage<T>> {
    check_steps(n)?;
    schedule.check_level(zt.t)?;
    let levels = DiffusionSchedule::sub_levels(zt.t, 0, n);
    let mut z = zt.data.clone();
    for (step, pair) in levels.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        let eps = predict(denoiser, &z, from, cond, schedule).map_err(|e| e.at_step(step))?;
        z = transfer(&z, &eps, schedule.alpha_bar(from), schedule.alpha_bar(to));
    }
    Ok(LatentImage::clean(z))
}

/// Runs `n` evenly spaced DDIM inversion steps from `z.t` up to `target`.
pub fn ddim_invert_n<T: Real>(
    z: &LatentImage<T>,
    target: usize,
    n: usize,
    denoiser: &mut dyn Denoiser<T>,
    cond: Conditioning<'_, T>,
    schedule: &DiffusionSchedule,
    solve: InversionSolve,
) -> Result<LatentImage<T>> {
    check_steps(n)?;
    schedule.check_level(target)?;
    if target <= z.t {
        return Err(Error::invalid(format!(
            "inversion target {target} must exceed the start level {}",
            z.t
        )));
    }
    let levels = DiffusionSchedule::sub_levels(z.t, target, n);
    let mut cur = z.data.clone();
    for (step, pair) in levels.windows(2).enumerate() {
        let (lo, hi) = (pair[0], pair[1]);
        let (a_lo, a_hi) = (schedule.alpha_bar(lo), schedule.alpha_bar(hi));
        let eps = predict(denoiser, &cur, lo, cond, schedule).map_err(|e| e.at_step(step))?;
        let mut next = transfer(&cur, &eps, a_lo, a_hi);
        if let InversionSolve::FixedPoint { max_iters, tol } = solve {
            for _ in 0..max_iters {
                let eps = predict(denoiser, &next, hi, cond, schedule).map_err(|e| e.at_step(step))?;
                // The DDIM step hi → lo with this ε̂ must reproduce `cur`.
                let refined = transfer(&cur, &eps, a_lo, a_hi);
                let change = refined.max_abs_diff(&next).as_f64();
                next = refined;
                if change <= tol {
                    break;
                }
            }
        }
        cur = next;
    }
    Ok(LatentImage::new(cur, target))
}
