//! Image and normal-map comparison metrics.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;

pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "cannot compare buffers of {} and {} values",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Mean angle in degrees between normal buffers over pixels where both
/// normals are nonzero; 0 when there are none.
pub fn mean_angular_error<T: Real>(a: &[Vec3<T>], b: &[Vec3<T>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cannot compare normal buffers of {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.cast::<f64>(), y.cast::<f64>());
        let (Some(x), Some(y)) = (x.try_normalize(), y.try_normalize()) else {
            continue;
        };
        sum += x.dot(y).clamp(-1.0, 1.0).acos().to_degrees();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
