//! Real spherical-harmonic color basis up to degree 3.
//!
//! The degree-0 basis function is the constant 1, so the first coefficient of
//! a splat is its plain RGB color. Higher bands use the usual real SH
//! normalization.

use std::ops::{Add, Mul, Sub};

use crate::math::Vec3;
use crate::real::Real;

pub const MAX_SH_DEGREE: usize = 3;

/// Number of coefficients for a band-limited expansion of `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`coeff_count`].
pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Value plus gradient with respect to the direction components.
#[derive(Clone, Copy, Debug)]
pub struct Jet<T> {
    pub v: T,
    pub d: Vec3<T>,
}

impl<T: Real> Jet<T> {
    fn var(v: T, axis: usize) -> Self {
        let mut d = Vec3::zero();
        d[axis] = T::one();
        Self { v, d }
    }

    fn scale(self, c: f64) -> Self {
        let c = T::lit(c);
        Self {
            v: self.v * c,
            d: self.d * c,
        }
    }

    fn cst(c: f64) -> Self {
        Self {
            v: T::lit(c),
            d: Vec3::zero(),
        }
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + o.d * self.v,
        }
    }
}

/// Basis values (with direction gradients) for a unit direction.
pub fn basis<T>(dir: Vec3<T>, degree: usize) -> Vec<Jet<T>>
where
    T: Real,
{
    let mut out = Vec::with_capacity(coeff_count(degree));
    out.push(Jet::cst(1.0));
    if degree == 0 {
        return out;
    }
    let x = Jet::var(dir.x, 0);
    let y = Jet::var(dir.y, 1);
    let z = Jet::var(dir.z, 2);
    out.push(y.scale(-C1));
    out.push(z.scale(C1));
    out.push(x.scale(-C1));
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out.push(xy.scale(C2[0]));
    out.push(yz.scale(C2[1]));
    out.push((zz.scale(2.0) - xx - yy).scale(C2[2]));
    out.push(xz.scale(C2[3]));
    out.push((xx - yy).scale(C2[4]));
    if degree == 2 {
        return out;
    }
    out.push((y * (xx.scale(3.0) - yy)).scale(C3[0]));
    out.push((xy * z).scale(C3[1]));
    out.push((y * (zz.scale(4.0) - xx - yy)).scale(C3[2]));
    out.push((z * (zz.scale(2.0) - xx.scale(3.0) - yy.scale(3.0))).scale(C3[3]));
    out.push((x * (zz.scale(4.0) - xx - yy)).scale(C3[4]));
    out.push((z * (xx - yy)).scale(C3[5]));
    out.push((x * (xx - yy.scale(3.0))).scale(C3[6]));
    out
}

/// Evaluates an SH color for a unit view direction, unclamped.
pub fn eval<T>(coeffs: &[Vec3<T>], dir: Vec3<T>) -> Vec3<T>
where
    T: Real,
{
    if coeffs.len() == 1 {
        return coeffs[0];
    }
    let degree = degree_for_count(coeffs.len()).expect("coefficient count is a square");
    basis(dir, degree)
        .iter()
        .zip(coeffs)
        .fold(Vec3::zero(), |acc, (b, c)| acc + *c * b.v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_plain_rgb() {
        let c = [Vec3::new(0.2, 0.4, 0.6)];
        let dir = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(eval(&c, dir), c[0]);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let dir = Vec3::new(0.3_f64, -0.5, 0.81);
        let b = basis(dir, 3);
        assert_eq!(b.len(), 16);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[axis] += h;
            m[axis] -= h;
            let bp = basis(p, 3);
            let bm = basis(m, 3);
            for k in 0..16 {
                let fd = (bp[k].v - bm[k].v) / (2.0 * h);
                assert!((fd - b[k].d[axis]).abs() < 1e-7, "k={k} axis={axis}");
            }
        }
    }

    #[test]
    fn counts_round_trip() {
        for d in 0..=MAX_SH_DEGREE {
            assert_eq!(degree_for_count(coeff_count(d)), Some(d));
        }
        assert_eq!(degree_for_count(5), None);
    }
}
