//! Per-view splat preprocessing shared by the forward and backward passes.

use crate::math::{orthonormalize_pair, Vec3};
use crate::raster::camera::Camera;
use crate::real::Real;
use crate::scene::{sh, SceneModel};

/// Gaussian support is truncated at this many standard deviations.
pub const CUTOFF_SIGMA: f64 = 3.0;

/// Camera-space form of one splat.
///
/// With the pixel ray `d` (depth component 1), the ray–plane intersection
/// has depth `λ = np / (d·n)` and splat coordinates
/// `a = (d·big_u)/(d·n)`, `b = (d·big_v)/(d·n)`.
#[derive(Clone, Debug)]
pub(crate) struct Prepared<T> {
    pub usable: bool,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the truncated footprint.
    pub bbox: Option<[usize; 4]>,
    pub p: Vec3<T>,
    pub u: Vec3<T>,
    pub v: Vec3<T>,
    pub n: Vec3<T>,
    pub np: T,
    pub pu: T,
    pub pv: T,
    pub big_u: Vec3<T>,
    pub big_v: Vec3<T>,
    /// `±1`, flips `n` to face the camera.
    pub sign: T,
    pub nf: Vec3<T>,
    pub color: Vec3<T>,
    pub color_raw: Vec3<T>,
    pub opacity: T,
    pub view_dir: Vec3<T>,
    pub view_dist: T,
}

impl<T: Real> Prepared<T> {
    fn unusable() -> Self {
        let z = Vec3::zero();
        Self {
            usable: false,
            bbox: None,
            p: z,
            u: z,
            v: z,
            n: z,
            np: T::zero(),
            pu: T::zero(),
            pv: T::zero(),
            big_u: z,
            big_v: z,
            sign: T::one(),
            nf: z,
            color: z,
            color_raw: z,
            opacity: T::zero(),
            view_dir: z,
            view_dist: T::zero(),
        }
    }
}

pub(crate) fn prepare<T: Real>(scene: &SceneModel<T>, camera: &Camera<T>) -> Vec<Prepared<T>> {
    let focal = camera.focal();
    scene
        .splats
        .iter()
        .map(|s| {
            let Some((uw, vw)) = orthonormalize_pair(s.tangent_u, s.tangent_v) else {
                return Prepared::unusable();
            };
            if !(s.scale_u > T::zero() && s.scale_v > T::zero()) {
                return Prepared::unusable();
            }
            let p = camera.world_to_camera(s.center);
            let u = camera.rotation.mul_vec(uw);
            let v = camera.rotation.mul_vec(vw);
            let n = u.cross(v);
            let np = n.dot(p);
            let pu = p.dot(u);
            let pv = p.dot(v);
            let big_u = (u * np - n * pu) / s.scale_u;
            let big_v = (v * np - n * pv) / s.scale_v;
            let sign = if np > T::zero() { -T::one() } else { T::one() };

            let offset = s.center - camera.position;
            let view_dist = offset.norm();
            let view_dir = if view_dist > T::zero() {
                offset / view_dist
            } else {
                Vec3::unit_z()
            };
            let color_raw = sh::eval(&s.sh, view_dir);
            let color = color_raw.map(|c| c.max(T::zero()).min(T::one()));

            Prepared {
                usable: true,
                bbox: footprint_bbox(camera, focal, p, u * s.scale_u, v * s.scale_v),
                p,
                u,
                v,
                n,
                np,
                pu,
                pv,
                big_u,
                big_v,
                sign,
                nf: n * sign,
                color,
                color_raw,
                opacity: s.opacity,
                view_dir,
                view_dist,
            }
        })
        .collect()
}

/// Conservative screen bounds of the truncated footprint: the projection of
/// the `±3σ` rectangle that contains it. `None` if nothing can be visible.
fn footprint_bbox<T: Real>(camera: &Camera<T>, focal: T, p: Vec3<T>, eu: Vec3<T>, ev: Vec3<T>) -> Option<[usize; 4]> {
    let k = T::lit(CUTOFF_SIGMA);
    let corners = [
        p + eu * k + ev * k,
        p + eu * k - ev * k,
        p - eu * k + ev * k,
        p - eu * k - ev * k,
    ];
    let max_depth = corners.iter().map(|c| -c.z).fold(T::neg_infinity(), T::max);
    let min_depth = corners.iter().map(|c| -c.z).fold(T::infinity(), T::min);
    if !(max_depth > camera.near) {
        return None;
    }
    let (w, h) = (camera.width, camera.height);
    if !(min_depth > camera.near * T::lit(1e-3)) {
        return Some([0, 0, w - 1, h - 1]);
    }
    let mut lo = (T::infinity(), T::infinity());
    let mut hi = (T::neg_infinity(), T::neg_infinity());
    for c in corners {
        let (x, y) = camera.project(c, focal);
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    // Pixel i has its center at i + 0.5; pad one pixel for rounding.
    let half = T::lit(0.5);
    let x0 = (lo.0 - half).ceil() - T::one();
    let y0 = (lo.1 - half).ceil() - T::one();
    let x1 = (hi.0 - half).floor() + T::one();
    let y1 = (hi.1 - half).floor() + T::one();
    let (wf, hf) = (T::of_usize(w), T::of_usize(h));
    if !(x1 >= T::zero() && y1 >= T::zero() && x0 < wf && y0 < hf) {
        return None;
    }
    let clamp = |v: T, hi: usize| v.max(T::zero()).min(T::of_usize(hi - 1)).to_usize().unwrap_or(0);
    Some([clamp(x0, w), clamp(y0, h), clamp(x1, w), clamp(y1, h)])
}
