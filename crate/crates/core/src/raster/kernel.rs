//! Per-pixel ray–splat evaluation and front-to-back compositing. Both the
//! tiled renderer and the exhaustive reference run exactly this code.

use crate::math::Vec3;
use crate::raster::prepare::{Prepared, CUTOFF_SIGMA};
use crate::raster::Camera;
use crate::real::Real;
use crate::scene::EnvironmentMap;

/// Environment radiance behind a pixel. A constant map skips the lookup.
pub(crate) struct Background<'a, T> {
    env: &'a EnvironmentMap<T>,
    constant: Option<Vec3<T>>,
}

impl<'a, T: Real> Background<'a, T> {
    pub fn new(env: &'a EnvironmentMap<T>) -> Self {
        Self {
            env,
            constant: env.constant_color(),
        }
    }

    /// Radiance along camera-space ray `d`.
    #[inline]
    pub fn along(&self, camera: &Camera<T>, d: Vec3<T>) -> Vec3<T> {
        match self.constant {
            Some(c) => c,
            None => self.env.query_unchecked(camera.camera_to_world_dir(d)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Hit<T> {
    /// Splat index in the scene.
    pub idx: u32,
    /// Slot in the caller's accumulation table.
    pub slot: u32,
    pub lambda: T,
    /// Order-preserving integer image of `lambda` (which is positive).
    pub key: u64,
    pub a: T,
    pub b: T,
    pub den: T,
    pub opacity: T,
    /// Gaussian falloff, filled in once the hit is known to be composited.
    pub g: T,
}

impl<T: Real> Hit<T> {
    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    pub fn new(idx: u32, slot: u32, lambda: T, a: T, b: T, den: T, opacity: T) -> Self {
        Self {
            idx,
            slot,
            lambda,
            key: lambda.as_f64().to_bits(),
            a,
            b,
            den,
            opacity,
            g: T::zero(),
        }
    }

    /// Gaussian falloff at the hit, evaluated only for hits that get composited.
    #[inline(always)]
    pub fn gauss(&self) -> T {
        (-T::lit(0.5) * (self.a * self.a + self.b * self.b)).exp()
    }
}

#[inline(always)]
pub(crate) fn intersect<T: Real>(sp: &Prepared<T>, d: Vec3<T>, near: T, far: T) -> Option<(T, T, T, T)> {
    intersect_plane(sp.n, sp.np, sp.big_u, sp.big_v, d, near, far)
}

#[inline(always)]
fn intersect_plane<T: Real>(
    n: Vec3<T>,
    np: T,
    big_u: Vec3<T>,
    big_v: Vec3<T>,
    d: Vec3<T>,
    near: T,
    far: T,
) -> Option<(T, T, T, T)> {
    let den = d.dot(n);
    let (du, dv) = (d.dot(big_u), d.dot(big_v));
    // The cutoff `a² + b² ≤ c²` with `a = du/den`, `b = dv/den`, tested
    // before dividing since most candidates fail it.
    if du * du + dv * dv > T::lit(CUTOFF_SIGMA * CUTOFF_SIGMA) * den * den || den.abs() <= T::lit(1e-9) {
        return None;
    }
    let inv = T::one() / den;
    let lambda = np * inv;
    if !(lambda > near && lambda < far) {
        return None;
    }
    let (a, b) = (du * inv, dv * inv);
    Some((lambda, a, b, den))
}

/// Compact copy of the fields a tile needs to intersect one splat, kept
/// contiguous so the per-pixel loop stays in cache.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Candidate<T> {
    pub n: Vec3<T>,
    pub np: T,
    pub big_u: Vec3<T>,
    pub big_v: Vec3<T>,
    pub opacity: T,
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
    pub idx: u32,
    pub slot: u32,
}

impl<T: Real> Candidate<T> {
    #[inline(always)]
    pub fn hit(&self, d: Vec3<T>, near: T, far: T) -> Option<Hit<T>> {
        intersect_plane(self.n, self.np, self.big_u, self.big_v, d, near, far)
            .map(|(lambda, a, b, den)| Hit::new(self.idx, self.slot, lambda, a, b, den, self.opacity))
    }
}

/// Builds the candidates of one tile bin. `dense` stores the scene index as
/// the slot instead of the bin position.
pub(crate) fn tile_candidates<T: Real>(bin: &[u32], prep: &[Prepared<T>], dense: bool) -> Vec<Candidate<T>> {
    bin.iter()
        .enumerate()
        .filter_map(|(slot, &idx)| {
            let sp = &prep[idx as usize];
            let [x0, y0, x1, y1] = sp.bbox?;
            Some(Candidate {
                n: sp.n,
                np: sp.np,
                big_u: sp.big_u,
                big_v: sp.big_v,
                opacity: sp.opacity,
                x0: x0 as u32,
                x1: x1 as u32,
                y0: y0 as u32,
                y1: y1 as u32,
                idx,
                slot: if dense { idx } else { slot as u32 },
            })
        })
        .collect()
}

/// Pixel rays of one image row as an affine function of the column:
/// `d(px) = (sx·px + x_off, y, −1)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RowRay {
    pub sx: f64,
    pub x_off: f64,
    pub y: f64,
}

impl RowRay {
    pub fn new(width: usize, height: usize, focal: f64, py: usize) -> Self {
        Self {
            sx: 1.0 / focal,
            x_off: (0.5 - 0.5 * width as f64) / focal,
            y: -(py as f64 + 0.5 - 0.5 * height as f64) / focal,
        }
    }
}

/// Relative slack on the cutoff test, far above its rounding error.
const SPAN_SLACK: f64 = 1e-3;

/// Conservative column span `[lo, hi]` of the cutoff ellipse of `c` along
/// row `ray`, or `None` if no column of the row can pass the cutoff test.
/// The cutoff `du² + dv² ≤ c²·den²` is quadratic in the column; it is
/// relaxed by `SPAN_SLACK` times its magnitude, which dwarfs rounding, so
/// the exact per-pixel test never accepts a column outside the span.
#[inline]
fn row_span<T: Real>(c: &Candidate<T>, ray: RowRay) -> Option<(f64, f64)> {
    let affine = |w: Vec3<T>| {
        let (x, y, z) = (w.x.as_f64(), w.y.as_f64(), w.z.as_f64());
        (x * ray.sx, x * ray.x_off + y * ray.y - z)
    };
    let (au, bu) = affine(c.big_u);
    let (av, bv) = affine(c.big_v);
    let (an, bn) = affine(c.n);
    let k = CUTOFF_SIGMA * CUTOFF_SIGMA;
    let s = SPAN_SLACK;
    let (uv2, uvb, uvc) = (au * au + av * av, au * bu + av * bv, bu * bu + bv * bv);
    let (n2, nb, nc) = (k * an * an, k * an * bn, k * bn * bn);
    // q − s·S with q = du² + dv² − c²den² and S = du² + dv² + c²den².
    let qa = (1.0 - s) * uv2 - (1.0 + s) * n2;
    let qb = 2.0 * ((1.0 - s) * uvb - (1.0 + s) * nb);
    let qc = (1.0 - s) * uvc - (1.0 + s) * nc;
    if !(qa > 1e-12 * (uv2 + n2)) {
        // Open or degenerate conic: no finite span, keep the bounding box.
        return Some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let r = disc.sqrt();
    let h = -0.5 * (qb + r.copysign(qb));
    let (r0, r1) = if h != 0.0 { (h / qa, qc / h) } else { (0.0, 0.0) };
    let (lo, hi) = (r0.min(r1), r0.max(r1));
    if lo.is_finite() && hi.is_finite() {
        Some((lo, hi))
    } else {
        Some((f64::NEG_INFINITY, f64::INFINITY))
    }
}

/// Keeps the candidates whose bounds span row `py` and whose cutoff ellipse
/// can reach a column in `cols`, with `x0..=x1` narrowed to that row.
#[inline]
pub(crate) fn row_candidates<T: Real>(
    tile: &[Candidate<T>],
    py: usize,
    ray: RowRay,
    cols: (usize, usize),
    out: &mut Vec<Candidate<T>>,
) {
    let py = py as u32;
    out.clear();
    let (t0, t1) = (cols.0 as f64, cols.1 as f64 - 1.0);
    for c in tile {
        if !(c.y0 <= py && py <= c.y1) {
            continue;
        }
        let Some((lo, hi)) = row_span(c, ray) else {
            continue;
        };
        let lo = lo.max(t0).max(c.x0 as f64);
        let hi = hi.min(t1).min(c.x1 as f64);
        if lo > hi {
            continue;
        }
        let mut narrowed = *c;
        narrowed.x0 = lo.floor() as u32;
        narrowed.x1 = hi.ceil() as u32;
        out.push(narrowed);
    }
}

/// Hits of pixel column `px` sorted front to back, truncated after the hit
/// that drops transmittance to `transmittance_min`: exactly the prefix
/// [`composite`] consumes. Falloff weights are evaluated for that prefix only.
/// Sorting runs on packed `(depth, index, position)` keys, so the hits
/// themselves move once.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn sorted_hits<T: Real>(
    row: &[Candidate<T>],
    px: usize,
    d: Vec3<T>,
    near: T,
    far: T,
    transmittance_min: T,
    scratch: &mut HitScratch<T>,
    hits: &mut Vec<Hit<T>>,
) {
    let px = px as u32;
    let one = T::one();
    let HitScratch { pending, order } = scratch;
    pending.clear();
    order.clear();
    hits.clear();
    for c in row {
        if c.x0 <= px && px <= c.x1 {
            if let Some(h) = c.hit(d, near, far) {
                order.push(((h.key as u128) << 64) | ((h.idx as u128) << 32) | pending.len() as u128);
                pending.push(h);
            }
        }
    }
    order.sort_unstable();
    let mut trans = one;
    for &k in order.iter() {
        let mut h = pending[k as u32 as usize];
        h.g = h.gauss();
        trans = trans * (one - h.opacity * h.g);
        hits.push(h);
        if trans <= transmittance_min {
            return;
        }
    }
}

/// Reusable buffers of [`sorted_hits`].
#[derive(Debug, Default)]
pub(crate) struct HitScratch<T> {
    pending: Vec<Hit<T>>,
    order: Vec<u128>,
}

impl<T> HitScratch<T> {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            pending: Vec::with_capacity(n),
            order: Vec::with_capacity(n),
        }
    }
}

/// Sorts hits by depth, ties by index.
#[inline]
pub(crate) fn sort_hits<T: Real>(hits: &mut [Hit<T>]) {
    hits.sort_unstable_by_key(|h| (h.key, h.idx));
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PixelOut<T> {
    pub color: Vec3<T>,
    pub disparity: T,
    pub normal: Vec3<T>,
    pub alpha: T,
    pub distortion: T,
}

/// Shading inputs of one splat, indexed by [`Hit::slot`].
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Look<T> {
    pub color: Vec3<T>,
    pub nf: Vec3<T>,
}

impl<T: Real> Look<T> {
    pub fn of(sp: &Prepared<T>) -> Self {
        Self {
            color: sp.color,
            nf: sp.nf,
        }
    }
}

/// Looks of one tile bin, by bin position.
pub(crate) fn tile_looks<T: Real>(bin: &[u32], prep: &[Prepared<T>]) -> Vec<Look<T>> {
    bin.iter().map(|&idx| Look::of(&prep[idx as usize])).collect()
}

/// Composites sorted hits; `env` is only evaluated when light is left over.
#[inline]
pub(crate) fn composite<T: Real>(
    hits: &[Hit<T>],
    looks: &[Look<T>],
    transmittance_min: T,
    env: impl FnOnce() -> Vec3<T>,
) -> PixelOut<T> {
    let one = T::one();
    let two = T::lit(2.0);
    let mut trans = one;
    let mut color = Vec3::zero();
    let mut disparity = T::zero();
    let mut m = Vec3::zero();
    let mut distortion = T::zero();
    let mut acc_w = T::zero();
    let mut acc_wz = T::zero();
    for h in hits {
        let sp = &looks[h.slot as usize];
        let alpha = h.opacity * h.g;
        let w = trans * alpha;
        color += sp.color * w;
        disparity += w / h.lambda;
        m += sp.nf * w;
        distortion += two * w * (h.lambda * acc_w - acc_wz);
        acc_w += w;
        acc_wz += w * h.lambda;
        trans = trans * (one - alpha);
        if trans <= transmittance_min {
            break;
        }
    }
    if trans > T::zero() {
        color += env() * trans;
    }
    let normal = m.try_normalize().unwrap_or(Vec3::zero());
    PixelOut {
        color: color.map(|c| c.max(T::zero()).min(one)),
        disparity,
        normal,
        alpha: one - trans,
        distortion,
    }
}
