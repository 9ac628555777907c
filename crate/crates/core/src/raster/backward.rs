//! Reverse-mode pass of the splat rasterizer.
//!
//! Per pixel the hit list is rebuilt exactly as in the forward pass. The
//! gradient with respect to each hit's alpha uses the back-to-front
//! recursion `S ← αq + (1-α)S`, which needs no division by `1-α` and so stays
//! exact for fully opaque splats.

use std::ops::AddAssign;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{orthonormalize_pair_backward, Vec3};
use crate::raster::kernel::{row_candidates, sorted_hits, tile_candidates, Background, Hit, HitScratch, RowRay};
use crate::raster::prepare::{prepare, Prepared};
use crate::raster::{validate_options, Camera, RenderOptions, TileGrid};
use crate::real::Real;
use crate::scene::{sh, SceneModel};

/// Loss gradients with respect to each rendered buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderAdjoint<T> {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Vec3<T>>,
    pub disparity: Vec<T>,
    pub normal: Vec<Vec3<T>>,
    pub distortion: Vec<T>,
}

impl<T: Real> RenderAdjoint<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![Vec3::zero(); n],
            disparity: vec![T::zero(); n],
            normal: vec![Vec3::zero(); n],
            distortion: vec![T::zero(); n],
        }
    }

    fn validate(&self, camera: &Camera<T>) -> Result<()> {
        let n = camera.pixel_count();
        let sizes_ok = self.color.len() == n
            && self.disparity.len() == n
            && self.normal.len() == n
            && self.distortion.len() == n;
        if self.width != camera.width || self.height != camera.height || !sizes_ok {
            return Err(Error::invalid(format!(
                "adjoint buffers are {}x{}, camera renders {}x{}",
                self.width, self.height, camera.width, camera.height
            )));
        }
        Ok(())
    }
}

/// Partial derivatives of a scalar loss with respect to one splat.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatGrad<T> {
    pub center: Vec3<T>,
    pub tangent_u: Vec3<T>,
    pub tangent_v: Vec3<T>,
    pub scale_u: T,
    pub scale_v: T,
    pub opacity: T,
    pub sh: Vec<Vec3<T>>,
}

impl<T: Real> SplatGrad<T> {
    pub fn zeros(sh_count: usize) -> Self {
        Self {
            sh: vec![Vec3::zero(); sh_count],
            ..Default::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite()
            && self.tangent_u.is_finite()
            && self.tangent_v.is_finite()
            && self.scale_u.is_finite()
            && self.scale_v.is_finite()
            && self.opacity.is_finite()
            && self.sh.iter().all(|c| c.is_finite())
    }
}

/// Same cardinality and order as the scene's splat list.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients<T> {
    pub grads: Vec<SplatGrad<T>>,
}

impl<T: Real> SplatGradients<T> {
    pub fn zeros(count: usize, sh_count: usize) -> Self {
        Self {
            grads: vec![SplatGrad::zeros(sh_count); count],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Gradient accumulated over pixels for one splat, in the camera-space
/// parametrization of [`Prepared`].
#[derive(Clone, Copy, Debug, Default)]
struct Accum<T> {
    big_u: Vec3<T>,
    big_v: Vec3<T>,
    n: Vec3<T>,
    np: T,
    nf: Vec3<T>,
    color: Vec3<T>,
    opacity: T,
}

impl<T: Real> AddAssign for Accum<T> {
    fn add_assign(&mut self, o: Self) {
        self.big_u += o.big_u;
        self.big_v += o.big_v;
        self.n += o.n;
        self.np += o.np;
        self.nf += o.nf;
        self.color += o.color;
        self.opacity += o.opacity;
    }
}

#[derive(Clone, Copy, Debug)]
struct Record<T> {
    alpha: T,
    trans: T,
    w: T,
    g: T,
}

struct PixelAdjoint<T> {
    color: Vec3<T>,
    disparity: T,
    normal: Vec3<T>,
    distortion: T,
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel<T: Real>(
    hits: &[Hit<T>],
    prep: &[Prepared<T>],
    d: Vec3<T>,
    env: Vec3<T>,
    adj: &PixelAdjoint<T>,
    transmittance_min: T,
    records: &mut Vec<Record<T>>,
    accum: &mut [Accum<T>],
) {
    let one = T::one();
    let two = T::lit(2.0);
    records.clear();
    let mut trans = one;
    let mut color = Vec3::zero();
    let mut m = Vec3::zero();
    let mut total_w = T::zero();
    let mut total_wz = T::zero();
    for h in hits {
        let sp = &prep[h.idx as usize];
        let g = h.g;
        let alpha = h.opacity * g;
        let w = trans * alpha;
        records.push(Record { alpha, trans, w, g });
        color += sp.color * w;
        m += sp.nf * w;
        total_w += w;
        total_wz += w * h.lambda;
        trans = trans * (one - alpha);
        if trans <= transmittance_min {
            break;
        }
    }
    let used = records.len();
    if used == 0 {
        return;
    }
    let raw = color + env * trans;
    let mask = |c: T, g: T| if c < T::zero() || c > one { T::zero() } else { g };
    let g_color = Vec3::new(
        mask(raw.x, adj.color.x),
        mask(raw.y, adj.color.y),
        mask(raw.z, adj.color.z),
    );
    let m_len = m.norm();
    let g_m = if m_len > T::zero() {
        let nrm = m / m_len;
        (adj.normal - nrm * adj.normal.dot(nrm)) / m_len
    } else {
        Vec3::zero()
    };

    // dL/dw_k for every used hit, stored in place of q.
    let mut q = Vec::with_capacity(used);
    let mut dlambda = Vec::with_capacity(used);
    let mut prefix_w = T::zero();
    let mut prefix_wz = T::zero();
    for (h, r) in hits.iter().zip(records.iter()) {
        let sp = &prep[h.idx as usize];
        let z = h.lambda;
        let suffix_w = total_w - prefix_w - r.w;
        let suffix_wz = total_wz - prefix_wz - r.w * z;
        let dist_w = two * (z * prefix_w - prefix_wz + suffix_wz - z * suffix_w);
        let dist_z = two * r.w * (prefix_w - suffix_w);
        q.push(g_color.dot(sp.color) + adj.disparity / z + g_m.dot(sp.nf) + adj.distortion * dist_w);
        dlambda.push(-r.w * adj.disparity / (z * z) + adj.distortion * dist_z);
        prefix_w += r.w;
        prefix_wz += r.w * z;
    }

    let mut behind = g_color.dot(env);
    for k in (0..used).rev() {
        let h = &hits[k];
        let r = records[k];
        let sp = &prep[h.idx as usize];
        let g_alpha = r.trans * (q[k] - behind);
        behind = r.alpha * q[k] + (one - r.alpha) * behind;

        let acc = &mut accum[h.slot as usize];
        acc.color += g_color * r.w;
        acc.nf += g_m * r.w;
        acc.opacity += g_alpha * r.g;
        let g_g = g_alpha * sp.opacity;
        let ga = -g_g * h.a * r.g;
        let gb = -g_g * h.b * r.g;
        let g_lambda = dlambda[k];
        let inv = one / h.den;
        let g_den = -(ga * h.a + gb * h.b + g_lambda * h.lambda) * inv;
        acc.big_u += d * (ga * inv);
        acc.big_v += d * (gb * inv);
        acc.n += d * g_den;
        acc.np += g_lambda * inv;
    }
}

/// Chains one splat's camera-space accumulator back to its raw parameters.
fn finish_splat<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    idx: usize,
    sp: &Prepared<T>,
    acc: &Accum<T>,
) -> SplatGrad<T> {
    let s = &scene.splats[idx];
    let mut out = SplatGrad::zeros(s.sh.len());
    if !sp.usable {
        return out;
    }
    let mut g_n = acc.n + acc.nf * sp.sign;
    let mut g_np = acc.np;
    let mut g_u = Vec3::zero();
    let mut g_v = Vec3::zero();
    let mut g_p = Vec3::zero();

    let gwu = acc.big_u / s.scale_u;
    out.scale_u = -acc.big_u.dot(sp.big_u) / s.scale_u;
    g_np += gwu.dot(sp.u);
    g_u += gwu * sp.np;
    let g_pu = -gwu.dot(sp.n);
    g_n -= gwu * sp.pu;

    let gwv = acc.big_v / s.scale_v;
    out.scale_v = -acc.big_v.dot(sp.big_v) / s.scale_v;
    g_np += gwv.dot(sp.v);
    g_v += gwv * sp.np;
    let g_pv = -gwv.dot(sp.n);
    g_n -= gwv * sp.pv;

    g_n += sp.p * g_np;
    g_p += sp.n * g_np;
    g_p += sp.u * g_pu + sp.v * g_pv;
    g_u += sp.p * g_pu;
    g_v += sp.p * g_pv;

    g_u += sp.v.cross(g_n);
    g_v += g_n.cross(sp.u);

    let r = &camera.rotation;
    let (g_tu, g_tv) = orthonormalize_pair_backward(s.tangent_u, s.tangent_v, r.tmul_vec(g_u), r.tmul_vec(g_v));
    out.tangent_u = g_tu;
    out.tangent_v = g_tv;
    out.center = r.tmul_vec(g_p);
    out.opacity = acc.opacity;

    let keep = |raw: T, g: T| if raw < T::zero() || raw > T::one() { T::zero() } else { g };
    let g_c = Vec3::new(
        keep(sp.color_raw.x, acc.color.x),
        keep(sp.color_raw.y, acc.color.y),
        keep(sp.color_raw.z, acc.color.z),
    );
    if s.sh.len() == 1 {
        out.sh[0] = g_c;
    } else {
        let degree = sh::degree_for_count(s.sh.len()).unwrap_or(0);
        let basis = sh::basis(sp.view_dir, degree);
        let mut g_dir = Vec3::zero();
        for (k, b) in basis.iter().enumerate() {
            out.sh[k] = g_c * b.v;
            g_dir += b.d * g_c.dot(s.sh[k]);
        }
        if sp.view_dist > T::zero() {
            out.center += (g_dir - sp.view_dir * g_dir.dot(sp.view_dir)) / sp.view_dist;
        }
    }
    out
}

/// Analytic gradient of `Σ_pixels ⟨adjoint, buffers⟩` with respect to every
/// splat parameter, consistent with [`super::render`] under the same options.
pub fn backward<T: Real>(
    scene: &SceneModel<T>,
    camera: &Camera<T>,
    adjoint: &RenderAdjoint<T>,
    opts: &RenderOptions<T>,
) -> Result<SplatGradients<T>> {
    camera.validate()?;
    validate_options(opts)?;
    adjoint.validate(camera)?;
    let (w, h) = (camera.width, camera.height);
    let prep = prepare(scene, camera);
    let grid = TileGrid::new(w, h, opts.tile_size);
    let bins = grid.bin(&prep);
    let focal = camera.focal();
    let sky = Background::new(&scene.env);

    let tile_pass = |tile: usize, accum: &mut [Accum<T>], dense: bool| {
        let (x0, x1, y0, y1) = grid.pixels(tile, w, h);
        let cands = tile_candidates(&bins[tile], &prep, dense);
        let mut row = Vec::with_capacity(cands.len());
        let mut hits = Vec::with_capacity(cands.len());
        let mut scratch = HitScratch::with_capacity(cands.len());
        let mut records = Vec::with_capacity(cands.len());
        for py in y0..y1 {
            let ray = RowRay::new(w, h, focal.as_f64(), py);
            row_candidates(&cands, py, ray, (x0, x1), &mut row);
            for px in x0..x1 {
                let i = py * w + px;
                let d = camera.pixel_ray(px, py, focal);
                let tmin = opts.transmittance_min;
                sorted_hits(&row, px, d, camera.near, camera.far, tmin, &mut scratch, &mut hits);
                if hits.is_empty() {
                    continue;
                }
                let env = sky.along(camera, d);
                let adj = PixelAdjoint {
                    color: adjoint.color[i],
                    disparity: adjoint.disparity[i],
                    normal: adjoint.normal[i],
                    distortion: adjoint.distortion[i],
                };
                backward_pixel(&hits, &prep, d, env, &adj, opts.transmittance_min, &mut records, accum);
            }
        }
    };

    let n = scene.splats.len();
    let accum: Vec<Accum<T>> = if opts.deterministic {
        let per_tile: Vec<Vec<Accum<T>>> = (0..grid.count())
            .into_par_iter()
            .map(|tile| {
                let mut local = vec![Accum::default(); bins[tile].len()];
                tile_pass(tile, &mut local, false);
                local
            })
            .collect();
        let mut total = vec![Accum::default(); n];
        for (tile, local) in per_tile.into_iter().enumerate() {
            for (slot, a) in local.into_iter().enumerate() {
                total[bins[tile][slot] as usize] += a;
            }
        }
        total
    } else {
        (0..grid.count())
            .into_par_iter()
            .fold(
                || vec![Accum::default(); n],
                |mut acc, tile| {
                    tile_pass(tile, &mut acc, true);
                    acc
                },
            )
            .reduce(
                || vec![Accum::default(); n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    };

    let grads = (0..n)
        .into_par_iter()
        .map(|i| finish_splat(scene, camera, i, &prep[i], &accum[i]))
        .collect();
    Ok(SplatGradients { grads })
}
