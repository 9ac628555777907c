//! Loss assembly and the per-pixel adjoints fed to the rasterizer backward.
//!
//! All sums run in `f64` regardless of the engine scalar.

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::ggds::GgdsConfig;
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::{Camera, RenderAdjoint, RenderBuffers};
use crate::real::{cast, Real};

/// Smoothing of the gradient magnitude in the perceptual stand-in.
const GRAD_EPS: f64 = 1e-3;
const PYRAMID_LEVELS: usize = 3;
/// Differences this small get a zero subgradient, so roundoff in the DDIM
/// round trip does not turn into a full-size preconditioned step.
const DEAD_ZONE: f64 = 1e-9;

/// Loss terms of one step. `total` is the weighted sum of the terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub gen_l1: f64,
    pub perceptual: f64,
    pub normal: f64,
    pub disparity: f64,
    pub tv: f64,
    pub distortion: f64,
    pub normal_consistency: f64,
    /// `ω(t)` applied to the generation terms.
    pub omega: f64,
    pub total: f64,
    pub t: usize,
    pub view: usize,
}

impl LossReport {
    /// Recomputes the weighted sum of the stored terms.
    pub fn weighted_sum(&self, cfg: &GgdsConfig) -> f64 {
        self.omega * (self.gen_l1 + cfg.lambda_lpips * self.perceptual)
            + cfg.lambda_norm * self.normal
            + cfg.lambda_disp * self.disparity
            + cfg.lambda_tv * self.tv
            + cfg.lambda_distortion * self.distortion
            + cfg.lambda_normal_consistency * self.normal_consistency
    }

    pub fn is_finite(&self) -> bool {
        [
            self.gen_l1,
            self.perceptual,
            self.normal,
            self.disparity,
            self.tv,
            self.distortion,
            self.normal_consistency,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn sign(x: f64) -> f64 {
    if x > DEAD_ZONE {
        1.0
    } else if x < -DEAD_ZONE {
        -1.0
    } else {
        0.0
    }
}

/// Single-channel `f64` plane.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn zeros(w: usize, h: usize) -> Self {
        Self { w, h, v: vec![0.0; w * h] }
    }

    fn pool(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                out.v[y * w + x] = 0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]);
            }
        }
        out
    }

    /// Adjoint of [`Plane::pool`], added into `into`.
    fn pool_adjoint(&self, into: &mut Plane) {
        for y in 0..self.h {
            for x in 0..self.w {
                let g = 0.25 * self.v[y * self.w + x];
                let i = 2 * y * into.w + 2 * x;
                into.v[i] += g;
                into.v[i + 1] += g;
                into.v[i + into.w] += g;
                into.v[i + into.w + 1] += g;
            }
        }
    }

    /// Forward differences, zero on the last column/row.
    fn grad(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.w + x;
        let gx = if x + 1 < self.w { self.v[i + 1] - self.v[i] } else { 0.0 };
        let gy = if y + 1 < self.h { self.v[i + self.w] - self.v[i] } else { 0.0 };
        (gx, gy)
    }
}

fn channel_planes<T: Real>(w: usize, h: usize, pixels: impl Fn(usize) -> Vec3<T>) -> [Plane; 3] {
    let mut out = [Plane::zeros(w, h), Plane::zeros(w, h), Plane::zeros(w, h)];
    for i in 0..w * h {
        let p = pixels(i);
        for (c, plane) in out.iter_mut().enumerate() {
            plane.v[i] = p[c].as_f64();
        }
    }
    out
}

/// Mean L1 difference of smoothed gradient magnitudes at one level; adds the
/// gradient with respect to `a`, scaled by `weight`, into `ga`.
fn gradient_magnitude_l1(a: &Plane, b: &Plane, weight: f64, ga: &mut Plane) -> f64 {
    let n = (a.w * a.h) as f64;
    let eps2 = GRAD_EPS * GRAD_EPS;
    let mut sum = 0.0;
    for y in 0..a.h {
        for x in 0..a.w {
            let (ax, ay) = a.grad(x, y);
            let (bx, by) = b.grad(x, y);
            let ma = (ax * ax + ay * ay + eps2).sqrt();
            let mb = (bx * bx + by * by + eps2).sqrt();
            sum += (ma - mb).abs();
            let s = weight * sign(ma - mb) / n;
            if s == 0.0 {
                continue;
            }
            let i = y * a.w + x;
            if x + 1 < a.w {
                let g = s * ax / ma;
                ga.v[i + 1] += g;
                ga.v[i] -= g;
            }
            if y + 1 < a.h {
                let g = s * ay / ma;
                ga.v[i + a.w] += g;
                ga.v[i] -= g;
            }
        }
    }
    sum / n
}

/// Deterministic perceptual stand-in: mean over a three-level average-pooled
/// pyramid and the color channels of the L1 difference between smoothed
/// gradient magnitudes. Adds `weight · ∂/∂a` into `grad`.
fn perceptual(a: &[Plane; 3], b: &[Plane; 3], weight: f64, grad: &mut [Plane; 3]) -> f64 {
    let mut levels = 0;
    let mut probe = (a[0].w, a[0].h);
    while levels < PYRAMID_LEVELS && probe.0 >= 2 && probe.1 >= 2 {
        levels += 1;
        probe = (probe.0 / 2, probe.1 / 2);
    }
    if levels == 0 {
        return 0.0;
    }
    let scale = 1.0 / (levels * 3) as f64;
    let mut total = 0.0;
    for c in 0..3 {
        let mut pa = vec![a[c].clone()];
        let mut pb = vec![b[c].clone()];
        for l in 1..levels {
            pa.push(pa[l - 1].pool());
            pb.push(pb[l - 1].pool());
        }
        let mut grads: Vec<Plane> = pa.iter().map(|p| Plane::zeros(p.w, p.h)).collect();
        for l in 0..levels {
            total += scale * gradient_magnitude_l1(&pa[l], &pb[l], weight * scale, &mut grads[l]);
        }
        for l in (1..levels).rev() {
            let (lower, upper) = grads.split_at_mut(l);
            upper[0].pool_adjoint(&mut lower[l - 1]);
        }
        for (g, d) in grad[c].v.iter_mut().zip(&grads[0].v) {
            *g += d;
        }
    }
    total
}

/// Mean anisotropic total variation over pixels and channels.
fn total_variation(a: &[Plane; 3], weight: f64, grad: &mut [Plane; 3]) -> f64 {
    let (w, h) = (a[0].w, a[0].h);
    let n = (w * h * 3) as f64;
    let mut sum = 0.0;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (gx, gy) = a[c].grad(x, y);
                let i = y * w + x;
                if x + 1 < w {
                    sum += gx.abs();
                    let s = weight * sign(gx) / n;
                    grad[c].v[i + 1] += s;
                    grad[c].v[i] -= s;
                }
                if y + 1 < h {
                    sum += gy.abs();
                    let s = weight * sign(gy) / n;
                    grad[c].v[i + w] += s;
                    grad[c].v[i] -= s;
                }
            }
        }
    }
    sum / n
}

/// Normal consistency between the rendered normal and the normal of the
/// surface reconstructed from rendered disparity, `1 − N_Θ · n_D`, averaged
/// over pixels whose right and lower neighbors are covered.
fn normal_consistency<T: Real>(
    r: &RenderBuffers<T>,
    camera: &Camera<T>,
    weight: f64,
    g_disp: &mut [f64],
    g_normal: &mut [Vec3<f64>],
) -> f64 {
    let (w, h) = (r.width, r.height);
    if w < 2 || h < 2 {
        return 0.0;
    }
    let f = camera.focal().as_f64();
    let ray = |x: usize, y: usize| {
        Vec3::new(
            (x as f64 + 0.5 - 0.5 * w as f64) / f,
            -(y as f64 + 0.5 - 0.5 * h as f64) / f,
            -1.0,
        )
    };
    let mut terms = Vec::new();
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let (ic, ir, id) = (y * w + x, y * w + x + 1, (y + 1) * w + x);
            let d = [ic, ir, id].map(|i| r.disparity[i].as_f64());
            if d.iter().any(|&v| v <= 1e-12) {
                continue;
            }
            let rays = [ray(x, y), ray(x + 1, y), ray(x, y + 1)];
            let p = [0, 1, 2].map(|k| rays[k] * (1.0 / d[k]));
            let e1 = p[1] - p[0];
            let e2 = p[2] - p[0];
            let n = e2.cross(e1);
            let len = n.norm();
            if len <= 1e-20 {
                continue;
            }
            let nh = n * (1.0 / len);
            let s = if nh.dot(rays[0]) < 0.0 { 1.0 } else { -1.0 };
            let nt: Vec3<f64> = r.normal[ic].cast();
            terms.push((ic, ir, id, d, rays, e1, e2, nh, s, len, nt));
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let count = terms.len() as f64;
    let mut sum = 0.0;
    for (ic, ir, id, d, rays, e1, e2, nh, s, len, nt) in terms {
        sum += 1.0 - s * nt.dot(nh);
        if weight == 0.0 {
            continue;
        }
        let k = weight / count;
        g_normal[ic] -= nh * (s * k);
        // ∂(−s N·n̂)/∂n = −s (N − n̂(n̂·N)) / |n|
        let gn = (nt - nh * nh.dot(nt)) * (-s * k / len);
        let g_e1 = gn.cross(e2);
        let g_e2 = e1.cross(gn);
        let g_p = [-(g_e1 + g_e2), g_e1, g_e2];
        for (j, idx) in [ic, ir, id].into_iter().enumerate() {
            let g_z = g_p[j].dot(rays[j]);
            g_disp[idx] -= g_z / (d[j] * d[j]);
        }
    }
    sum / count
}

/// Evaluates every loss term for one step and the adjoint of the weighted
/// total with respect to the rendered buffers.
///
/// The generated image is a constant target. Geometry terms use the pixels
/// the proxy covers (`mesh.alpha ≥ 0.5`).
pub fn compute_losses<T: Real>(
    rendered: &RenderBuffers<T>,
    generated: &Image<T>,
    mesh: &RenderBuffers<T>,
    camera: &Camera<T>,
    t: usize,
    schedule: &DiffusionSchedule,
    cfg: &GgdsConfig,
) -> Result<(LossReport, RenderAdjoint<T>)> {
    let (w, h) = (rendered.width, rendered.height);
    if generated.width != w || generated.height != h || generated.channels != 3 {
        return Err(Error::invalid(format!(
            "generated image {}x{}x{} does not match {w}x{h}x3 render",
            generated.width, generated.height, generated.channels
        )));
    }
    if mesh.width != w || mesh.height != h {
        return Err(Error::invalid(format!(
            "mesh buffers {}x{} do not match {w}x{h} render",
            mesh.width, mesh.height
        )));
    }
    if camera.width != w || camera.height != h {
        return Err(Error::invalid("camera resolution does not match the render"));
    }
    schedule.check_level(t)?;
    let omega = cfg.omega.weight(schedule.alpha_bar(t));
    let npx = w * h;

    let a = channel_planes(w, h, |i| rendered.color[i]);
    let b = channel_planes(w, h, |i| Vec3::new(generated.data[3 * i], generated.data[3 * i + 1], generated.data[3 * i + 2]));
    let mut gc = [Plane::zeros(w, h), Plane::zeros(w, h), Plane::zeros(w, h)];

    let mut gen_l1 = 0.0;
    let l1_scale = omega / (npx * 3) as f64;
    for c in 0..3 {
        for i in 0..npx {
            let d = a[c].v[i] - b[c].v[i];
            gen_l1 += d.abs();
            gc[c].v[i] += l1_scale * sign(d);
        }
    }
    gen_l1 /= (npx * 3) as f64;
    let perc = perceptual(&a, &b, omega * cfg.lambda_lpips, &mut gc);
    let tv = total_variation(&a, cfg.lambda_tv, &mut gc);

    let mut g_disp = vec![0.0; npx];
    let mut g_normal = vec![Vec3::<f64>::zero(); npx];
    let covered: Vec<usize> = (0..npx).filter(|&i| mesh.alpha[i] >= T::lit(0.5)).collect();
    let (mut normal, mut disparity) = (0.0, 0.0);
    if !covered.is_empty() {
        let m = covered.len() as f64;
        for &i in &covered {
            let dn: Vec3<f64> = (rendered.normal[i] - mesh.normal[i]).cast();
            normal += dn.x.abs() + dn.y.abs() + dn.z.abs();
            g_normal[i] += dn.map(sign) * (cfg.lambda_norm / (3.0 * m));
            let dd = (rendered.disparity[i] - mesh.disparity[i]).as_f64();
            disparity += dd.abs();
            g_disp[i] += sign(dd) * cfg.lambda_disp / m;
        }
        normal /= 3.0 * m;
        disparity /= m;
    }

    let distortion = rendered.distortion.iter().map(|v| v.as_f64()).sum::<f64>() / npx as f64;
    let nc = normal_consistency(rendered, camera, cfg.lambda_normal_consistency, &mut g_disp, &mut g_normal);

    let mut report = LossReport {
        gen_l1,
        perceptual: perc,
        normal,
        disparity,
        tv,
        distortion,
        normal_consistency: nc,
        omega,
        total: 0.0,
        t,
        view: 0,
    };
    report.total = report.weighted_sum(cfg);

    let mut adj = RenderAdjoint::zeros(w, h);
    let g_dist: T = cast(cfg.lambda_distortion / npx as f64);
    for i in 0..npx {
        adj.color[i] = Vec3::new(cast(gc[0].v[i]), cast(gc[1].v[i]), cast(gc[2].v[i]));
        adj.disparity[i] = cast(g_disp[i]);
        adj.normal[i] = g_normal[i].cast();
        adj.distortion[i] = g_dist;
    }
    Ok((report, adj))
}
