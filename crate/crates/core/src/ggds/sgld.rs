//! Langevin parameter updates and the optional Adam preconditioner.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ggds::GgdsConfig;
use crate::math::Vec3;
use crate::raster::{SplatGrad, SplatGradients};
use crate::real::{cast, Real};
use crate::scene::{SceneModel, Splat};

/// Step sizes and noise of one update, already resolved for the step index
/// and scene extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgldParams {
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub tangent: f64,
    pub color: f64,
    /// Standard deviation of the per-parameter Gaussian perturbation.
    pub noise: f64,
    /// `Θ + ξ∇L` instead of `Θ − ξ∇L`.
    pub ascend: bool,
    pub min_scale: f64,
}

impl SgldParams {
    pub fn from_config(cfg: &GgdsConfig, k: usize, extent: f64) -> Self {
        Self {
            position: cfg.lr.position * extent,
            opacity: cfg.lr.opacity,
            scale: cfg.lr.scale,
            tangent: cfg.lr.tangent,
            color: cfg.lr.color,
            noise: cfg.noise_at(k),
            ascend: cfg.ascend,
            min_scale: cfg.min_scale,
        }
    }
}

/// Mutable views of every scalar of a gradient record, in a fixed order.
fn grad_params<T>(g: &mut SplatGrad<T>) -> Vec<&mut T> {
    let mut v: Vec<&mut T> = Vec::with_capacity(12 + 3 * g.sh.len());
    let [cx, cy, cz] = vec3_mut(&mut g.center);
    let [ux, uy, uz] = vec3_mut(&mut g.tangent_u);
    let [vx, vy, vz] = vec3_mut(&mut g.tangent_v);
    v.extend([cx, cy, cz, ux, uy, uz, vx, vy, vz, &mut g.scale_u, &mut g.scale_v, &mut g.opacity]);
    for c in g.sh.iter_mut() {
        v.extend(vec3_mut(c));
    }
    v
}

fn vec3_mut<T>(v: &mut Vec3<T>) -> [&mut T; 3] {
    [&mut v.x, &mut v.y, &mut v.z]
}

/// Splat parameters in the same order as [`grad_params`].
fn splat_params<T>(s: &mut Splat<T>) -> Vec<&mut T> {
    let mut v: Vec<&mut T> = Vec::with_capacity(12 + 3 * s.sh.len());
    v.extend(vec3_mut(&mut s.center));
    v.extend(vec3_mut(&mut s.tangent_u));
    v.extend(vec3_mut(&mut s.tangent_v));
    v.extend([&mut s.scale_u, &mut s.scale_v, &mut s.opacity]);
    for c in s.sh.iter_mut() {
        v.extend(vec3_mut(c));
    }
    v
}

fn step_size(p: &SgldParams, index: usize) -> f64 {
    match index {
        0..=2 => p.position,
        3..=8 => p.tangent,
        9 | 10 => p.scale,
        11 => p.opacity,
        _ => p.color,
    }
}

/// Outcome of one [`sgld_update`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SgldOutcome {
    /// Splats left untouched because their gradient was not finite.
    pub skipped: usize,
}

/// `Θ ← Θ − ξ·∇L + λ_noise·ε` per parameter, then projection back onto the
/// splat invariants. Splats whose update is exactly zero are left bit-for-bit
/// unchanged.
pub fn sgld_update<T: Real, R: Rng>(
    scene: &mut SceneModel<T>,
    grads: &SplatGradients<T>,
    params: &SgldParams,
    rng: &mut R,
) -> Result<SgldOutcome> {
    if grads.len() != scene.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} splats",
            grads.len(),
            scene.len()
        )));
    }
    let sign = if params.ascend { 1.0 } else { -1.0 };
    let min_scale: T = cast(params.min_scale);
    let mut out = SgldOutcome::default();
    let mut grads = grads.grads.clone();
    for (splat, g) in scene.splats.iter_mut().zip(grads.iter_mut()) {
        if !g.is_finite() || g.sh.len() != splat.sh.len() {
            out.skipped += 1;
            continue;
        }
        let mut changed = false;
        for (i, (p, gv)) in splat_params(splat).into_iter().zip(grad_params(g)).enumerate() {
            let mut delta = sign * step_size(params, i) * gv.as_f64();
            if params.noise > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                delta += params.noise * e;
            }
            if delta != 0.0 {
                *p += cast::<f64, T>(delta);
                changed = true;
            }
        }
        if changed {
            splat.project(min_scale);
        }
    }
    Ok(out)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Per-parameter Adam moments, kept aligned with the splat list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<SplatGrad<T>>,
    v: Vec<SplatGrad<T>>,
    steps: i32,
}

impl<T: Real> AdamState<T> {
    pub fn new(count: usize, sh_count: usize) -> Self {
        Self {
            m: vec![SplatGrad::zeros(sh_count); count],
            v: vec![SplatGrad::zeros(sh_count); count],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Updates the moments and returns the bias-corrected direction
    /// `m̂ / (√v̂ + ε)`. Non-finite gradients pass through untouched.
    pub fn precondition(&mut self, grads: &SplatGradients<T>) -> Result<SplatGradients<T>> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} optimizer slots",
                grads.len(),
                self.m.len()
            )));
        }
        self.steps += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
        let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
        let mut out = grads.clone();
        for ((g, m), v) in out.grads.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            if !g.is_finite() {
                continue;
            }
            for ((gp, mp), vp) in grad_params(g).into_iter().zip(grad_params(m)).zip(grad_params(v)) {
                let gv = gp.as_f64();
                let mn = ADAM_BETA1 * mp.as_f64() + (1.0 - ADAM_BETA1) * gv;
                let vn = ADAM_BETA2 * vp.as_f64() + (1.0 - ADAM_BETA2) * gv * gv;
                *mp = cast(mn);
                *vp = cast(vn);
                *gp = cast((mn / c1) / ((vn / c2).sqrt() + ADAM_EPS));
            }
        }
        Ok(out)
    }

    /// Rebuilds the slots after density control: new slot `i` copies the
    /// moments of old slot `sources[i]`.
    pub fn remap(&mut self, sources: &[usize]) {
        self.m = sources.iter().map(|&s| self.m[s].clone()).collect();
        self.v = sources.iter().map(|&s| self.v[s].clone()).collect();
    }
}
