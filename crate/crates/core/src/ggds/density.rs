//! Density control: pruning faint or vanishing splats and splitting large
//! splats that keep receiving strong positional gradients.

use crate::ggds::GgdsConfig;
use crate::raster::{Camera, SplatGradients, CUTOFF_SIGMA};
use crate::real::{cast, Real};
use crate::scene::SceneModel;

/// Per-splat statistics gathered between two density-control passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    /// Sum of `|∂L/∂center|` over the steps where the splat was in view.
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
    /// Largest projected cutoff radius in pixels observed while in view.
    pub max_radius_px: Vec<f64>,
}

impl DensifyStats {
    pub fn new(count: usize) -> Self {
        Self {
            grad_sum: vec![0.0; count],
            views: vec![0; count],
            max_radius_px: vec![0.0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Records one step: splats whose center projects into the image count
    /// as viewed.
    pub fn observe<T: Real>(&mut self, scene: &SceneModel<T>, grads: &SplatGradients<T>, camera: &Camera<T>) {
        let focal = camera.focal().as_f64();
        let (w, h) = (camera.width as f64, camera.height as f64);
        let near = camera.near.as_f64();
        for (i, (s, g)) in scene.splats.iter().zip(&grads.grads).enumerate() {
            let pc = camera.world_to_camera(s.center).cast::<f64>();
            let depth = -pc.z;
            if depth <= near {
                continue;
            }
            let (x, y) = (focal * pc.x / depth + 0.5 * w, -focal * pc.y / depth + 0.5 * h);
            if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
                continue;
            }
            let radius = focal * CUTOFF_SIGMA * s.scale_u.max(s.scale_v).as_f64() / depth;
            self.max_radius_px[i] = self.max_radius_px[i].max(radius);
            let gn = g.center.cast::<f64>().norm();
            if gn.is_finite() {
                self.grad_sum[i] += gn;
            }
            self.views[i] += 1;
        }
    }
}

/// What one density-control pass did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyOutcome {
    pub pruned: usize,
    pub split: usize,
    /// For each splat after the pass, the index it descends from before it.
    pub sources: Vec<usize>,
}

/// Prunes splats with opacity below `prune_opacity`, or that were viewed yet
/// never projected larger than `prune_footprint_px`; then splits the
/// highest-gradient large splats into two children along `t_u` with both
/// scales halved, while the count stays within the cap.
pub fn densify_prune<T: Real>(
    scene: &mut SceneModel<T>,
    stats: &DensifyStats,
    cfg: &GgdsConfig,
    extent: f64,
) -> DensifyOutcome {
    let n = scene.len();
    let stat = |i: usize| -> (u32, f64, f64) {
        if i < stats.len() {
            (stats.views[i], stats.grad_sum[i], stats.max_radius_px[i])
        } else {
            (0, 0.0, 0.0)
        }
    };
    let cap = scene.cap.min(cfg.cap);
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    for (i, s) in scene.splats.iter().enumerate() {
        let (views, _, radius) = stat(i);
        let faint = s.opacity.as_f64() < cfg.prune_opacity;
        let tiny = views > 0 && radius < cfg.prune_footprint_px;
        if !(faint || tiny) {
            kept.push(i);
        }
    }
    let pruned = n - kept.len();

    let large = cfg.densify_scale * extent;
    let mut candidates: Vec<(f64, usize)> = kept
        .iter()
        .enumerate()
        .filter_map(|(slot, &i)| {
            let (views, sum, _) = stat(i);
            let s = &scene.splats[i];
            let mean = if views > 0 { sum / views as f64 } else { 0.0 };
            let big = s.scale_u.max(s.scale_v).as_f64() > large;
            (mean > cfg.densify_grad_threshold && big).then_some((mean, slot))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let room = cap.saturating_sub(kept.len());
    candidates.truncate(room);
    let mut split_slot = vec![false; kept.len()];
    for &(_, slot) in &candidates {
        split_slot[slot] = true;
    }

    let half = T::lit(0.5);
    let mut splats = Vec::with_capacity(kept.len() + candidates.len());
    let mut sources = Vec::with_capacity(kept.len() + candidates.len());
    for (slot, &i) in kept.iter().enumerate() {
        let s = &scene.splats[i];
        if split_slot[slot] {
            let offset = s.tangent_u * (s.scale_u * half);
            for sign in [T::one(), -T::one()] {
                let mut child = s.clone();
                child.center = s.center + offset * sign;
                child.scale_u = s.scale_u * half;
                child.scale_v = s.scale_v * half;
                child.scale_u = child.scale_u.max(cast(cfg.min_scale));
                child.scale_v = child.scale_v.max(cast(cfg.min_scale));
                splats.push(child);
                sources.push(i);
            }
        } else {
            splats.push(s.clone());
            sources.push(i);
        }
    }
    scene.splats = splats;
    DensifyOutcome {
        pruned,
        split: candidates.len(),
        sources,
    }
}
