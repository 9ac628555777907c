//! Scene representation: oriented planar splats, an environment map at
//! infinity and the proxy mesh the splats were grown from.

mod compose;
mod env;
mod mesh;
pub mod sh;

use std::collections::BTreeMap;

pub use compose::{compose_and_relight, hemisphere_irradiance, RelightConfig, RigidTransform};
pub use env::{angles_to_direction, direction_to_angles, EnvSampling, EnvironmentMap};
pub use mesh::{mesh_to_splats, MeshSplats, MeshToSplatsOptions, TriangleMesh};

use crate::error::{Error, Result};
use crate::math::{orthonormalize_pair, Vec3};
use crate::real::{cast, Real};

/// Maximum number of splats a scene may hold unless configured otherwise.
pub const DEFAULT_SPLAT_CAP: usize = 4_000_000;

const FRAME_TOLERANCE: f64 = 1e-6;

/// One oriented planar 2D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat<T> {
    pub center: Vec3<T>,
    pub tangent_u: Vec3<T>,
    pub tangent_v: Vec3<T>,
    pub scale_u: T,
    pub scale_v: T,
    pub opacity: T,
    /// `(L+1)²` RGB coefficients; `sh[0]` is the base color.
    pub sh: Vec<Vec3<T>>,
}

impl<T: Real> Splat<T> {
    /// Splat normal `t_u × t_v`.
    pub fn normal(&self) -> Vec3<T> {
        self.tangent_u.cross(self.tangent_v)
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for_count(self.sh.len()).unwrap_or(0)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let tol = T::lit(FRAME_TOLERANCE);
        let one = T::one();
        if (self.tangent_u.norm() - one).abs() > tol || (self.tangent_v.norm() - one).abs() > tol {
            return Err(Error::invalid("splat tangents must be unit length"));
        }
        if self.tangent_u.dot(self.tangent_v).abs() > tol {
            return Err(Error::invalid("splat tangents must be orthogonal"));
        }
        if !(self.scale_u > T::zero() && self.scale_v > T::zero()) {
            return Err(Error::invalid("splat scales must be positive"));
        }
        if !(self.opacity >= T::zero() && self.opacity <= one) {
            return Err(Error::invalid("splat opacity must lie in [0, 1]"));
        }
        if sh::degree_for_count(self.sh.len()).is_none() {
            return Err(Error::invalid("splat SH block must hold (L+1)² coefficients, L ≤ 3"));
        }
        let finite = self.center.is_finite() && self.sh.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::invalid("splat parameters must be finite"));
        }
        Ok(())
    }

    /// Restores the type invariants after an unconstrained update:
    /// re-orthonormalized tangents, positive scales, opacity in `[0, 1]`,
    /// base color in `[0, 1]`.
    pub fn project(&mut self, min_scale: T) {
        if let Some((u, v)) = orthonormalize_pair(self.tangent_u, self.tangent_v) {
            self.tangent_u = u;
            self.tangent_v = v;
        } else {
            let n = self.normal().try_normalize().unwrap_or(Vec3::unit_z());
            let (u, v) = any_tangent_frame(n);
            self.tangent_u = u;
            self.tangent_v = v;
        }
        self.scale_u = self.scale_u.max(min_scale);
        self.scale_v = self.scale_v.max(min_scale);
        self.opacity = self.opacity.max(T::zero()).min(T::one());
        self.sh[0] = self.sh[0].map(|c| c.max(T::zero()).min(T::one()));
    }

    pub fn cast<U: Real>(&self) -> Splat<U> {
        Splat {
            center: self.center.cast(),
            tangent_u: self.tangent_u.cast(),
            tangent_v: self.tangent_v.cast(),
            scale_u: cast(self.scale_u),
            scale_v: cast(self.scale_v),
            opacity: cast(self.opacity),
            sh: self.sh.iter().map(|c| c.cast()).collect(),
        }
    }
}

/// Orthonormal `(u, v)` with `u × v = n` for a unit `n`.
pub fn any_tangent_frame<T: Real>(n: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    let helper = if n.x.abs() < T::lit(0.9) {
        Vec3::unit_x()
    } else {
        Vec3::unit_y()
    };
    let u = helper.cross(n).normalize();
    let v = n.cross(u);
    (u, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel<T> {
    pub splats: Vec<Splat<T>>,
    pub sh_degree: usize,
    pub env: EnvironmentMap<T>,
    pub proxy: TriangleMesh<T>,
    pub cap: usize,
    /// Snapshot of the generation configuration, `key → value`.
    pub metadata: BTreeMap<String, String>,
}

impl<T: Real> SceneModel<T> {
    pub fn new(splats: Vec<Splat<T>>, env: EnvironmentMap<T>, proxy: TriangleMesh<T>) -> Result<Self> {
        let sh_degree = splats.first().map(|s| s.sh_degree()).unwrap_or(0);
        let scene = Self {
            splats,
            sh_degree,
            env,
            proxy,
            cap: DEFAULT_SPLAT_CAP,
            metadata: BTreeMap::new(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        self.cap = cap;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.splats.len() > self.cap {
            return Err(Error::Capacity {
                requested: self.splats.len(),
                cap: self.cap,
            });
        }
        let expected = sh::coeff_count(self.sh_degree);
        for (i, s) in self.splats.iter().enumerate() {
            s.check_invariants()
                .map_err(|e| Error::invalid(format!("splat {i}: {e}")))?;
            if s.sh.len() != expected {
                return Err(Error::invalid(format!(
                    "splat {i} has {} SH coefficients, scene degree {} needs {expected}",
                    s.sh.len(),
                    self.sh_degree
                )));
            }
        }
        self.env.validate()?;
        self.proxy.validate()
    }

    /// Axis-aligned bounds of the splat centers, if any.
    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = self.splats.first()?.center;
        Some(self.splats.iter().fold((first, first), |(lo, hi), s| {
            let c = s.center;
            (
                Vec3::new(lo.x.min(c.x), lo.y.min(c.y), lo.z.min(c.z)),
                Vec3::new(hi.x.max(c.x), hi.y.max(c.y), hi.z.max(c.z)),
            )
        }))
    }

    pub fn cast<U: Real>(&self) -> SceneModel<U> {
        SceneModel {
            splats: self.splats.iter().map(|s| s.cast()).collect(),
            sh_degree: self.sh_degree,
            env: EnvironmentMap {
                width: self.env.width,
                height: self.env.height,
                pixels: self.env.pixels.iter().map(|p| p.cast()).collect(),
                sampling: self.env.sampling,
            },
            proxy: TriangleMesh {
                vertices: self.proxy.vertices.iter().map(|v| v.cast()).collect(),
                faces: self.proxy.faces.clone(),
            },
            cap: self.cap,
            metadata: self.metadata.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_splat() -> Splat<f64> {
        Splat {
            center: Vec3::zero(),
            tangent_u: Vec3::unit_x(),
            tangent_v: Vec3::unit_y(),
            scale_u: 1.0,
            scale_v: 1.0,
            opacity: 0.5,
            sh: vec![Vec3::splat(0.5)],
        }
    }

    #[test]
    fn projection_restores_invariants() {
        let mut s = unit_splat();
        s.tangent_u = Vec3::new(1.3, 0.2, 0.1);
        s.tangent_v = Vec3::new(0.4, 0.8, -0.3);
        s.scale_u = -1.0;
        s.opacity = 1.7;
        s.sh[0] = Vec3::new(-0.1, 0.5, 1.4);
        s.project(1e-6);
        s.check_invariants().unwrap();
        assert_eq!(s.opacity, 1.0);
        assert_eq!(s.sh[0], Vec3::new(0.0, 0.5, 1.0));
    }

    #[test]
    fn cap_is_enforced() {
        let env = EnvironmentMap::uniform(2, 1, Vec3::splat(0.5));
        let scene = SceneModel::new(vec![unit_splat(); 3], env, TriangleMesh::default()).unwrap();
        assert!(matches!(scene.with_cap(2), Err(Error::Capacity { .. })));
    }

    #[test]
    fn default_cap_is_four_million() {
        assert_eq!(DEFAULT_SPLAT_CAP, 4_000_000);
    }

    #[test]
    fn tangent_frame_is_right_handed() {
        for n in [Vec3::unit_z(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, -0.4, 0.5).normalize()] {
            let (u, v) = any_tangent_frame::<f64>(n);
            assert!((u.cross(v) - n).max_abs() < 1e-12);
        }
    }
}
