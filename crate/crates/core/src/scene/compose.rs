//! Static asset composition and environment relighting.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::real::Real;
use crate::scene::{any_tangent_frame, EnvironmentMap, SceneModel, Splat};

/// Rotation, then uniform scale, then translation: `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub scale: T,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
            scale: T::one(),
        }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.orthonormality_error() > T::lit(1e-6) || self.rotation.determinant() <= T::zero() {
            return Err(Error::invalid("transform rotation must be orthonormal with determinant +1"));
        }
        if !(self.scale > T::zero()) || !self.scale.is_finite() {
            return Err(Error::invalid("transform scale must be positive"));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.rotation == Mat3::identity() && self.translation == Vec3::zero() && self.scale == T::one()
    }

    pub fn apply(&self, splat: &Splat<T>) -> Splat<T> {
        if self.is_identity() {
            return splat.clone();
        }
        // TODO: rotate the degree ≥ 1 SH bands along with the frame.
        Splat {
            center: self.rotation.mul_vec(splat.center) * self.scale + self.translation,
            tangent_u: self.rotation.mul_vec(splat.tangent_u),
            tangent_v: self.rotation.mul_vec(splat.tangent_v),
            scale_u: splat.scale_u * self.scale,
            scale_v: splat.scale_v * self.scale,
            opacity: splat.opacity,
            sh: splat.sh.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelightConfig<T> {
    pub enabled: bool,
    /// Irradiance that leaves asset colors unchanged.
    pub reference_irradiance: T,
}

impl<T: Real> Default for RelightConfig<T> {
    fn default() -> Self {
        Self {
            enabled: false,
            reference_irradiance: T::lit(0.5),
        }
    }
}

const HEMISPHERE_STRATA: usize = 8;

/// Cosine-weighted average radiance over the hemisphere about `normal`,
/// using a deterministic 8×8 stratified quadrature (64 directions).
pub fn hemisphere_irradiance<T: Real>(env: &EnvironmentMap<T>, normal: Vec3<T>) -> Vec3<T> {
    let n = normal.try_normalize().unwrap_or(Vec3::unit_z());
    let (t1, t2) = any_tangent_frame(n);
    let k = HEMISPHERE_STRATA;
    let mut sum = Vec3::zero();
    for i in 0..k {
        for j in 0..k {
            let u1 = (i as f64 + 0.5) / k as f64;
            let u2 = (j as f64 + 0.5) / k as f64;
            let r = u1.sqrt();
            let phi = std::f64::consts::TAU * u2;
            let local = [r * phi.cos(), r * phi.sin(), (1.0 - u1).sqrt()];
            let dir = t1 * T::lit(local[0]) + t2 * T::lit(local[1]) + n * T::lit(local[2]);
            sum += env.query_unchecked(dir);
        }
    }
    sum / T::of_usize(k * k)
}

/// Transforms `asset` into the scene frame and appends it, optionally
/// relighting each asset splat's base color by the scene environment.
pub fn compose_and_relight<T: Real>(
    scene: &SceneModel<T>,
    asset: &[Splat<T>],
    transform: &RigidTransform<T>,
    relight: &RelightConfig<T>,
) -> Result<SceneModel<T>> {
    transform.validate()?;
    let requested = scene.splats.len() + asset.len();
    if requested > scene.cap {
        return Err(Error::Capacity {
            requested,
            cap: scene.cap,
        });
    }
    if relight.enabled && !(relight.reference_irradiance > T::zero()) {
        return Err(Error::invalid("reference irradiance must be positive"));
    }
    let expected = crate::scene::sh::coeff_count(scene.sh_degree);
    if let Some(bad) = asset.iter().position(|s| s.sh.len() != expected) {
        return Err(Error::invalid(format!(
            "asset splat {bad} has {} SH coefficients, scene needs {expected}",
            asset[bad].sh.len()
        )));
    }
    let mut out = scene.clone();
    out.splats.reserve(asset.len());
    for s in asset {
        let mut placed = transform.apply(s);
        if relight.enabled {
            let e = hemisphere_irradiance(&scene.env, placed.normal());
            placed.sh[0] = placed.sh[0].mul_elem(e / relight.reference_irradiance);
        }
        out.splats.push(placed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::TriangleMesh;

    fn asset() -> Vec<Splat<f64>> {
        (0..4)
            .map(|i| Splat {
                center: Vec3::new(i as f64, 0.5, -0.25),
                tangent_u: Vec3::unit_x(),
                tangent_v: Vec3::new(0.0, 0.6, 0.8),
                scale_u: 0.1 + i as f64 * 0.01,
                scale_v: 0.2,
                opacity: 0.9,
                sh: vec![Vec3::new(0.1, 0.4 + i as f64 * 0.1, 0.7)],
            })
            .collect()
    }

    fn scene(radiance: f64) -> SceneModel<f64> {
        SceneModel::new(
            Vec::new(),
            EnvironmentMap::uniform(32, 16, Vec3::splat(radiance)),
            TriangleMesh::default(),
        )
        .unwrap()
    }

    #[test]
    fn identity_appends_bit_identical() {
        let a = asset();
        let out = compose_and_relight(&scene(0.5), &a, &RigidTransform::identity(), &RelightConfig::default()).unwrap();
        assert_eq!(out.splats, a);
        // Idempotent on the asset block.
        let again = compose_and_relight(&scene(0.5), &out.splats, &RigidTransform::identity(), &RelightConfig::default())
            .unwrap();
        assert_eq!(again.splats, a);
    }

    #[test]
    fn translation_shifts_centers_exactly() {
        let a = asset();
        let t = RigidTransform::translation(Vec3::new(1.0, 0.0, 0.0));
        let out = compose_and_relight(&scene(0.5), &a, &t, &RelightConfig::default()).unwrap();
        for (o, s) in out.splats.iter().zip(&a) {
            assert_eq!(o.center, s.center + Vec3::new(1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn uniform_environment_relight_is_neutral() {
        let a = asset();
        let relight = RelightConfig {
            enabled: true,
            reference_irradiance: 0.8,
        };
        let out = compose_and_relight(&scene(0.8), &a, &RigidTransform::identity(), &relight).unwrap();
        for (o, s) in out.splats.iter().zip(&a) {
            assert!((o.sh[0] - s.sh[0]).max_abs() < 1e-4);
        }
    }

    #[test]
    fn hemisphere_quadrature_oracle() {
        // Radiance = max(0, d·z) over the upper hemisphere. The cosine-weighted
        // average about +z is ∫cos²θ sinθ dθ dφ / π = 2/3.
        let (w, h) = (256, 128);
        let mut pixels = Vec::with_capacity(w * h);
        for row in 0..h {
            let eta = (row as f64 + 0.5) / h as f64 * std::f64::consts::PI;
            for _ in 0..w {
                pixels.push(Vec3::splat(eta.cos().max(0.0)));
            }
        }
        let env = EnvironmentMap::from_pixels(w, h, pixels).unwrap();
        let e = hemisphere_irradiance(&env, Vec3::unit_z());
        assert!((e.x - 2.0 / 3.0).abs() < 5e-3, "{}", e.x);
    }

    #[test]
    fn rejects_bad_rotation_and_capacity() {
        let mut t = RigidTransform::<f64>::identity();
        t.rotation.rows[0] = Vec3::new(2.0, 0.0, 0.0);
        assert!(matches!(
            compose_and_relight(&scene(0.5), &asset(), &t, &RelightConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
        let mut reflect = RigidTransform::<f64>::identity();
        reflect.rotation.rows[0] = Vec3::new(-1.0, 0.0, 0.0);
        assert!(compose_and_relight(&scene(0.5), &asset(), &reflect, &RelightConfig::default()).is_err());

        let small = scene(0.5).with_cap(3).unwrap();
        assert!(matches!(
            compose_and_relight(&small, &asset(), &RigidTransform::identity(), &RelightConfig::default()),
            Err(Error::Capacity { requested: 4, cap: 3 })
        ));
    }
}
