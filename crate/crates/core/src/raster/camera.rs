use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::real::{cast, Real};

/// Pinhole camera.
///
/// Camera space is right-handed with `+x` right, `+y` up and the camera
/// looking down `-z`; depth is `-z`. A surface facing the camera therefore
/// has camera-space normal `(0, 0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub position: Vec3<T>,
    /// World → camera rotation.
    pub rotation: Mat3<T>,
    /// Vertical field of view in radians.
    pub fov_y: T,
    pub width: usize,
    pub height: usize,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    /// Camera at `eye` looking at `target` with world `+z` as up.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, fov_y: T, width: usize, height: usize) -> Result<Self> {
        Self::look_at_up(eye, target, Vec3::unit_z(), fov_y, width, height)
    }

    pub fn look_at_up(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        fov_y: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize()
            .ok_or_else(|| Error::invalid("look_at target coincides with the eye"))?;
        let right = forward
            .cross(up)
            .try_normalize()
            .ok_or_else(|| Error::invalid("look_at direction is parallel to up"))?;
        let cam_up = right.cross(forward);
        let cam = Self {
            position: eye,
            rotation: Mat3::from_rows(right, cam_up, -forward),
            fov_y,
            width,
            height,
            near: T::lit(0.01),
            far: T::lit(1.0e4),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera from a camera → world orientation quaternion `(w, x, y, z)`.
    pub fn from_quaternion(position: Vec3<T>, q: [T; 4], fov_y: T, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            position,
            rotation: Mat3::from_quaternion(q).transpose(),
            fov_y,
            width,
            height,
            near: T::lit(0.01),
            far: T::lit(1.0e4),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_clip(mut self, near: T, far: T) -> Result<Self> {
        self.near = near;
        self.far = far;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > T::zero() && self.fov_y < T::PI()) {
            return Err(Error::invalid("camera field of view must lie in (0, π)"));
        }
        if !(self.near > T::zero() && self.near < self.far) {
            return Err(Error::invalid("camera needs 0 < near < far"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if self.rotation.orthonormality_error() > T::lit(1e-6) {
            return Err(Error::invalid("camera rotation must be orthonormal"));
        }
        if !self.position.is_finite() {
            return Err(Error::invalid("camera position must be finite"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> T {
        T::lit(0.5) * T::of_usize(self.height) / (self.fov_y * T::lit(0.5)).tan()
    }

    /// Camera-space ray through the center of pixel `(px, py)`, scaled so
    /// that its depth component is 1.
    #[inline]
    pub fn pixel_ray(&self, px: usize, py: usize, focal: T) -> Vec3<T> {
        let half = T::lit(0.5);
        let x = (T::of_usize(px) + half - half * T::of_usize(self.width)) / focal;
        let y = -(T::of_usize(py) + half - half * T::of_usize(self.height)) / focal;
        Vec3::new(x, y, -T::one())
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p - self.position)
    }

    pub fn camera_to_world_dir(&self, d: Vec3<T>) -> Vec3<T> {
        self.rotation.tmul_vec(d)
    }

    /// Continuous pixel coordinates of a camera-space point in front of the camera.
    pub fn project(&self, pc: Vec3<T>, focal: T) -> (T, T) {
        let depth = -pc.z;
        let half = T::lit(0.5);
        (
            focal * pc.x / depth + half * T::of_usize(self.width),
            -focal * pc.y / depth + half * T::of_usize(self.height),
        )
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            position: self.position.cast(),
            rotation: self.rotation.cast(),
            fov_y: cast(self.fov_y),
            width: self.width,
            height: self.height,
            near: cast(self.near),
            far: cast(self.far),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_points_down_negative_z() {
        let cam = Camera::look_at(Vec3::zero(), Vec3::new(5.0, 0.0, 0.0), 1.0_f64, 8, 8).unwrap();
        let pc = cam.world_to_camera(Vec3::new(5.0, 0.0, 0.0));
        assert!((pc - Vec3::new(0.0, 0.0, -5.0)).max_abs() < 1e-12);
        let up = cam.world_to_camera(Vec3::new(0.0, 0.0, 1.0));
        assert!(up.y > 0.99);
        assert!((cam.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_inverts_pixel_ray() {
        let cam = Camera::look_at(Vec3::zero(), Vec3::new(0.0, 3.0, 0.5), 0.8_f64, 40, 30).unwrap();
        let f = cam.focal();
        let d = cam.pixel_ray(7, 19, f);
        let (x, y) = cam.project(d * 2.5, f);
        assert!((x - 7.5).abs() < 1e-9 && (y - 19.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let mut cam = Camera::look_at(Vec3::zero(), Vec3::unit_x(), 1.0_f64, 8, 8).unwrap();
        cam.fov_y = 3.5;
        assert!(cam.validate().is_err());
        assert!(Camera::look_at(Vec3::zero(), Vec3::zero(), 1.0_f64, 8, 8).is_err());
        assert!(Camera::look_at(Vec3::zero(), Vec3::unit_x(), 1.0_f64, 0, 8).is_err());
    }
}
