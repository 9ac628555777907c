//! Camera trajectories as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, LoadError};
use crate::math::Vec3;
use crate::raster::Camera;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseOrientation {
    LookAt {
        look_at: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
    },
    /// Camera → world rotation `(w, x, y, z)`.
    Quaternion { quaternion: [f64; 4] },
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    #[serde(flatten)]
    pub orientation: PoseOrientation,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Pose {
    pub fn camera<T: Real>(&self) -> Result<Camera<T>> {
        let v = |a: [f64; 3]| Vec3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]));
        let fov = T::lit(self.fov_deg.to_radians());
        match &self.orientation {
            PoseOrientation::LookAt { look_at, up } => {
                Camera::look_at_up(v(self.position), v(*look_at), v(*up), fov, self.width, self.height)
            }
            PoseOrientation::Quaternion { quaternion } => Camera::from_quaternion(
                v(self.position),
                quaternion.map(T::lit),
                fov,
                self.width,
                self.height,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub fps: f64,
    pub poses: Vec<Pose>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .poses
            .first()
            .ok_or_else(|| Error::invalid("trajectory needs at least one pose"))?;
        if !(self.fps > 0.0) {
            return Err(Error::invalid("trajectory fps must be positive"));
        }
        if self
            .poses
            .iter()
            .any(|p| p.width != first.width || p.height != first.height)
        {
            return Err(Error::invalid("trajectory poses must share one resolution"));
        }
        Ok(())
    }

    pub fn cameras<T: Real>(&self) -> Result<Vec<Camera<T>>> {
        self.validate()?;
        self.poses.iter().map(Pose::camera).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("trajectory: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| LoadError::Parse {
            path: path.to_path_buf(),
            detail: "trajectory is not UTF-8".into(),
        })?;
        Self::from_json(&text).map_err(|e| {
            LoadError::Parse {
                path: path.to_path_buf(),
                detail: e.to_string(),
            }
            .into()
        })
    }

    /// Forward drive along `+x` from `start`, looking ahead.
    pub fn straight_drive(start: [f64; 3], step: f64, frames: usize, fov_deg: f64, width: usize, height: usize) -> Self {
        let poses = (0..frames)
            .map(|i| {
                let x = start[0] + step * i as f64;
                Pose {
                    position: [x, start[1], start[2]],
                    orientation: PoseOrientation::LookAt {
                        look_at: [x + 10.0, start[1], start[2]],
                        up: default_up(),
                    },
                    fov_deg,
                    width,
                    height,
                }
            })
            .collect();
        Self { fps: 30.0, poses }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_orientations() {
        let text = r#"{"fps": 10, "poses": [
            {"position": [0, 0, 2], "look_at": [5, 0, 2], "fov_deg": 60, "width": 32, "height": 16},
            {"position": [1, 0, 2], "quaternion": [1, 0, 0, 0], "fov_deg": 60, "width": 32, "height": 16}
        ]}"#;
        let t = TrajectorySpec::from_json(text).unwrap();
        assert_eq!(t.poses.len(), 2);
        let cams = t.cameras::<f64>().unwrap();
        assert_eq!(cams[1].rotation, crate::math::Mat3::identity());
        assert_eq!(TrajectorySpec::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn rejects_mixed_resolution() {
        let mut t = TrajectorySpec::straight_drive([0.0, 0.0, 1.5], 1.0, 3, 60.0, 16, 16);
        t.poses[2].width = 8;
        assert!(t.validate().is_err());
        assert!(TrajectorySpec { fps: 30.0, poses: vec![] }.validate().is_err());
    }
}
