use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::distgeo::RigidTransform;
use crate::error::{Error, Result};

/// JSON source of the bundled camera.
pub const CAM0: &str = include_str!("../../data/cam0.json");

/// A pinhole camera. The camera frame has `z` along the optical axis, `x`
/// to the right and `y` pointing down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Maps base-frame points into the camera frame.
    pub pose: RigidTransform,
}

/// Pixel coordinates of projected points and whether each was seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub uv: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        intrinsics: [f64; 4],
        size: [f64; 2],
        pose: RigidTransform,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        let [width, height] = size;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(fx) && positive(fy) && positive(width) && positive(height) && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidArgument(
                "camera needs finite positive focal lengths and image size".into(),
            ));
        }
        if pose.mirrored {
            return Err(Error::InvalidArgument("camera pose must be a proper rigid motion".into()));
        }
        Ok(Camera {
            id: id.into(),
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
        })
    }

    /// A camera at `eye` looking at `target`, with `up` roughly toward the top of the image.
    pub fn look_at(
        id: impl Into<String>,
        intrinsics: [f64; 4],
        size: [f64; 2],
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| {
            Error::InvalidArgument("camera eye and target coincide".into())
        })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("camera up vector is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let pose = RigidTransform {
            rotation,
            translation: -(rotation * eye),
            mirrored: false,
        };
        Camera::new(id, intrinsics, size, pose)
    }

    pub fn image_diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    /// Pinhole projection of base-frame points. Points with `Z ≤ 0` are
    /// reported invisible at `(0, 0)`.
    pub fn project(&self, points: &[Vector3<f64>]) -> Projection {
        let mut uv = Vec::with_capacity(points.len());
        let mut visible = Vec::with_capacity(points.len());
        for p in points {
            let c = self.pose.apply(p);
            if c.z > 0.0 {
                let u = self.fx * c.x / c.z + self.cx;
                let v = self.fy * c.y / c.z + self.cy;
                uv.push([u, v]);
                visible.push((0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v));
            } else {
                uv.push([0.0, 0.0]);
                visible.push(false);
            }
        }
        Projection { uv, visible }
    }

    /// The same camera with every intrinsic and the image size scaled by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Camera::new(
            self.id.clone(),
            [self.fx * s, self.fy * s, self.cx * s, self.cy * s],
            [self.width * s, self.height * s],
            self.pose,
        )
    }
}

/// On-disk camera description; `pose` maps base-frame points into the
/// camera frame as `Rz(yaw) Ry(pitch) Rx(roll) p + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub pose: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    pub rotation_rpy: [f64; 3],
}

impl CameraFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            msg: e.to_string(),
        })
    }

    pub fn into_camera(self) -> Result<Camera> {
        let [roll, pitch, yaw] = self.pose.rotation_rpy;
        let pose = RigidTransform {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
            translation: Vector3::from(self.pose.translation),
            mirrored: false,
        };
        Camera::new(self.id, [self.fx, self.fy, self.cx, self.cy], [self.width, self.height], pose)
    }
}

/// Loads a camera file; `cam0` selects the bundled camera.
pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    if path.to_str() == Some("cam0") {
        return CameraFile::parse(CAM0, "<bundled cam0>")?.into_camera();
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CameraFile::parse(&text, &path.display().to_string())?.into_camera()
}
