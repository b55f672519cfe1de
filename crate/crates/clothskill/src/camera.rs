//! Pinhole camera model: intrinsics, camera→base extrinsics, projection and
//! back-projection between pixels and 3D points.

use glam::{DMat3, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Rotation part of the camera→base transform (columns are the camera
    /// axes expressed in the base frame).
    pub rotation: DMat3,
    /// Translation part of the camera→base transform: the camera center in
    /// the base frame.
    pub translation: DVec3,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    BadFocalLength { fx: f64, fy: f64 },
    #[error("rotation is not orthonormal (max |RᵀR - I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },
}

impl CameraModel {
    /// A camera `height_m` above the base origin looking straight down.
    /// Pixel x follows base +x; pixel y (downward in the image) follows
    /// base −y, so the top of the image is the +y side of the workspace.
    pub fn top_down(height_m: f64, width: u32, height: u32, fx: f64, fy: f64) -> CameraModel {
        CameraModel {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: DMat3::from_cols(
                DVec3::new(1.0, 0.0, 0.0),
                DVec3::new(0.0, -1.0, 0.0),
                DVec3::new(0.0, 0.0, -1.0),
            ),
            translation: DVec3::new(0.0, 0.0, height_m),
        }
    }

    /// The default benchmark camera: 1 m above the workspace, 64×64 pixels,
    /// focal length 96 px (a 0.35–0.45 m cloth fills most of the frame).
    pub fn default_benchmark() -> CameraModel {
        CameraModel::top_down(1.0, 64, 64, 96.0, 96.0)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::BadFocalLength { fx: self.fx, fy: self.fy });
        }
        let gram = self.rotation.transpose() * self.rotation;
        let mut deviation: f64 = 0.0;
        for col in 0..3 {
            for row in 0..3 {
                let expect = if row == col { 1.0 } else { 0.0 };
                deviation = deviation.max((gram.col(col)[row] - expect).abs());
            }
        }
        if deviation > 1e-9 {
            return Err(CameraError::NotOrthonormal { deviation });
        }
        Ok(())
    }

    /// Base frame → camera frame.
    pub fn base_to_cam(&self, point_base: DVec3) -> DVec3 {
        self.rotation.transpose() * (point_base - self.translation)
    }

    /// Camera frame → base frame: `X^b = R·X^c + t`.
    pub fn cam_to_base(&self, point_cam: DVec3) -> DVec3 {
        self.rotation * point_cam + self.translation
    }

    /// Projects a camera-frame point to (possibly fractional, possibly
    /// out-of-bounds) pixel coordinates.
    pub fn project_cam(&self, point_cam: DVec3) -> Result<(f64, f64), CameraError> {
        if point_cam.z <= 0.0 {
            return Err(CameraError::BehindCamera { depth: point_cam.z });
        }
        Ok((
            self.fx * point_cam.x / point_cam.z + self.cx,
            self.fy * point_cam.y / point_cam.z + self.cy,
        ))
    }

    /// Projects a base-frame point to pixel coordinates.
    pub fn project(&self, point_base: DVec3) -> Result<(f64, f64), CameraError> {
        self.project_cam(self.base_to_cam(point_base))
    }

    /// Back-projects a pixel at a given depth to the camera frame:
    /// `X^c = ((px − cx)·z/fx, (py − cy)·z/fy, z)`.
    pub fn backproject(&self, px: f64, py: f64, depth: f64) -> Result<DVec3, CameraError> {
        if depth <= 0.0 {
            return Err(CameraError::NonPositiveDepth { depth });
        }
        Ok(DVec3::new(
            (px - self.cx) * depth / self.fx,
            (py - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// Distance from the camera center to the ground plane along the optical
    /// axis; the background value of rendered depth images.
    pub fn ground_depth(&self, ground_height: f64) -> f64 {
        self.translation.z - ground_height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_point_backprojects_to_axis() {
        let cam = CameraModel::default_benchmark();
        let xc = cam.backproject(cam.cx, cam.cy, 0.7).unwrap();
        assert!((xc - DVec3::new(0.0, 0.0, 0.7)).length() < 1e-15);
    }

    #[test]
    fn unit_tangent_pixel() {
        let cam = CameraModel::default_benchmark();
        let xc = cam.backproject(cam.cx + cam.fx, cam.cy, 1.0).unwrap();
        assert!((xc - DVec3::new(1.0, 0.0, 1.0)).length() < 1e-15);
    }

    #[test]
    fn nonpositive_depth_is_an_error() {
        let cam = CameraModel::default_benchmark();
        assert!(matches!(
            cam.backproject(10.0, 10.0, 0.0),
            Err(CameraError::NonPositiveDepth { .. })
        ));
        assert!(matches!(
            cam.backproject(10.0, 10.0, -1.0),
            Err(CameraError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn identity_extrinsic_keeps_points() {
        let cam = CameraModel {
            rotation: DMat3::IDENTITY,
            translation: DVec3::ZERO,
            ..CameraModel::default_benchmark()
        };
        let p = DVec3::new(0.3, -0.2, 0.9);
        assert_eq!(cam.cam_to_base(p), p);
    }

    #[test]
    fn pure_translation_extrinsic() {
        let t = DVec3::new(0.1, 0.2, 0.3);
        let cam = CameraModel {
            rotation: DMat3::IDENTITY,
            translation: t,
            ..CameraModel::default_benchmark()
        };
        let p = DVec3::new(0.3, -0.2, 0.9);
        assert_eq!(cam.cam_to_base(p), p + t);
    }

    #[test]
    fn base_cam_round_trip_is_identity() {
        let cam = CameraModel::default_benchmark();
        let p = DVec3::new(0.12, -0.07, 0.02);
        let back = cam.cam_to_base(cam.base_to_cam(p));
        assert!((back - p).length() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = CameraModel::default_benchmark();
        // 2 m above the ground puts the point above the 1 m camera.
        assert!(matches!(
            cam.project(DVec3::new(0.0, 0.0, 2.0)),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn top_down_projects_plus_y_to_top_of_image() {
        let cam = CameraModel::default_benchmark();
        let (_, py) = cam.project(DVec3::new(0.0, 0.1, 0.0)).unwrap();
        assert!(py < cam.cy);
    }

    #[test]
    fn validate_rejects_sheared_rotation() {
        let mut cam = CameraModel::default_benchmark();
        cam.rotation = DMat3::from_cols(
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(0.5, 1.0, 0.0),
            DVec3::new(0.0, 0.0, 1.0),
        );
        assert!(matches!(cam.validate(), Err(CameraError::NotOrthonormal { .. })));
    }
}
