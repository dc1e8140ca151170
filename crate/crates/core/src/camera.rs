//! Pinhole cameras with an OpenCV-style frame: +x right, +y down, +z forward.

use crate::{Error, Mat3, Result, Vec3};

/// Points closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation part of the world-to-camera transform.
    pub rotation: Mat3,
    /// Translation part of the world-to-camera transform.
    pub translation: Vec3,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image-up.
    /// The principal point is the image center and `fov_x` is the horizontal
    /// field of view in radians.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_x: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // forward is parallel to up; any perpendicular works.
            let alt = if forward.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Camera::new(
            width,
            height,
            (fx, fx, 0.5 * width as f64, 0.5 * height as f64),
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got {} {}",
                self.fx, self.fy
            )));
        }
        let gram = self.rotation * self.rotation.transpose();
        let off = (gram - Mat3::identity()).abs().max();
        if off > 1e-8 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (error {off:e})"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Optical axis (camera +z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Pinhole projection of a camera-space point; `None` behind the near plane.
    pub fn project_camera_point(&self, pc: &Vec3) -> Option<[f64; 2]> {
        if pc.z <= NEAR_PLANE {
            return None;
        }
        Some([
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ])
    }

    /// Camera-space ray direction through a pixel coordinate, scaled so z = 1.
    /// Integer pixel coordinates address pixel centers.
    pub fn ray_dir_camera(&self, px: f64, py: f64) -> Vec3 {
        Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0)
    }

    /// Back-projects a pixel at camera-space depth `z`.
    pub fn backproject(&self, px: f64, py: f64, z: f64) -> Vec3 {
        self.ray_dir_camera(px, py) * z
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Radius of the bounding sphere of camera centers, measured from their centroid.
pub fn scene_radius(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 0.0;
    }
    let centroid = cameras.iter().map(Camera::center).sum::<Vec3>() / cameras.len() as f64;
    cameras
        .iter()
        .map(|c| (c.center() - centroid).norm())
        .fold(0.0, f64::max)
}
