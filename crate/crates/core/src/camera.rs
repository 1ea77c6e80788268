//! Pinhole camera.
//!
//! Camera space follows the OpenCV convention: +x right, +y down, +z forward.
//! "Depth" always means the camera-space z coordinate. Pixel `(x, y)` has its
//! center at continuous coordinates `(x + 0.5, y + 0.5)`.

use glam::{DMat3, DVec2, DVec3};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: DMat3,
    /// World-to-camera translation: `p_cam = R * p_world + t`.
    pub translation: DVec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera centered on the world origin looking along +z from `-distance`,
    /// with a symmetric principal point. Handy for tests.
    pub fn looking_forward(width: usize, height: usize, focal: f64, distance: f64) -> Camera {
        Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation: DMat3::IDENTITY,
            translation: DVec3::new(0.0, 0.0, distance),
            near: 0.01,
            far: 1000.0,
        }
    }

    /// Camera placed at `eye`, looking at `target`, with the given world-up.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_x: f64,
        eye: DVec3,
        target: DVec3,
        up: DVec3,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(right);
        // Rows of the world-to-camera rotation.
        let rotation = DMat3::from_cols(right, down, forward).transpose();
        let fx = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Camera {
            width,
            height,
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: -(rotation * eye),
            near: 0.01,
            far: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near < self.far) {
            return Err(Error::InvalidCamera("near must be less than far".into()));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        for c in 0..3 {
            for r in 0..3 {
                let expect = if c == r { 1.0 } else { 0.0 };
                if (rtr.col(c)[r] - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("rotation not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// World-space camera position.
    pub fn position(&self) -> DVec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p_world: DVec3) -> DVec3 {
        self.rotation * p_world + self.translation
    }

    pub fn to_world(&self, p_cam: DVec3) -> DVec3 {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Project a camera-space point to continuous pixel coordinates.
    pub fn project_camera(&self, p_cam: DVec3) -> DVec2 {
        DVec2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Unit camera-space ray direction through continuous pixel coordinates.
    pub fn ray_dir_camera(&self, px: f64, py: f64) -> DVec3 {
        DVec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0).normalize()
    }

    /// Camera-space point on the ray through `(px, py)` at z-depth `depth`.
    pub fn unproject(&self, px: f64, py: f64, depth: f64) -> DVec3 {
        DVec3::new(
            (px - self.cx) / self.fx * depth,
            (py - self.cy) / self.fy * depth,
            depth,
        )
    }

    pub fn contains_pixel(&self, p: DVec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}
