//! Concentric camera/light geometry.
//!
//! Cameras sit on `m` concentric rings in the `z = 0` plane, `n` per ring,
//! all facing `+z` with a shared pinhole model whose image plane lies at
//! `z = 1`. Ring `j` is filtered to wavelength `λ_j`. The ring light holds
//! one narrowband point source per ring, coplanar with the cameras.
//!
//! Indices are zero-based throughout: spoke `i ∈ 0..n`, ring `j ∈ 0..m`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full geometry of the concentric camera array and ring light.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RigConfig {
    /// Number of concentric camera rings (= number of spectral bands = number
    /// of point lights), `m`.
    pub num_rings: usize,
    /// Cameras per ring, `n`.
    pub cameras_per_ring: usize,
    /// Ring radii, one per ring, strictly monotonic and positive.
    pub ring_radii: Vec<f64>,
    /// Radius of the surrounding ring light.
    pub light_radius: f64,
    /// Angular position of the first light source (radians).
    pub light_phase: f64,
    /// Band center wavelengths in nanometers, one per ring, strictly increasing.
    pub wavelengths: Vec<f64>,
    pub image_width: usize,
    pub image_height: usize,
    /// Metric half-width of the image plane at `z = 1`; `tan` of the
    /// horizontal half field of view.
    pub half_extent: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub depth_step: f64,
}

/// A sampling ray of the two-plane parameterization: origin on the camera
/// plane `z = 0`, unit direction with positive `z` component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Point at parameter `t` along the ray.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.num_rings;
        let n = self.cameras_per_ring;
        if m < 3 || n < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 rings and 3 cameras per ring, got m={m}, n={n}"
            )));
        }
        if self.ring_radii.len() != m {
            return Err(Error::InvalidConfig(format!(
                "{} ring radii for {m} rings",
                self.ring_radii.len()
            )));
        }
        if self.wavelengths.len() != m {
            return Err(Error::InvalidConfig(format!(
                "{} wavelengths for {m} rings",
                self.wavelengths.len()
            )));
        }
        if self.ring_radii.iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidConfig("ring radii must be positive".into()));
        }
        let increasing = self.ring_radii.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.ring_radii.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::InvalidConfig(
                "ring radii must be strictly increasing or strictly decreasing".into(),
            ));
        }
        if !self.wavelengths.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        if self.light_radius <= 0.0 {
            return Err(Error::InvalidConfig("light radius must be positive".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidConfig("image dimensions must be nonzero".into()));
        }
        if !(self.half_extent > 0.0) {
            return Err(Error::InvalidConfig("half_extent must be positive".into()));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min && self.depth_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bad depth range [{}, {}] step {}",
                self.depth_min, self.depth_max, self.depth_step
            )));
        }
        Ok(())
    }

    fn check_camera_index(&self, spoke: usize, ring: usize) -> Result<()> {
        if spoke >= self.cameras_per_ring || ring >= self.num_rings {
            return Err(Error::IndexOutOfRange(format!(
                "camera (spoke {spoke}, ring {ring}) outside {}x{} rig",
                self.cameras_per_ring, self.num_rings
            )));
        }
        Ok(())
    }

    /// Spoke angle of camera `spoke`, measured from the x-axis.
    #[inline]
    pub fn spoke_angle(&self, spoke: usize) -> f64 {
        spoke as f64 * std::f64::consts::TAU / self.cameras_per_ring as f64
    }

    /// Center of projection of camera (`spoke`, `ring`) on the `z = 0` plane.
    pub fn camera_position(&self, spoke: usize, ring: usize) -> Result<Vector2<f64>> {
        self.check_camera_index(spoke, ring)?;
        let phi = self.spoke_angle(spoke);
        let r = self.ring_radii[ring];
        Ok(Vector2::new(r * phi.cos(), r * phi.sin()))
    }

    /// 3D position of the point light paired with ring `ring`. Lights are
    /// coplanar with the cameras and equiangular at `light_radius`.
    pub fn light_position(&self, ring: usize) -> Result<Vector3<f64>> {
        if ring >= self.num_rings {
            return Err(Error::IndexOutOfRange(format!(
                "light {ring} outside {} lights",
                self.num_rings
            )));
        }
        let theta =
            self.light_phase + ring as f64 * std::f64::consts::TAU / self.num_rings as f64;
        Ok(Vector3::new(
            self.light_radius * theta.cos(),
            self.light_radius * theta.sin(),
            0.0,
        ))
    }

    /// Metric pixel pitch on the `z = 1` image plane.
    #[inline]
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent / self.image_width as f64
    }

    /// Pixel coordinates -> metric image-plane coordinates, centered on the
    /// camera's principal axis. Pixel centers sit on integer coordinates;
    /// the full image spans `±half_extent` horizontally.
    #[inline]
    pub fn metric_from_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.pixel_size();
        let cx = (self.image_width as f64 - 1.0) / 2.0;
        let cy = (self.image_height as f64 - 1.0) / 2.0;
        ((u - cx) * s, (v - cy) * s)
    }

    #[inline]
    pub fn pixel_from_metric(&self, a: f64, b: f64) -> (f64, f64) {
        let s = self.pixel_size();
        let cx = (self.image_width as f64 - 1.0) / 2.0;
        let cy = (self.image_height as f64 - 1.0) / 2.0;
        (a / s + cx, b / s + cy)
    }

    /// Ray through pixel (`u`, `v`) of camera (`spoke`, `ring`). All cameras
    /// share the `+z` principal axis; no toe-in.
    pub fn pixel_ray(&self, spoke: usize, ring: usize, u: f64, v: f64) -> Result<Ray> {
        let pos = self.camera_position(spoke, ring)?;
        self.check_pixel(u, v)?;
        Ok(self.ray_from(pos, u, v))
    }

    /// Ray through pixel (`u`, `v`) of the virtual center view, a synthetic
    /// pinhole at the origin sharing the ring cameras' intrinsics.
    pub fn center_pixel_ray(&self, u: f64, v: f64) -> Result<Ray> {
        self.check_pixel(u, v)?;
        Ok(self.ray_from(Vector2::zeros(), u, v))
    }

    fn check_pixel(&self, u: f64, v: f64) -> Result<()> {
        if !(u >= 0.0 && v >= 0.0)
            || u > (self.image_width - 1) as f64
            || v > (self.image_height - 1) as f64
        {
            return Err(Error::IndexOutOfRange(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.image_width, self.image_height
            )));
        }
        Ok(())
    }

    fn ray_from(&self, pos: Vector2<f64>, u: f64, v: f64) -> Ray {
        let (a, b) = self.metric_from_pixel(u, v);
        Ray {
            origin: Vector3::new(pos.x, pos.y, 0.0),
            direction: Vector3::new(a, b, 1.0).normalize(),
        }
    }

    /// Fractional pixel where the 3D point `x` images in camera
    /// (`spoke`, `ring`). The result may lie outside the image bounds.
    pub fn project_point(&self, x: &Vector3<f64>, spoke: usize, ring: usize) -> Result<(f64, f64)> {
        let pos = self.camera_position(spoke, ring)?;
        self.project_from(pos, x)
    }

    /// Projection into the virtual center view.
    pub fn project_center(&self, x: &Vector3<f64>) -> Result<(f64, f64)> {
        self.project_from(Vector2::zeros(), x)
    }

    fn project_from(&self, pos: Vector2<f64>, x: &Vector3<f64>) -> Result<(f64, f64)> {
        if x.z <= 0.0 {
            return Err(Error::BehindRig { z: x.z });
        }
        let a = (x.x - pos.x) / x.z;
        let b = (x.y - pos.y) / x.z;
        Ok(self.pixel_from_metric(a, b))
    }

    /// Back-project center-view pixel (`u`, `v`) to the point at depth `z`
    /// (plane-parallel depth, i.e. the point's `z` coordinate).
    pub fn backproject_center(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let (a, b) = self.metric_from_pixel(u, v);
        Vector3::new(a * z, b * z, z)
    }

    /// Depth hypotheses of the plane sweep, `depth_min..=depth_max` inclusive
    /// of the upper end when it falls on the grid.
    pub fn depth_hypotheses(&self) -> Vec<f64> {
        let count = ((self.depth_max - self.depth_min) / self.depth_step + 1.5).floor() as usize;
        (0..count)
            .map(|k| self.depth_min + k as f64 * self.depth_step)
            .filter(|&z| z <= self.depth_max + 1e-9)
            .collect()
    }
}
