//! Orbit cameras looking at the origin.
//!
//! World space is Y-up. Azimuth 0 places the camera on +Z looking towards -Z
//! (the front view); azimuth grows counter-clockwise seen from above.

use serde::{Deserialize, Serialize};

use super::math::{cross, dot, normalize, sub, Vec3};

/// Elevation used for the additional top view.
pub const TOP_VIEW_ELEVATION_DEG: f64 = 85.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn square(fov_y_deg: f64, size: usize) -> Self {
        Self {
            fov_y_deg,
            width: size,
            height: size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub intrinsics: Intrinsics,
}

/// Camera frame: position plus orthonormal right / up / forward axes.
#[derive(Debug, Clone, Copy)]
pub struct ViewFrame {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    focal: f64,
    aspect: f64,
    width: f64,
    height: f64,
}

impl CameraPose {
    pub fn position(&self) -> Vec3 {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [
            self.radius * el.cos() * az.sin(),
            self.radius * el.sin(),
            self.radius * el.cos() * az.cos(),
        ]
    }

    pub fn frame(&self) -> ViewFrame {
        let position = self.position();
        let forward = normalize(sub([0.0; 3], position));
        let mut right = cross(forward, [0.0, 1.0, 0.0]);
        if dot(right, right) < 1e-12 {
            right = [1.0, 0.0, 0.0];
        }
        let right = normalize(right);
        let up = cross(right, forward);
        let i = self.intrinsics;
        ViewFrame {
            position,
            right,
            up,
            forward,
            focal: 1.0 / (i.fov_y_deg.to_radians() * 0.5).tan(),
            aspect: i.width as f64 / i.height as f64,
            width: i.width as f64,
            height: i.height as f64,
        }
    }
}

impl ViewFrame {
    /// Camera-space coordinates `(x, y, depth)` with depth along `forward`.
    pub fn to_view(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.position);
        [dot(d, self.right), dot(d, self.up), dot(d, self.forward)]
    }

    /// Continuous pixel coordinates of a camera-space point (depth must be positive).
    pub fn to_pixel(&self, v: Vec3) -> [f64; 2] {
        let ndc_x = self.focal * v[0] / (v[2] * self.aspect);
        let ndc_y = self.focal * v[1] / v[2];
        [(ndc_x + 1.0) * 0.5 * self.width, (1.0 - ndc_y) * 0.5 * self.height]
    }

    /// World-space ray direction through continuous pixel coordinate `(px, py)`.
    pub fn ray_direction(&self, px: f64, py: f64) -> Vec3 {
        let ndc_x = px / self.width * 2.0 - 1.0;
        let ndc_y = 1.0 - py / self.height * 2.0;
        let x = ndc_x * self.aspect / self.focal;
        let y = ndc_y / self.focal;
        normalize([
            self.forward[0] + x * self.right[0] + y * self.up[0],
            self.forward[1] + x * self.right[1] + y * self.up[1],
            self.forward[2] + x * self.right[2] + y * self.up[2],
        ])
    }
}

/// `n_azimuth` views on the equator starting at the front, plus an optional top view.
pub fn sample_views(n_azimuth: usize, add_top: bool, radius: f64, intrinsics: Intrinsics) -> Vec<CameraPose> {
    let n = n_azimuth.max(1);
    let mut poses: Vec<CameraPose> = (0..n)
        .map(|k| CameraPose {
            azimuth_deg: k as f64 * 360.0 / n as f64,
            elevation_deg: 0.0,
            radius,
            intrinsics,
        })
        .collect();
    if add_top {
        poses.push(CameraPose {
            azimuth_deg: 0.0,
            elevation_deg: TOP_VIEW_ELEVATION_DEG,
            radius,
            intrinsics,
        });
    }
    poses
}

/// Processing order for views from [`sample_views`]: front, then alternating
/// outwards (+1, -1, +2, -2, ...), top view last.
pub fn alternating_order(n_azimuth: usize, add_top: bool) -> Vec<usize> {
    let n = n_azimuth.max(1);
    let mut order = vec![0];
    for k in 1..=n / 2 {
        order.push(k);
        if n - k != k {
            order.push(n - k);
        }
    }
    if add_top {
        order.push(n);
    }
    order
}
