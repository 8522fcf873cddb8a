//! Pinhole camera model and the normalized `(u, v, Z)` target encoding.
//!
//! Targets live on a 1000x1000 normalized integer grid over the image plane,
//! paired with integer millimeter depth. The camera frame is +X right,
//! +Y down, +Z forward, so "above" is always -Y.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Side length of the normalized target grid: `u` and `v` are integers in `[0, 1000)`.
pub const TARGET_GRID: u32 = 1000;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("pixel ({x:.2}, {y:.2}) outside image bounds {width}x{height}")]
    OutOfImage {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("target depth is zero; cannot back-project")]
    DegenerateDepth,
    #[error("point projects to ({x:.2}, {y:.2}), outside image bounds {width}x{height}")]
    OutOfFrustum {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("point has non-positive depth {z:.2} mm; behind the camera")]
    BehindCamera { z: f64 },
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(String),
}

/// Pinhole intrinsics, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |msg: String| Err(CameraError::BadIntrinsics(msg));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            ));
        }
        if self.width < 1 || self.height < 1 {
            return bad(format!(
                "image size must be at least 1x1, got {}x{}",
                self.width, self.height
            ));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return bad(format!(
                "principal point ({}, {}) outside image {}x{}",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    /// Read intrinsics from a JSON sidecar `{fx, fy, cx, cy, width, height}`.
    pub fn load_json(path: &Path) -> Result<Self, CameraError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CameraError::BadIntrinsics(format!("{}: {e}", path.display())))?;
        let cam: Self = serde_json::from_str(&text)
            .map_err(|e| CameraError::BadIntrinsics(format!("{}: {e}", path.display())))?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("intrinsics serialize"),
        )
    }
}

/// A normalized image target: column/row on the `[0, 1000)` grid plus depth in
/// integer millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointTarget {
    pub u: u16,
    pub v: u16,
    pub z_mm: u32,
}

impl PointTarget {
    pub fn new(u: u16, v: u16, z_mm: u32) -> Option<Self> {
        if (u as u32) < TARGET_GRID && (v as u32) < TARGET_GRID {
            Some(Self { u, v, z_mm })
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        (self.u as u32) < TARGET_GRID && (self.v as u32) < TARGET_GRID
    }
}

/// Camera-frame point in millimeters. Also used for displacements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(&self, other: &Point3) -> Point3 {
        Point3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn add(&self, other: &Point3) -> Point3 {
        Point3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn scale(&self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.sub(other).norm()
    }

    /// Unit vector in this direction; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Point3> {
        let n = self.norm();
        if n > 0.0 {
            Some(self.scale(1.0 / n))
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Map a normalized target to continuous pixel coordinates.
///
/// Each grid cell maps to its center: `x = (u + 0.5) * width / 1000`. This keeps
/// the normalized->pixel->normalized round trip an exact identity.
pub fn normalized_to_pixel(t: PointTarget, cam: &CameraIntrinsics) -> (f64, f64) {
    let x = (t.u as f64 + 0.5) * cam.width as f64 / TARGET_GRID as f64;
    let y = (t.v as f64 + 0.5) * cam.height as f64 / TARGET_GRID as f64;
    (x, y)
}

/// Map continuous pixel coordinates onto the normalized grid (floor, clamped to 999).
pub fn pixel_to_normalized(
    x_px: f64,
    y_px: f64,
    cam: &CameraIntrinsics,
) -> Result<(u16, u16), CameraError> {
    if !(0.0..cam.width as f64).contains(&x_px) || !(0.0..cam.height as f64).contains(&y_px) {
        return Err(CameraError::OutOfImage {
            x: x_px,
            y: y_px,
            width: cam.width,
            height: cam.height,
        });
    }
    let u = ((x_px * TARGET_GRID as f64 / cam.width as f64).floor() as u32).min(TARGET_GRID - 1);
    let v = ((y_px * TARGET_GRID as f64 / cam.height as f64).floor() as u32).min(TARGET_GRID - 1);
    Ok((u as u16, v as u16))
}

/// The pixel cell a normalized target falls in (used for depth and mask lookups).
pub fn target_pixel_cell(t: PointTarget, cam: &CameraIntrinsics) -> (u32, u32) {
    let (x, y) = normalized_to_pixel(t, cam);
    let px = (x.floor() as u32).min(cam.width - 1);
    let py = (y.floor() as u32).min(cam.height - 1);
    (px, py)
}

/// Back-project continuous pixel coordinates with metric depth into the camera frame.
pub fn back_project_pixel(x_px: f64, y_px: f64, z_mm: f64, cam: &CameraIntrinsics) -> Point3 {
    Point3::new(
        (x_px - cam.cx) * z_mm / cam.fx,
        (y_px - cam.cy) * z_mm / cam.fy,
        z_mm,
    )
}

/// Back-project a normalized target into the camera frame (millimeters).
pub fn back_project(t: PointTarget, cam: &CameraIntrinsics) -> Result<Point3, CameraError> {
    if t.z_mm == 0 {
        return Err(CameraError::DegenerateDepth);
    }
    let (x_px, y_px) = normalized_to_pixel(t, cam);
    Ok(back_project_pixel(x_px, y_px, t.z_mm as f64, cam))
}

/// Project a camera-frame point to continuous pixel coordinates.
pub fn project_to_pixel(p: &Point3, cam: &CameraIntrinsics) -> Result<(f64, f64), CameraError> {
    if p.z <= 0.0 {
        return Err(CameraError::BehindCamera { z: p.z });
    }
    Ok((cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy))
}

/// Project a camera-frame point onto the normalized target grid.
///
/// Depth rounds to the nearest millimeter. Points projecting outside the image
/// are an `OutOfFrustum` error rather than being clamped.
pub fn project(p: &Point3, cam: &CameraIntrinsics) -> Result<PointTarget, CameraError> {
    let (x_px, y_px) = project_to_pixel(p, cam)?;
    let (u, v) = pixel_to_normalized(x_px, y_px, cam).map_err(|_| CameraError::OutOfFrustum {
        x: x_px,
        y: y_px,
        width: cam.width,
        height: cam.height,
    })?;
    Ok(PointTarget {
        u,
        v,
        z_mm: p.z.round() as u32,
    })
}
