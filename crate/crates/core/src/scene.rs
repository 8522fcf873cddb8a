//! Scene model: detected objects with masks, lifted point clouds, camera-frame
//! proxy boxes, body length, and the free-space occupancy test.

use crate::camera::{back_project_pixel, CameraIntrinsics, Point3};
use crate::depth::DepthMap;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object {id}: only {valid} of {total} masked pixels have valid depth (need >= 50%)")]
    InsufficientDepth {
        id: String,
        valid: usize,
        total: usize,
    },
    #[error("cannot build a proxy box from {points} points (need >= 3)")]
    DegenerateObject { points: usize },
    #[error("object {0} has an empty mask")]
    EmptyMask(String),
    #[error("object {id}: mask extends outside bbox {bbox:?}")]
    MaskOutsideBbox { id: String, bbox: [u32; 4] },
    #[error("object {id}: bbox {bbox:?} outside image {width}x{height}")]
    BboxOutsideImage {
        id: String,
        bbox: [u32; 4],
        width: u32,
        height: u32,
    },
    #[error("duplicate object id {0}")]
    DuplicateId(String),
    #[error("run-length mask does not cover {width}x{height} pixels")]
    BadRle { width: u32, height: u32 },
    #[error("invalid trim percentiles ({lo}, {hi})")]
    BadTrim { lo: f64, hi: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, message: impl ToString) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Dense per-pixel boolean mask over the full image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.index(x, y);
        self.bits[i] = on;
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Tight bounding box `[x0, y0, x1, y1]` with exclusive upper bounds.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let mut lo = (u32::MAX, u32::MAX);
        let mut hi = (0u32, 0u32);
        let mut any = false;
        for (x, y) in self.iter_set() {
            any = true;
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        any.then(|| [lo.0, lo.1, hi.0 + 1, hi.1 + 1])
    }

    /// Row-major run lengths, alternating off/on and starting with an off run.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(width: u32, height: u32, counts: &[u32]) -> Result<Self, SceneError> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != (width as u64) * (height as u64) {
            return Err(SceneError::BadRle { width, height });
        }
        let mut bits = Vec::with_capacity(total as usize);
        let mut on = false;
        for &c in counts {
            bits.extend(std::iter::repeat_n(on, c as usize));
            on = !on;
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }
}

/// Axis-aligned camera-frame box summarizing an object's occupancy.
/// Its center is the anchor used by every relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyBox {
    pub center: Point3,
    pub half_extents: (f64, f64, f64),
}

impl ProxyBox {
    /// Closed-box membership with half extents scaled by `inflation`.
    pub fn contains(&self, p: &Point3, inflation: f64) -> bool {
        let (hx, hy, hz) = self.half_extents;
        (p.x - self.center.x).abs() <= hx * inflation
            && (p.y - self.center.y).abs() <= hy * inflation
            && (p.z - self.center.z).abs() <= hz * inflation
    }
}

/// Half the full box diagonal: the object-specific distance unit.
pub fn body_length(b: &ProxyBox) -> f64 {
    let (hx, hy, hz) = b.half_extents;
    (hx * hx + hy * hy + hz * hz).sqrt()
}

/// Per-axis percentile pair used to trim depth outliers before boxing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimPercentiles {
    pub lo: f64,
    pub hi: f64,
}

impl Default for TrimPercentiles {
    fn default() -> Self {
        Self { lo: 0.02, hi: 0.98 }
    }
}

impl TrimPercentiles {
    pub const NONE: Self = Self { lo: 0.0, hi: 1.0 };

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.lo >= 0.0 && self.lo < self.hi && self.hi <= 1.0 {
            Ok(())
        } else {
            Err(SceneError::BadTrim {
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Linear-interpolation percentile of a sorted slice at fraction `q`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// One camera-frame point per masked pixel with valid depth, taken at pixel centers.
///
/// Requires at least half the masked pixels to carry valid depth.
pub fn lift_object(
    id: &str,
    mask: &PixelMask,
    depth: &DepthMap,
    cam: &CameraIntrinsics,
) -> Result<Vec<Point3>, SceneError> {
    let total = mask.count();
    if total == 0 {
        return Err(SceneError::EmptyMask(id.to_string()));
    }
    let mut points = Vec::with_capacity(total);
    for (x, y) in mask.iter_set() {
        if depth.is_valid_at(x, y) {
            let z = depth.value_at(x, y) as f64;
            points.push(back_project_pixel(x as f64 + 0.5, y as f64 + 0.5, z, cam));
        }
    }
    if points.len() * 2 < total {
        return Err(SceneError::InsufficientDepth {
            id: id.to_string(),
            valid: points.len(),
            total,
        });
    }
    Ok(points)
}

/// Percentile-trimmed axis-aligned box around a point cloud.
///
/// Half extents are floored at 1 mm so degenerate clouds still yield a usable box.
pub fn build_proxy_box(points: &[Point3], trim: TrimPercentiles) -> Result<ProxyBox, SceneError> {
    trim.validate()?;
    if points.len() < 3 {
        return Err(SceneError::DegenerateObject {
            points: points.len(),
        });
    }
    let mut center = [0.0f64; 3];
    let mut half = [0.0f64; 3];
    for (axis, pick) in [|p: &Point3| p.x, |p: &Point3| p.y, |p: &Point3| p.z]
        .into_iter()
        .enumerate()
    {
        let mut coords: Vec<f64> = points.iter().map(pick).collect();
        coords.sort_unstable_by(f64::total_cmp);
        let lo = percentile(&coords, trim.lo);
        let hi = percentile(&coords, trim.hi);
        let c = (lo + hi) / 2.0;
        let mut h = ((hi - lo) / 2.0).max(1.0);
        // Points pile up exactly at the percentile endpoints (quantized depth
        // produces heavy ties), so the center/half rounding must never shave
        // the interval: widen by ulps until both endpoints are inside under
        // the same arithmetic `contains` uses.
        while hi - c > h || c - lo > h {
            h = h.next_up();
        }
        center[axis] = c;
        half[axis] = h;
    }
    Ok(ProxyBox {
        center: Point3::new(center[0], center[1], center[2]),
        half_extents: (half[0], half[1], half[2]),
    })
}

/// Detected object with its mask and derived proxy box.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub id: String,
    pub caption: String,
    /// Pixel rectangle `[x0, y0, x1, y1]`, exclusive upper bounds.
    pub bbox: [u32; 4],
    pub mask: PixelMask,
    pub proxy: ProxyBox,
}

/// A lifted scene: intrinsics, depth, and the objects detected in the image.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cam: CameraIntrinsics,
    pub depth: DepthMap,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Lift detections into proxy boxes with the default outlier trim.
    pub fn build(
        cam: CameraIntrinsics,
        depth: DepthMap,
        detections: Vec<Detection>,
    ) -> Result<Self, SceneError> {
        Self::build_with_trim(cam, depth, detections, TrimPercentiles::default())
    }

    pub fn build_with_trim(
        cam: CameraIntrinsics,
        depth: DepthMap,
        detections: Vec<Detection>,
        trim: TrimPercentiles,
    ) -> Result<Self, SceneError> {
        let mut objects = Vec::with_capacity(detections.len());
        let mut seen = std::collections::BTreeSet::new();
        for det in detections {
            if !seen.insert(det.id.clone()) {
                return Err(SceneError::DuplicateId(det.id));
            }
            let mask = PixelMask::from_rle(
                det.rle_mask.width,
                det.rle_mask.height,
                &det.rle_mask.counts,
            )?;
            let [x0, y0, x1, y1] = det.bbox;
            if x1 > cam.width || y1 > cam.height || x0 >= x1 || y0 >= y1 {
                return Err(SceneError::BboxOutsideImage {
                    id: det.id,
                    bbox: det.bbox,
                    width: cam.width,
                    height: cam.height,
                });
            }
            if mask
                .iter_set()
                .any(|(x, y)| x < x0 || x >= x1 || y < y0 || y >= y1)
            {
                return Err(SceneError::MaskOutsideBbox {
                    id: det.id,
                    bbox: det.bbox,
                });
            }
            let points = lift_object(&det.id, &mask, &depth, &cam)?;
            let proxy = build_proxy_box(&points, trim)?;
            objects.push(SceneObject {
                id: det.id,
                caption: det.caption,
                bbox: det.bbox,
                mask,
                proxy,
            });
        }
        Ok(Self {
            cam,
            depth,
            objects,
        })
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// True iff `p` lies inside any object's inflated proxy box whose id is not excluded.
pub fn is_occupied(p: &Point3, scene: &Scene, exclude: &[String], inflation: f64) -> bool {
    scene
        .objects
        .iter()
        .filter(|o| !exclude.iter().any(|e| e == &o.id))
        .any(|o| o.proxy.contains(p, inflation))
}

/// One detector output row as stored in the per-image detections JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub caption: String,
    pub bbox: [u32; 4],
    pub rle_mask: RleMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn from_mask(mask: &PixelMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            counts: mask.to_rle(),
        }
    }
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<(), SceneError> {
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for det in detections {
        serde_json::to_writer(&mut file, det).map_err(|e| io_err(path, e))?;
        file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    file.flush().map_err(|e| io_err(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, SceneError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(path, e))?);
    }
    Ok(out)
}
