//! Depth-map storage and I/O, the three-channel uint8 depth encoding, and the
//! alternative XYZ "geometry map" encoding.
//!
//! Depth is integer millimeters. Holes carry value 0 and are tracked in a
//! validity mask; any stage that touches a hole errors instead of substituting
//! a value.

use crate::camera::{back_project_pixel, target_pixel_cell, CameraIntrinsics, PointTarget};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Depth values must fit in three bytes: `[0, 2^24)` millimeters.
pub const MAX_ENCODABLE_MM: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("depth hole at pixel ({x}, {y})")]
    InvalidDepth { x: u32, y: u32 },
    #[error("depth value {value} mm exceeds the 3-byte encoding limit")]
    DepthOverflow { value: u32 },
    #[error("degenerate quantization volume on axis {axis}: min {min} >= max {max}")]
    BadVolume { axis: char, min: f64, max: f64 },
    #[error("depth value {value} mm at ({x}, {y}) does not fit 16-bit PNG storage")]
    PngRangeExceeded { x: u32, y: u32, value: u32 },
    #[error("dimension mismatch: expected {expected} values for {width}x{height}")]
    DimensionMismatch {
        expected: usize,
        width: u32,
        height: u32,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, message: impl ToString) -> DepthError {
    DepthError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Per-pixel metric depth in millimeters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    values: Vec<u32>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Build from raw values; zeros are holes.
    pub fn from_values(width: u32, height: u32, values: Vec<u32>) -> Result<Self, DepthError> {
        let expected = (width as usize) * (height as usize);
        if values.len() != expected {
            return Err(DepthError::DimensionMismatch {
                expected,
                width,
                height,
            });
        }
        let valid = values.iter().map(|&z| z > 0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: u32, height: u32, z_mm: u32) -> Self {
        let n = (width as usize) * (height as usize);
        Self {
            width,
            height,
            values: vec![z_mm; n],
            valid: vec![z_mm > 0; n],
        }
    }

    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize) * (self.width as usize) + (x as usize)
    }

    pub fn value_at(&self, x: u32, y: u32) -> u32 {
        self.values[self.index(x, y)]
    }

    pub fn is_valid_at(&self, x: u32, y: u32) -> bool {
        self.valid[self.index(x, y)]
    }

    /// Punch a hole at a pixel (value 0, marked invalid).
    pub fn set_hole(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.values[i] = 0;
        self.valid[i] = false;
    }

    pub fn set_value(&mut self, x: u32, y: u32, z_mm: u32) {
        let i = self.index(x, y);
        self.values[i] = z_mm;
        self.valid[i] = z_mm > 0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Depth at a pixel, erroring on holes.
    pub fn at(&self, x: u32, y: u32) -> Result<u32, DepthError> {
        if self.is_valid_at(x, y) {
            Ok(self.value_at(x, y))
        } else {
            Err(DepthError::InvalidDepth { x, y })
        }
    }

    /// Depth at the pixel cell a normalized target falls in.
    pub fn lookup(&self, t: PointTarget, cam: &CameraIntrinsics) -> Result<u32, DepthError> {
        debug_assert!(cam.width == self.width && cam.height == self.height);
        let (x, y) = target_pixel_cell(t, cam);
        self.at(x, y)
    }

    /// Write as 16-bit grayscale PNG plus a JSON sidecar declaring units.
    ///
    /// PNG16 limits storable depth to < 65536 mm; larger values error.
    pub fn save_png16(&self, path: &Path) -> Result<(), DepthError> {
        let mut buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let z = self.value_at(x, y);
                if z > u16::MAX as u32 {
                    return Err(DepthError::PngRangeExceeded { x, y, value: z });
                }
                buf.put_pixel(x, y, image::Luma([z as u16]));
            }
        }
        buf.save(path).map_err(|e| io_err(path, e))?;
        DepthSidecar::depth16()
            .save(&sidecar_path(path))
            .map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load_png16(path: &Path) -> Result<Self, DepthError> {
        let img = image::open(path)
            .map_err(|e| io_err(path, e))?
            .into_luma16();
        let (width, height) = img.dimensions();
        let values = img.pixels().map(|p| p.0[0] as u32).collect();
        Self::from_values(width, height, values)
    }
}

/// Three uint8 channels per pixel holding an encoded depth or geometry value.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDepthImage {
    pub width: u32,
    pub height: u32,
    /// Row-major `[ch0, ch1, ch2]` triples.
    pub channels: Vec<[u8; 3]>,
}

impl EncodedDepthImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.channels[(y as usize) * (self.width as usize) + (x as usize)]
    }

    /// Write as a standard 8-bit RGB PNG plus a sidecar naming the encoding.
    pub fn save_png(&self, path: &Path, sidecar: &DepthSidecar) -> Result<(), DepthError> {
        let mut buf: image::ImageBuffer<image::Rgb<u8>, Vec<u8>> =
            image::ImageBuffer::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                buf.put_pixel(x, y, image::Rgb(self.pixel(x, y)));
            }
        }
        buf.save(path).map_err(|e| io_err(path, e))?;
        sidecar
            .save(&sidecar_path(path))
            .map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, DepthError> {
        let img = image::open(path).map_err(|e| io_err(path, e))?.into_rgb8();
        let (width, height) = img.dimensions();
        let channels = img.pixels().map(|p| p.0).collect();
        Ok(Self {
            width,
            height,
            channels,
        })
    }
}

/// Sidecar metadata written next to every depth artifact, declaring units and
/// byte layout so alternative layouts stay interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub units: String,
    pub encoding: String,
    pub hole_value: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume: Option<GeometryVolume>,
}

impl DepthSidecar {
    pub fn depth16() -> Self {
        Self {
            units: "millimeter".into(),
            encoding: "grayscale16".into(),
            hole_value: 0,
            volume: None,
        }
    }

    pub fn depth_3ch() -> Self {
        Self {
            units: "millimeter".into(),
            encoding: "depth24-big-endian".into(),
            hole_value: 0,
            volume: None,
        }
    }

    pub fn geometry(volume: GeometryVolume) -> Self {
        Self {
            units: "millimeter".into(),
            encoding: "geometry-xyz-u8".into(),
            hole_value: 0,
            volume: Some(volume),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("sidecar serialize"),
        )
    }
}

/// Sidecar file path for an image: same stem, `.json` extension.
pub fn sidecar_path(image_path: &Path) -> std::path::PathBuf {
    image_path.with_extension("json")
}

/// Split depth into three big-endian bytes per pixel.
///
/// Lossless up to 16.777 m and monotone: larger depth sorts later in
/// `(ch0, ch1, ch2)` lexicographic order.
pub fn encode_depth_3ch(d: &DepthMap) -> Result<EncodedDepthImage, DepthError> {
    let mut channels = Vec::with_capacity(d.values.len());
    for &z in &d.values {
        if z >= MAX_ENCODABLE_MM {
            return Err(DepthError::DepthOverflow { value: z });
        }
        channels.push([(z >> 16) as u8, (z >> 8) as u8, z as u8]);
    }
    Ok(EncodedDepthImage {
        width: d.width,
        height: d.height,
        channels,
    })
}

/// Exact inverse of [`encode_depth_3ch`].
pub fn decode_depth_3ch(e: &EncodedDepthImage) -> DepthMap {
    let values = e
        .channels
        .iter()
        .map(|&[c0, c1, c2]| ((c0 as u32) << 16) | ((c1 as u32) << 8) | (c2 as u32))
        .collect();
    DepthMap::from_values(e.width, e.height, values).expect("encoded image is well-formed")
}

/// Camera-frame axis-aligned volume used to quantize XYZ coordinates, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryVolume {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GeometryVolume {
    pub fn validate(&self) -> Result<(), DepthError> {
        for (i, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
            if self.min[i] >= self.max[i] {
                return Err(DepthError::BadVolume {
                    axis,
                    min: self.min[i],
                    max: self.max[i],
                });
            }
        }
        Ok(())
    }

    /// Affine code for one coordinate: 0 -> min, 255 -> max, clamped outside.
    pub fn quantize(&self, axis: usize, value: f64) -> u8 {
        let t = (value - self.min[axis]) / (self.max[axis] - self.min[axis]);
        (t.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    pub fn dequantize(&self, axis: usize, code: u8) -> f64 {
        self.min[axis] + (code as f64 / 255.0) * (self.max[axis] - self.min[axis])
    }
}

/// Back-project every pixel and quantize its `(X, Y, Z)` into three uint8
/// channels over `volume`. Holes encode as `(0, 0, 0)`.
pub fn encode_geometry_map(
    d: &DepthMap,
    cam: &CameraIntrinsics,
    volume: &GeometryVolume,
) -> Result<EncodedDepthImage, DepthError> {
    volume.validate()?;
    let mut channels = Vec::with_capacity(d.values.len());
    for y in 0..d.height {
        for x in 0..d.width {
            if !d.is_valid_at(x, y) {
                channels.push([0, 0, 0]);
                continue;
            }
            let z = d.value_at(x, y) as f64;
            let p = back_project_pixel(x as f64 + 0.5, y as f64 + 0.5, z, cam);
            channels.push([
                volume.quantize(0, p.x),
                volume.quantize(1, p.y),
                volume.quantize(2, p.z),
            ]);
        }
    }
    Ok(EncodedDepthImage {
        width: d.width,
        height: d.height,
        channels,
    })
}
