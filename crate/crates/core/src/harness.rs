//! Synthetic-scene generator and oracle predictors.
//!
//! Scenes are axis-aligned cuboids rasterized through the pinhole model, so
//! every geometric ground truth is analytic: proxy boxes of camera-facing
//! cuboids are exact up to depth quantization, and each oracle's score has a
//! closed-form or simulated expectation.

use crate::camera::{project, CameraIntrinsics, Point3, PointTarget};
use crate::datagen::{GroundTruth, Query};
use crate::depth::{DepthMap, GeometryVolume};
use crate::outparse::{parse_points, ParseError, PointList};
use crate::scene::{Detection, PixelMask, RleMask, Scene, SceneError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("could not place {requested} non-overlapping objects in the volume")]
    PlacementFailure { requested: usize },
    #[error("query {query}: answer text is not a valid witness: {source}")]
    BadWitness { query: String, source: ParseError },
    #[error("query {query}: anchor object {object} not in scene")]
    UnknownAnchor { query: String, object: String },
    #[error("noise sigma must be finite and nonnegative, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Everything needed to generate one synthetic RGB-D scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Inclusive object count range.
    pub object_count: (usize, usize),
    /// Full extent range per axis, millimeters.
    pub object_size_mm: (f64, f64),
    /// Camera-frame placement volume; must sit entirely in front of the camera.
    pub placement: GeometryVolume,
    pub cam: CameraIntrinsics,
    /// Background plane depth so every pixel has valid depth by default.
    pub background_depth_mm: u32,
    /// Fraction of pixels turned into depth holes, for exercising hole paths.
    pub hole_rate: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            object_count: (3, 6),
            object_size_mm: (80.0, 240.0),
            placement: GeometryVolume {
                min: [-450.0, -350.0, 1400.0],
                max: [450.0, 350.0, 2600.0],
            },
            cam: CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480)
                .expect("default intrinsics valid"),
            background_depth_mm: 4000,
            hole_rate: 0.0,
        }
    }
}

/// Axis-aligned spawn cuboid, camera frame, millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SpawnBox {
    pub fn contains(&self, p: &Point3, tol_mm: f64) -> bool {
        p.x >= self.min[0] - tol_mm
            && p.x <= self.max[0] + tol_mm
            && p.y >= self.min[1] - tol_mm
            && p.y <= self.max[1] + tol_mm
            && p.z >= self.min[2] - tol_mm
            && p.z <= self.max[2] + tol_mm
    }

    fn overlaps(&self, other: &SpawnBox, gap_mm: f64) -> bool {
        (0..3).all(|i| self.min[i] - gap_mm <= other.max[i] && self.max[i] + gap_mm >= other.min[i])
    }

    /// Depth (= ray parameter, since the ray direction has unit z) at which the
    /// camera ray through `(dx, dy, 1)` enters this box, if it hits.
    fn ray_entry(&self, dx: f64, dy: f64) -> Option<f64> {
        let dir = [dx, dy, 1.0];
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for (d, (&lo, &hi)) in dir.iter().zip(self.min.iter().zip(&self.max)) {
            if d.abs() < 1e-12 {
                if 0.0 < lo || 0.0 > hi {
                    return None;
                }
                continue;
            }
            let mut t0 = lo / d;
            let mut t1 = hi / d;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

/// A generated scene plus the artifacts the files-on-disk interface needs.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub detections: Vec<Detection>,
    pub spawn_boxes: Vec<SpawnBox>,
}

const CAPTION_COLORS: [&str; 10] = [
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white", "black", "brown",
];

fn caption_for(index: usize) -> String {
    if index < CAPTION_COLORS.len() {
        format!("{} box", CAPTION_COLORS[index])
    } else {
        format!("box {index}")
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec) -> Option<Vec<SpawnBox>> {
    let count = rng.random_range(spec.object_count.0..=spec.object_count.1);
    let mut boxes: Vec<SpawnBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..64 {
            let mut half = [0.0f64; 3];
            for h in &mut half {
                *h = rng.random_range(spec.object_size_mm.0..=spec.object_size_mm.1) / 2.0;
            }
            let mut min = [0.0f64; 3];
            let mut max = [0.0f64; 3];
            let mut fits = true;
            for i in 0..3 {
                let lo = spec.placement.min[i] + half[i];
                let hi = spec.placement.max[i] - half[i];
                if lo >= hi {
                    fits = false;
                    break;
                }
                let c = rng.random_range(lo..hi);
                min[i] = c - half[i];
                max[i] = c + half[i];
            }
            if !fits {
                continue;
            }
            let candidate = SpawnBox { min, max };
            if boxes.iter().all(|b| !b.overlaps(&candidate, 20.0)) {
                boxes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

/// Rasterize cuboids into a depth map and per-object masks: nearest surface
/// wins per pixel, background plane everywhere else. Deterministic per seed.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene, HarnessError> {
    spec.cam
        .validate()
        .map_err(|_| HarnessError::PlacementFailure { requested: 0 })?;
    // A fully occluded object would get an empty mask; retry with a salted
    // stream before giving up.
    for salt in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed
                .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let Some(boxes) = place_boxes(&mut rng, spec) else {
            continue;
        };
        let cam = spec.cam;
        let width = cam.width;
        let height = cam.height;

        // (depth_mm, winner_index) per pixel.
        let rows: Vec<Vec<(u32, Option<usize>)>> = (0..height)
            .into_par_iter()
            .map(|y| {
                let dy = (y as f64 + 0.5 - cam.cy) / cam.fy;
                (0..width)
                    .map(|x| {
                        let dx = (x as f64 + 0.5 - cam.cx) / cam.fx;
                        let mut best = (spec.background_depth_mm as f64, None);
                        for (i, b) in boxes.iter().enumerate() {
                            if let Some(t) = b.ray_entry(dx, dy) {
                                if t < best.0 {
                                    best = (t, Some(i));
                                }
                            }
                        }
                        (best.0.round() as u32, best.1)
                    })
                    .collect()
            })
            .collect();

        let mut depth = DepthMap::constant(width, height, 0);
        let mut masks: Vec<PixelMask> = (0..boxes.len())
            .map(|_| PixelMask::new(width, height))
            .collect();
        for (y, row) in rows.iter().enumerate() {
            for (x, &(z, winner)) in row.iter().enumerate() {
                depth.set_value(x as u32, y as u32, z);
                if let Some(i) = winner {
                    masks[i].set(x as u32, y as u32, true);
                }
            }
        }

        if spec.hole_rate > 0.0 {
            let mut hole_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x484F_4C45);
            for y in 0..height {
                for x in 0..width {
                    if hole_rng.random::<f64>() < spec.hole_rate {
                        depth.set_hole(x, y);
                    }
                }
            }
        }

        if masks.iter().any(|m| m.count() < 20) {
            continue;
        }

        let detections: Vec<Detection> = masks
            .iter()
            .enumerate()
            .map(|(i, mask)| Detection {
                id: format!("obj{i}"),
                caption: caption_for(i),
                bbox: mask.bbox().expect("mask nonempty"),
                rle_mask: RleMask::from_mask(mask),
            })
            .collect();

        match Scene::build(cam, depth, detections.clone()) {
            Ok(scene) => {
                return Ok(SyntheticScene {
                    scene,
                    detections,
                    spawn_boxes: boxes,
                })
            }
            // Excessive holes can starve an object of depth; retry.
            Err(SceneError::InsufficientDepth { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(HarnessError::PlacementFailure {
        requested: spec.object_count.0,
    })
}

/// Stand-ins for a trained model, from exact to adversarial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OracleKind {
    /// Emits the generator's witness point.
    Perfect,
    /// Witness with Gaussian depth noise (sigma in millimeters).
    NoisyDepth(f64),
    /// Correct radius from the anchor, uniformly random direction.
    RelationBlind,
    /// Uniform target anywhere in the frustum.
    Random,
}

impl std::str::FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(Self::Perfect),
            "relation-blind" => Ok(Self::RelationBlind),
            "random" => Ok(Self::Random),
            other => match other.strip_prefix("noisy:") {
                Some(sigma) => sigma
                    .parse::<f64>()
                    .map_err(|e| format!("bad sigma in {other:?}: {e}"))
                    .map(Self::NoisyDepth),
                None => Err(format!(
                    "unknown oracle {other:?}; expected perfect|noisy:<sigma>|relation-blind|random"
                )),
            },
        }
    }
}

fn witness_of(q: &Query) -> Result<PointList, HarnessError> {
    parse_points(&q.answer_text).map_err(|source| HarnessError::BadWitness {
        query: q.id.clone(),
        source,
    })
}

fn anchor_center(q: &Query, scene: &Scene) -> Result<Option<Point3>, HarnessError> {
    let GroundTruth::Air { anchors, .. } = &q.gt else {
        return Ok(None);
    };
    let id = anchors.first().expect("air ground truth has anchors");
    scene
        .object(id)
        .map(|o| Some(o.proxy.center))
        .ok_or_else(|| HarnessError::UnknownAnchor {
            query: q.id.clone(),
            object: id.clone(),
        })
}

/// Produce a prediction for one query. Deterministic per `(kind, query, seed)`.
pub fn run_oracle(
    kind: OracleKind,
    q: &Query,
    scene: &Scene,
    seed: u64,
) -> Result<PointList, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        OracleKind::Perfect => witness_of(q),
        OracleKind::NoisyDepth(sigma) => {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(HarnessError::BadSigma(sigma));
            }
            let noise = Normal::new(0.0, sigma).map_err(|_| HarnessError::BadSigma(sigma))?;
            let mut witness = witness_of(q)?;
            for p in &mut witness.points {
                let z = p.z_mm as f64 + noise.sample(&mut rng);
                p.z_mm = z.round().max(1.0) as u32;
            }
            Ok(witness)
        }
        OracleKind::RelationBlind => {
            let Some(center) = anchor_center(q, scene)? else {
                // Not an air query; pass the witness through.
                return witness_of(q);
            };
            let witness = witness_of(q)?;
            let radius = match &q.gt {
                GroundTruth::Air {
                    r_star_mm: Some(r), ..
                } => *r,
                _ => {
                    let w = witness.points.first().expect("witness nonempty");
                    crate::camera::back_project(*w, &scene.cam)
                        .expect("witness has nonzero depth")
                        .distance(&center)
                }
            };
            for _ in 0..64 {
                let v: [f64; 3] = UnitSphere.sample(&mut rng);
                let p = center.add(&Point3::new(v[0], v[1], v[2]).scale(radius));
                if p.z <= 0.0 {
                    continue;
                }
                if let Ok(target) = project(&p, &scene.cam) {
                    if target.z_mm > 0 {
                        return Ok(PointList::new(vec![target]));
                    }
                }
            }
            Ok(witness)
        }
        OracleKind::Random => {
            let target = PointTarget {
                u: rng.random_range(0..1000),
                v: rng.random_range(0..1000),
                z_mm: rng.random_range(200..=5000),
            };
            Ok(PointList::new(vec![target]))
        }
    }
}

/// Deterministic per-task seed derivation so parallel schedules cannot change
/// sampled values.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(splitmix64(master ^ stream).wrapping_add(splitmix64(index)))
}
