//! The data engine: lifting 2D touchable annotations into `(u, v, Z)` targets
//! and synthesizing air-point queries over the 26 camera-frame directions.
//!
//! Every emitted air query carries a witness target that was re-checked, after
//! integer quantization, against the same relation and occupancy predicates
//! the evaluator applies. The ground truth stores the witness's exact anchor
//! distance as `r_star_mm`, so evaluation never depends on the sampler.

use crate::camera::{
    back_project, pixel_to_normalized, project, CameraError, CameraIntrinsics, Point3, PointTarget,
};
use crate::depth::DepthMap;
use crate::outparse::{serialize_points, PointList};
use crate::relations::{
    in_between_corridor, in_direction_cone, Direction26, OffsetSpec, RelationError, RelationParams,
};
use crate::scene::{body_length, is_occupied, Scene, SceneObject};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Rejection-sampling budget per query before it is skipped.
pub const MAX_ATTEMPTS: u32 = 64;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("all annotation points fell on depth holes")]
    EmptyLift,
    #[error("annotation point ({x}, {y}) outside the image")]
    AnnotationOutsideImage { x: f64, y: f64 },
    #[error("no satisfying free-space target for {family:?} after {attempts} attempts")]
    Unsatisfiable { family: QueryFamily, attempts: u32 },
    #[error("family {family:?} needs {need} objects, scene has {have}")]
    NotEnoughObjects {
        family: QueryFamily,
        have: usize,
        need: usize,
    },
    #[error("bad family mix: {0}")]
    BadMix(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, message: impl ToString) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Query families. The five air families mirror the dataset composition
/// categories; touchable queries are lifted from 2D annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFamily {
    Touchable,
    DirOnly,
    DirOffset,
    BodyLength,
    Between,
    BetweenOffset,
}

impl QueryFamily {
    pub const AIR: [QueryFamily; 5] = [
        QueryFamily::DirOnly,
        QueryFamily::DirOffset,
        QueryFamily::BodyLength,
        QueryFamily::Between,
        QueryFamily::BetweenOffset,
    ];

    pub fn is_air(self) -> bool {
        self != QueryFamily::Touchable
    }

    /// Does this family carry a required distance (and thus metric scoring)?
    pub fn has_metric(self) -> bool {
        matches!(
            self,
            QueryFamily::DirOffset | QueryFamily::BodyLength | QueryFamily::BetweenOffset
        )
    }

    pub fn uses_corridor(self) -> bool {
        matches!(self, QueryFamily::Between | QueryFamily::BetweenOffset)
    }

    /// Reporting group, matching the by-category result breakdown.
    pub fn group(self) -> &'static str {
        match self {
            QueryFamily::Touchable => "touchable",
            QueryFamily::DirOnly | QueryFamily::DirOffset => "direction",
            QueryFamily::Between | QueryFamily::BetweenOffset => "between",
            QueryFamily::BodyLength => "body_length",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QueryFamily::Touchable => "touchable",
            QueryFamily::DirOnly => "dir_only",
            QueryFamily::DirOffset => "dir_offset",
            QueryFamily::BodyLength => "body_length",
            QueryFamily::Between => "between",
            QueryFamily::BetweenOffset => "between_offset",
        }
    }
}

/// Constraint record sufficient to re-evaluate any prediction, given the
/// referenced scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Valid-region mask reference plus the reference depth source (the row's
    /// depth map).
    Touchable {
        detections: String,
        mask_object: String,
    },
    Air {
        detections: String,
        /// Anchor object ids: one for direction and body-length queries, two
        /// (corridor endpoints, distance anchor first) for between queries.
        anchors: Vec<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        direction_code: Option<u8>,
        /// Exact required distance from the first anchor's proxy center.
        #[serde(skip_serializing_if = "Option::is_none")]
        r_star_mm: Option<f64>,
        corridor: bool,
    },
}

/// One QA sample. Also the dataset JSONL row format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub family: QueryFamily,
    pub image: String,
    pub depth: String,
    pub intrinsics: String,
    pub instruction: String,
    pub refs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_code: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<OffsetSpec>,
    /// Ground-truth targets in the canonical bracketed syntax. For air
    /// queries this is the generator's witness point.
    pub answer_text: String,
    pub gt: GroundTruth,
}

impl Query {
    /// Field-presence rules per family.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let fail = |m: String| Err(DatagenError::InvalidQuery(m));
        if self.instruction.is_empty() {
            return fail(format!("{}: empty instruction", self.id));
        }
        let expect_refs = if self.family.uses_corridor() { 2 } else { 1 };
        if self.refs.len() != expect_refs {
            return fail(format!(
                "{}: {:?} needs {} refs",
                self.id, self.family, expect_refs
            ));
        }
        let needs_direction = matches!(
            self.family,
            QueryFamily::DirOnly | QueryFamily::DirOffset | QueryFamily::BodyLength
        );
        if self.direction_code.is_some() != needs_direction {
            return fail(format!(
                "{}: direction presence mismatch for {:?}",
                self.id, self.family
            ));
        }
        if self.offset.is_some() != self.family.has_metric() {
            return fail(format!(
                "{}: offset presence mismatch for {:?}",
                self.id, self.family
            ));
        }
        match (&self.gt, self.family) {
            (GroundTruth::Touchable { .. }, QueryFamily::Touchable) => {}
            (
                GroundTruth::Air {
                    anchors,
                    direction_code,
                    r_star_mm,
                    corridor,
                    ..
                },
                f,
            ) if f.is_air() => {
                if anchors.len() != expect_refs {
                    return fail(format!("{}: gt anchors mismatch", self.id));
                }
                if direction_code.is_some() != needs_direction {
                    return fail(format!("{}: gt direction mismatch", self.id));
                }
                if *corridor != f.uses_corridor() {
                    return fail(format!("{}: gt corridor mismatch", self.id));
                }
                match r_star_mm {
                    Some(r) if *r < 0.0 => return fail(format!("{}: negative r*", self.id)),
                    Some(_) if !f.has_metric() => {
                        return fail(format!("{}: unexpected r* for {:?}", self.id, f))
                    }
                    None if f.has_metric() => {
                        return fail(format!("{}: missing r* for {:?}", self.id, f))
                    }
                    _ => {}
                }
            }
            _ => return fail(format!("{}: gt kind does not match family", self.id)),
        }
        Ok(())
    }
}

/// Relative file paths a generated query refers back to.
#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub image: String,
    pub depth: String,
    pub intrinsics: String,
    pub detections: String,
}

/// Outcome of lifting a set of 2D annotation points.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedTouchable {
    pub targets: Vec<PointTarget>,
    /// Annotation points dropped because they fell on depth holes.
    pub dropped: usize,
}

/// Pair each 2D annotation with the depth at its own pixel.
///
/// Points on depth holes are dropped, never interpolated. Emitted depths are
/// exactly the depth-map values at the annotation pixels.
pub fn lift_touchable(
    annotations: &[(f64, f64)],
    depth: &DepthMap,
    cam: &CameraIntrinsics,
) -> Result<LiftedTouchable, DatagenError> {
    let mut targets = Vec::with_capacity(annotations.len());
    let mut dropped = 0usize;
    for &(x, y) in annotations {
        let (u, v) = pixel_to_normalized(x, y, cam)
            .map_err(|_| DatagenError::AnnotationOutsideImage { x, y })?;
        let (px, py) = (x.floor() as u32, y.floor() as u32);
        if !depth.is_valid_at(px, py) {
            dropped += 1;
            continue;
        }
        targets.push(PointTarget {
            u,
            v,
            z_mm: depth.value_at(px, py),
        });
    }
    if targets.is_empty() {
        return Err(DatagenError::EmptyLift);
    }
    Ok(LiftedTouchable { targets, dropped })
}

fn orthonormal_basis(axis: &Point3) -> (Point3, Point3) {
    let helper = if axis.x.abs() < 0.9 {
        Point3::new(1.0, 0.0, 0.0)
    } else {
        Point3::new(0.0, 1.0, 0.0)
    };
    let e1 = axis
        .cross(&helper)
        .normalized()
        .expect("helper not parallel");
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Uniform unit vector within the cone of `half_angle_rad` around `axis`.
fn sample_unit_in_cone(rng: &mut impl Rng, axis: &Point3, half_angle_rad: f64) -> Point3 {
    let cos_theta = rng.random_range(half_angle_rad.cos()..=1.0);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let (e1, e2) = orthonormal_basis(axis);
    axis.scale(cos_theta)
        .add(&e1.scale(sin_theta * phi.cos()))
        .add(&e2.scale(sin_theta * phi.sin()))
}

/// Project a sampled 3D point onto the target grid and back, returning the
/// quantized target and its back-projection.
fn quantize_witness(p: &Point3, cam: &CameraIntrinsics) -> Option<(PointTarget, Point3)> {
    let target = project(p, cam).ok()?;
    if target.z_mm == 0 {
        return None;
    }
    let back = back_project(target, cam).expect("nonzero depth");
    Some((target, back))
}

fn render_offset_mm(mm: f64) -> String {
    format!("{} mm", mm.round() as i64)
}

fn body_count_words(n: f64) -> String {
    match n as i64 {
        1 => "one body length".to_string(),
        2 => "two body lengths".to_string(),
        3 => "three body lengths".to_string(),
        k => format!("{k} body lengths"),
    }
}

/// Natural phrase for a direction, used only for instruction rendering.
fn direction_phrase(d: Direction26) -> String {
    match d.components() {
        (1, 0, 0) => "to the right of".to_string(),
        (-1, 0, 0) => "to the left of".to_string(),
        (0, -1, 0) => "above".to_string(),
        (0, 1, 0) => "below".to_string(),
        (0, 0, 1) => "behind".to_string(),
        (0, 0, -1) => "in front of".to_string(),
        _ => format!("{} of", d.label()),
    }
}

fn pick_object<'a>(rng: &mut impl Rng, scene: &'a Scene) -> &'a SceneObject {
    scene.objects.choose(rng).expect("scene has objects")
}

fn pick_two_objects<'a>(
    rng: &mut impl Rng,
    scene: &'a Scene,
) -> (&'a SceneObject, &'a SceneObject) {
    let first = rng.random_range(0..scene.objects.len());
    let mut second = rng.random_range(0..scene.objects.len() - 1);
    if second >= first {
        second += 1;
    }
    (&scene.objects[first], &scene.objects[second])
}

/// Synthesize one air query of the given family.
///
/// Deterministic for a fixed `(scene, family, seed)`. Fails with
/// `Unsatisfiable` when no free-space witness inside the image survives
/// quantization within the attempt budget.
pub fn synthesize_air_query(
    scene: &Scene,
    paths: &ScenePaths,
    family: QueryFamily,
    id: &str,
    seed: u64,
    params: &RelationParams,
) -> Result<Query, DatagenError> {
    let need = if family.uses_corridor() { 2 } else { 1 };
    if scene.objects.len() < need {
        return Err(DatagenError::NotEnoughObjects {
            family,
            have: scene.objects.len(),
            need,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = params.cone_half_angle_deg.to_radians();

    for _ in 0..MAX_ATTEMPTS {
        match family {
            QueryFamily::DirOnly | QueryFamily::DirOffset | QueryFamily::BodyLength => {
                let obj = pick_object(&mut rng, scene);
                let dir = Direction26::from_code(rng.random_range(0..26)).expect("code in range");
                let (offset, radius) = match family {
                    QueryFamily::DirOnly => (None, rng.random_range(150.0..600.0)),
                    QueryFamily::DirOffset => {
                        let mm = rng.random_range(100..=500) as f64;
                        (Some(OffsetSpec::MetricMm(mm)), mm)
                    }
                    QueryFamily::BodyLength => {
                        let n = *[1.0f64, 2.0, 3.0].choose(&mut rng).expect("nonempty");
                        (
                            Some(OffsetSpec::BodyLengths(n)),
                            n * body_length(&obj.proxy),
                        )
                    }
                    _ => unreachable!(),
                };
                // Sample inside 90% of the cone so quantization rarely pushes
                // the witness out; the re-check below stays authoritative.
                let w = sample_unit_in_cone(&mut rng, &dir.vector(), alpha * 0.9);
                let p3 = obj.proxy.center.add(&w.scale(radius));
                if p3.z <= 0.0 {
                    continue;
                }
                let Some((target, witness)) = quantize_witness(&p3, &scene.cam) else {
                    continue;
                };
                if !in_direction_cone(&witness, &obj.proxy.center, dir, params)? {
                    continue;
                }
                let exclude = [obj.id.clone()];
                if is_occupied(&witness, scene, &exclude, params.occupancy_inflation) {
                    continue;
                }
                let r_star = family
                    .has_metric()
                    .then(|| witness.distance(&obj.proxy.center));
                let phrase = direction_phrase(dir);
                let instruction = match (family, offset) {
                    (QueryFamily::DirOnly, _) => {
                        let templates = [
                            format!("Place a point {phrase} the {}.", obj.caption),
                            format!("Pick a free spot {phrase} the {}.", obj.caption),
                        ];
                        templates.choose(&mut rng).expect("nonempty").clone()
                    }
                    (QueryFamily::DirOffset, Some(OffsetSpec::MetricMm(mm))) => {
                        format!(
                            "Place a point {} {phrase} the {}.",
                            render_offset_mm(mm),
                            obj.caption
                        )
                    }
                    (QueryFamily::BodyLength, Some(OffsetSpec::BodyLengths(n))) => {
                        format!(
                            "Place a point {} {phrase} the {}.",
                            body_count_words(n),
                            obj.caption
                        )
                    }
                    _ => unreachable!(),
                };
                return Ok(Query {
                    id: id.to_string(),
                    family,
                    image: paths.image.clone(),
                    depth: paths.depth.clone(),
                    intrinsics: paths.intrinsics.clone(),
                    instruction,
                    refs: vec![obj.id.clone()],
                    direction_code: Some(dir.code()),
                    offset,
                    answer_text: serialize_points(&PointList::new(vec![target])),
                    gt: GroundTruth::Air {
                        detections: paths.detections.clone(),
                        anchors: vec![obj.id.clone()],
                        direction_code: Some(dir.code()),
                        r_star_mm: r_star,
                        corridor: false,
                    },
                });
            }
            QueryFamily::Between | QueryFamily::BetweenOffset => {
                let (a, b) = pick_two_objects(&mut rng, scene);
                let (ca, cb) = (a.proxy.center, b.proxy.center);
                let seg = cb.sub(&ca);
                if seg.norm() == 0.0 {
                    continue;
                }
                let (lo, hi) = params.corridor_span;
                let margin = 0.05 * (hi - lo);
                let t = rng.random_range(lo + margin..hi - margin);
                let radial = rng.random_range(0.0..0.8 * params.corridor_radius_mm);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let (e1, e2) = orthonormal_basis(&seg.normalized().expect("nonzero segment"));
                let p3 = ca
                    .add(&seg.scale(t))
                    .add(&e1.scale(radial * phi.cos()))
                    .add(&e2.scale(radial * phi.sin()));
                if p3.z <= 0.0 {
                    continue;
                }
                let Some((target, witness)) = quantize_witness(&p3, &scene.cam) else {
                    continue;
                };
                if !in_between_corridor(&witness, &ca, &cb, params)? {
                    continue;
                }
                let exclude = [a.id.clone(), b.id.clone()];
                if is_occupied(&witness, scene, &exclude, params.occupancy_inflation) {
                    continue;
                }
                let (offset, r_star, instruction) = if family == QueryFamily::BetweenOffset {
                    let r = witness.distance(&ca);
                    (
                        Some(OffsetSpec::MetricMm(r.round())),
                        Some(r),
                        format!(
                            "Place a point between the {} and the {}, about {} from the {}.",
                            a.caption,
                            b.caption,
                            render_offset_mm(r),
                            a.caption
                        ),
                    )
                } else {
                    let templates = [
                        format!(
                            "Place a point between the {} and the {}.",
                            a.caption, b.caption
                        ),
                        format!(
                            "Pick a spot between the {} and the {}.",
                            a.caption, b.caption
                        ),
                    ];
                    (
                        None,
                        None,
                        templates.choose(&mut rng).expect("nonempty").clone(),
                    )
                };
                return Ok(Query {
                    id: id.to_string(),
                    family,
                    image: paths.image.clone(),
                    depth: paths.depth.clone(),
                    intrinsics: paths.intrinsics.clone(),
                    instruction,
                    refs: vec![a.id.clone(), b.id.clone()],
                    direction_code: None,
                    offset,
                    answer_text: serialize_points(&PointList::new(vec![target])),
                    gt: GroundTruth::Air {
                        detections: paths.detections.clone(),
                        anchors: vec![a.id.clone(), b.id.clone()],
                        direction_code: None,
                        r_star_mm: r_star,
                        corridor: true,
                    },
                });
            }
            QueryFamily::Touchable => {
                return Err(DatagenError::InvalidQuery(
                    "touchable queries are lifted, not synthesized".into(),
                ))
            }
        }
    }
    Err(DatagenError::Unsatisfiable {
        family,
        attempts: MAX_ATTEMPTS,
    })
}

/// Build a touchable query from annotation pixels on an object.
pub fn build_touchable_query(
    scene: &Scene,
    paths: &ScenePaths,
    object_id: &str,
    annotations: &[(f64, f64)],
    id: &str,
    seed: u64,
) -> Result<Query, DatagenError> {
    let obj = scene
        .object(object_id)
        .ok_or_else(|| DatagenError::InvalidQuery(format!("{id}: unknown object {object_id}")))?;
    let lifted = lift_touchable(annotations, &scene.depth, &scene.cam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = [
        format!("Point to a spot where you could touch the {}.", obj.caption),
        format!("Give a contact point on the {}.", obj.caption),
        format!("Where should the gripper touch the {}?", obj.caption),
    ];
    Ok(Query {
        id: id.to_string(),
        family: QueryFamily::Touchable,
        image: paths.image.clone(),
        depth: paths.depth.clone(),
        intrinsics: paths.intrinsics.clone(),
        instruction: templates.choose(&mut rng).expect("nonempty").clone(),
        refs: vec![obj.id.clone()],
        direction_code: None,
        offset: None,
        answer_text: serialize_points(&PointList::new(lifted.targets)),
        gt: GroundTruth::Touchable {
            detections: paths.detections.clone(),
            mask_object: obj.id.clone(),
        },
    })
}

/// Apportion `total` queries across families by largest remainder.
pub fn plan_mix(
    total: usize,
    ratios: &BTreeMap<QueryFamily, f64>,
) -> Result<BTreeMap<QueryFamily, usize>, DatagenError> {
    if ratios.is_empty() {
        return Err(DatagenError::BadMix("no families in mix".into()));
    }
    if ratios.values().any(|&r| r < 0.0) {
        return Err(DatagenError::BadMix("negative ratio".into()));
    }
    let sum: f64 = ratios.values().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(DatagenError::BadMix(format!("ratios sum to {sum}, not 1")));
    }
    let mut counts: BTreeMap<QueryFamily, usize> = BTreeMap::new();
    let mut remainders: Vec<(QueryFamily, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (&family, &ratio) in ratios {
        let exact = total as f64 * ratio;
        let floor = exact.floor() as usize;
        counts.insert(family, floor);
        assigned += floor;
        remainders.push((family, exact - floor as f64));
    }
    // Stable sort keeps family order on remainder ties.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite remainders"));
    for (family, _) in remainders.into_iter().take(total - assigned) {
        *counts.get_mut(&family).expect("family present") += 1;
    }
    Ok(counts)
}

/// Air-family fractions of the 0.72M-sample corpus composition.
pub fn table1_air_mix() -> BTreeMap<QueryFamily, f64> {
    BTreeMap::from([
        (QueryFamily::DirOnly, 0.3518),
        (QueryFamily::DirOffset, 0.3366),
        (QueryFamily::BodyLength, 0.1933),
        (QueryFamily::Between, 0.0376),
        (QueryFamily::BetweenOffset, 0.0807),
    ])
}

pub fn uniform_air_mix() -> BTreeMap<QueryFamily, f64> {
    QueryFamily::AIR.iter().map(|&f| (f, 0.2)).collect()
}

/// Dataset-level bookkeeping written next to the JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total: usize,
    pub per_family: BTreeMap<QueryFamily, usize>,
    pub skipped: BTreeMap<QueryFamily, usize>,
    pub config_hash: String,
    pub seed: u64,
}

/// Write one query per line, plus a `manifest.json` sibling with per-family
/// counts and the configuration hash.
pub fn write_dataset(
    queries: &[Query],
    path: &Path,
    config_hash: &str,
    seed: u64,
    skipped: &BTreeMap<QueryFamily, usize>,
) -> Result<DatasetManifest, DatagenError> {
    let mut per_family: BTreeMap<QueryFamily, usize> = BTreeMap::new();
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for q in queries {
        q.validate()?;
        *per_family.entry(q.family).or_insert(0) += 1;
        serde_json::to_writer(&mut file, q).map_err(|e| io_err(path, e))?;
        file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    file.flush().map_err(|e| io_err(path, e))?;
    let manifest = DatasetManifest {
        total: queries.len(),
        per_family,
        skipped: skipped.clone(),
        config_hash: config_hash.to_string(),
        seed,
    };
    let manifest_path = path.with_file_name("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialize"),
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Query>, DatagenError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut queries = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| io_err(path, e))?;
        q.validate()?;
        queries.push(q);
    }
    Ok(queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{PixelMask, ProxyBox, SceneObject};

    fn test_scene() -> Scene {
        let cam = CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap();
        let depth = DepthMap::constant(640, 480, 4000);
        let object = |id: &str, caption: &str, center: Point3| {
            let mut mask = PixelMask::new(640, 480);
            for y in 0..4 {
                for x in 0..4 {
                    mask.set(x, y, true);
                }
            }
            SceneObject {
                id: id.into(),
                caption: caption.into(),
                bbox: [0, 0, 4, 4],
                mask,
                proxy: ProxyBox {
                    center,
                    half_extents: (50.0, 50.0, 50.0),
                },
            }
        };
        Scene {
            cam,
            depth,
            objects: vec![
                object("obj0", "red box", Point3::new(0.0, 0.0, 2000.0)),
                object("obj1", "blue box", Point3::new(400.0, 0.0, 2000.0)),
            ],
        }
    }

    fn test_paths() -> ScenePaths {
        ScenePaths {
            image: "s/rgb.png".into(),
            depth: "s/depth.png".into(),
            intrinsics: "s/intrinsics.json".into(),
            detections: "s/detections.jsonl".into(),
        }
    }

    #[test]
    fn dir_offset_query_carries_anchor_direction_and_r_star() {
        let scene = test_scene();
        let params = RelationParams::default();
        for seed in 0..20u64 {
            let q = synthesize_air_query(
                &scene,
                &test_paths(),
                QueryFamily::DirOffset,
                "q0",
                seed,
                &params,
            )
            .unwrap();
            q.validate().unwrap();
            let GroundTruth::Air {
                anchors,
                direction_code,
                r_star_mm,
                corridor,
                ..
            } = &q.gt
            else {
                panic!("air ground truth expected");
            };
            assert_eq!(anchors, &q.refs);
            assert_eq!(*direction_code, q.direction_code);
            assert!(!corridor);
            let Some(OffsetSpec::MetricMm(intent)) = q.offset else {
                panic!("metric offset expected");
            };
            // r* is the quantized witness distance: within a few millimeters
            // of the stated offset at desk scale.
            let r_star = r_star_mm.unwrap();
            assert!(
                (r_star - intent).abs() < 5.0,
                "seed {seed}: r* {r_star} vs stated offset {intent}"
            );
            let anchor = scene.object(&anchors[0]).unwrap();
            assert!(q.instruction.contains(&anchor.caption));
        }
    }

    #[test]
    fn between_query_anchors_are_the_two_referenced_objects() {
        let scene = test_scene();
        let params = RelationParams::default();
        let q = synthesize_air_query(
            &scene,
            &test_paths(),
            QueryFamily::Between,
            "q0",
            5,
            &params,
        )
        .unwrap();
        q.validate().unwrap();
        let GroundTruth::Air {
            anchors,
            corridor,
            r_star_mm,
            ..
        } = &q.gt
        else {
            panic!("air ground truth expected");
        };
        assert_eq!(anchors.len(), 2);
        assert_ne!(anchors[0], anchors[1]);
        assert_eq!(anchors, &q.refs);
        assert!(corridor);
        assert!(r_star_mm.is_none());
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let scene = test_scene();
        let params = RelationParams::default();
        for family in QueryFamily::AIR {
            let a = synthesize_air_query(&scene, &test_paths(), family, "q", 77, &params).unwrap();
            let b = synthesize_air_query(&scene, &test_paths(), family, "q", 77, &params).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn every_witness_passes_the_evaluator() {
        // Mini self-consistency loop: the emitted witness point must survive
        // the relation, occupancy, and metric checks it will be scored by.
        use crate::evalbench::eval_air;
        use crate::outparse::parse_points;
        let scene = test_scene();
        let params = RelationParams::default();
        for family in QueryFamily::AIR {
            for seed in 0..50u64 {
                let q = synthesize_air_query(&scene, &test_paths(), family, "q", seed, &params)
                    .unwrap();
                let witness = parse_points(&q.answer_text).unwrap();
                let rec = eval_air(&witness, &q, &scene, &params, true).unwrap();
                assert!(
                    rec.points.iter().all(|p| p.dir_passed()),
                    "{family:?} seed {seed}"
                );
                if family.has_metric() {
                    assert!(
                        rec.points.iter().all(|p| p.metric_bias_mm == Some(0.0)),
                        "{family:?} seed {seed}: nonzero witness bias"
                    );
                }
            }
        }
    }

    #[test]
    fn lift_touchable_direct_lookup() {
        let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let mut depth = DepthMap::constant(640, 480, 1432);
        let out = lift_touchable(&[(100.2, 50.7)], &depth, &cam).unwrap();
        assert_eq!(out.targets.len(), 1);
        assert_eq!(out.targets[0].z_mm, 1432);
        assert_eq!(out.dropped, 0);

        depth.set_hole(100, 50);
        let out =
            lift_touchable(&[(100.2, 50.7), (10.0, 10.0), (20.0, 20.0)], &depth, &cam).unwrap();
        assert_eq!(out.targets.len(), 2);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn lift_touchable_all_holes_is_empty() {
        let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let mut depth = DepthMap::constant(640, 480, 900);
        depth.set_hole(5, 5);
        assert!(matches!(
            lift_touchable(&[(5.5, 5.5)], &depth, &cam),
            Err(DatagenError::EmptyLift)
        ));
        assert!(matches!(
            lift_touchable(&[(-1.0, 5.0)], &depth, &cam),
            Err(DatagenError::AnnotationOutsideImage { .. })
        ));
    }

    #[test]
    fn lift_touchable_conserves_counts() {
        let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let mut depth = DepthMap::constant(640, 480, 700);
        for x in 0..15 {
            depth.set_hole(x * 2, 0);
        }
        let annotations: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 + 0.5, 0.5)).collect();
        let out = lift_touchable(&annotations, &depth, &cam).unwrap();
        assert_eq!(out.targets.len() + out.dropped, annotations.len());
        for t in &out.targets {
            let (px, py) = crate::camera::target_pixel_cell(*t, &cam);
            assert_eq!(t.z_mm, depth.value_at(px, py));
        }
    }

    #[test]
    fn plan_mix_composition_ratios() {
        let counts = plan_mix(100, &table1_air_mix()).unwrap();
        assert_eq!(counts[&QueryFamily::DirOnly], 35);
        assert_eq!(counts[&QueryFamily::DirOffset], 34);
        assert_eq!(counts[&QueryFamily::BodyLength], 19);
        assert_eq!(counts[&QueryFamily::Between], 4);
        assert_eq!(counts[&QueryFamily::BetweenOffset], 8);
        assert_eq!(counts.values().sum::<usize>(), 100);
    }

    #[test]
    fn plan_mix_edge_cases() {
        let zero = plan_mix(0, &table1_air_mix()).unwrap();
        assert!(zero.values().all(|&c| c == 0));

        let single = plan_mix(7, &BTreeMap::from([(QueryFamily::DirOnly, 1.0)])).unwrap();
        assert_eq!(single[&QueryFamily::DirOnly], 7);

        let bad = BTreeMap::from([(QueryFamily::DirOnly, 0.5), (QueryFamily::Between, 0.4)]);
        assert!(matches!(plan_mix(10, &bad), Err(DatagenError::BadMix(_))));
    }

    #[test]
    fn plan_mix_counts_always_sum_to_total() {
        for total in [1usize, 13, 97, 1000, 99_999] {
            let counts = plan_mix(total, &table1_air_mix()).unwrap();
            assert_eq!(counts.values().sum::<usize>(), total);
        }
    }
}
