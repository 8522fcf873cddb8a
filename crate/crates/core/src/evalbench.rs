//! Benchmark evaluator: per-query scoring of parsed point lists and
//! point-level micro aggregation.
//!
//! Metric semantics follow the by-category reporting protocol:
//!
//! - `DirPt`   = relation-passed points / all air points
//! - `MetPt`   = relation-passed points with bias <= tolerance / relation-passed
//!   points in metric-offset queries (the conditional denominator)
//! - `FullPt`  = points passing both checks / all points in metric-offset queries
//! - `MeanErr` = mean distance bias over relation-passed points in metric-offset
//!   queries, reported in centimeters
//!
//! A relation-passing point inside another object's inflated proxy box is
//! rejected. Every rate is reported next to its denominator, and a zero
//! denominator yields an absent rate rather than 0/0.

use crate::camera::{back_project, target_pixel_cell, CameraError, CameraIntrinsics};
use crate::datagen::{DatagenError, GroundTruth, Query, QueryFamily};
use crate::depth::{DepthError, DepthMap};
use crate::outparse::{parse_points, ParseError, PointList};
use crate::relations::{
    distance_bias, in_between_corridor, in_direction_cone, Direction26, RelationError,
    RelationParams,
};
use crate::scene::{is_occupied, PixelMask, Scene, SceneError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot aggregate an empty record list")]
    NoRecords,
    #[error("query {query}: unknown object {object}")]
    UnknownObject { query: String, object: String },
    #[error("query {query}: corridor anchors coincide")]
    DegenerateAnchors { query: String },
    #[error("query {query}: ground truth inconsistent: {message}")]
    BadGroundTruth { query: String, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Dataset(#[from] DatagenError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, message: impl ToString) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Per-point evaluation flags. Field presence tracks the query family:
/// `in_mask` and `depth_err_mm` for touchable points, the relation flags for
/// air points, `metric_bias_mm` only on relation-passed points of
/// metric-offset families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_mask: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupancy_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric_bias_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_err_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ref_depth_hole: bool,
}

impl PointOutcome {
    fn failed_air() -> Self {
        Self {
            in_mask: None,
            relation_ok: Some(false),
            occupancy_ok: None,
            metric_bias_mm: None,
            depth_err_mm: None,
            ref_depth_hole: false,
        }
    }

    /// Relation satisfied and not rejected by the occupancy filter.
    pub fn dir_passed(&self) -> bool {
        self.relation_ok == Some(true) && self.occupancy_ok != Some(false)
    }
}

/// Scored outcome for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub family: QueryFamily,
    pub points: Vec<PointOutcome>,
    /// Response was malformed (or missing); scored as one all-wrong point.
    pub parse_failed: bool,
    /// Per-query 2D accuracy for touchable queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_2d: Option<f64>,
}

impl EvalRecord {
    /// All-wrong placeholder for malformed or missing responses: one point,
    /// nothing passes.
    pub fn all_wrong(id: &str, family: QueryFamily) -> Self {
        let point = if family.is_air() {
            PointOutcome::failed_air()
        } else {
            PointOutcome {
                in_mask: Some(false),
                relation_ok: None,
                occupancy_ok: None,
                metric_bias_mm: None,
                depth_err_mm: None,
                ref_depth_hole: false,
            }
        };
        Self {
            id: id.to_string(),
            family,
            points: vec![point],
            parse_failed: true,
            acc_2d: (!family.is_air()).then_some(0.0),
        }
    }
}

/// Score a touchable prediction against the valid-region mask and the
/// reference depth at the predicted pixels.
///
/// A reference-depth hole excludes that point from the depth error (counted
/// via `ref_depth_hole`) but never from the 2D accuracy.
pub fn eval_touchable(
    id: &str,
    pred: &PointList,
    gt_mask: &PixelMask,
    ref_depth: &DepthMap,
    cam: &CameraIntrinsics,
) -> EvalRecord {
    if pred.is_empty() {
        // Empty output scores as zero accuracy over a single expected point.
        return EvalRecord::all_wrong(id, QueryFamily::Touchable);
    }
    let mut points = Vec::with_capacity(pred.len());
    let mut hits = 0usize;
    for t in &pred.points {
        let (px, py) = target_pixel_cell(*t, cam);
        let inside = gt_mask.get(px, py);
        hits += inside as usize;
        let (depth_err, hole) = if ref_depth.is_valid_at(px, py) {
            let err = (t.z_mm as f64 - ref_depth.value_at(px, py) as f64).abs();
            (Some(err), false)
        } else {
            (None, true)
        };
        points.push(PointOutcome {
            in_mask: Some(inside),
            relation_ok: None,
            occupancy_ok: None,
            metric_bias_mm: None,
            depth_err_mm: depth_err,
            ref_depth_hole: hole,
        });
    }
    let acc = hits as f64 / pred.len() as f64;
    EvalRecord {
        id: id.to_string(),
        family: QueryFamily::Touchable,
        points,
        parse_failed: false,
        acc_2d: Some(acc),
    }
}

struct AirConstraint {
    anchor: crate::camera::Point3,
    second_anchor: Option<crate::camera::Point3>,
    direction: Option<Direction26>,
    r_star_mm: Option<f64>,
    exclude: Vec<String>,
}

fn resolve_air_constraint(q: &Query, scene: &Scene) -> Result<AirConstraint, EvalError> {
    let GroundTruth::Air {
        anchors,
        direction_code,
        r_star_mm,
        corridor,
        ..
    } = &q.gt
    else {
        return Err(EvalError::BadGroundTruth {
            query: q.id.clone(),
            message: "air query without air ground truth".into(),
        });
    };
    let center_of = |id: &String| {
        scene
            .object(id)
            .map(|o| o.proxy.center)
            .ok_or_else(|| EvalError::UnknownObject {
                query: q.id.clone(),
                object: id.clone(),
            })
    };
    let anchor = center_of(anchors.first().ok_or_else(|| EvalError::BadGroundTruth {
        query: q.id.clone(),
        message: "no anchors".into(),
    })?)?;
    let second_anchor = if *corridor {
        let second = anchors.get(1).ok_or_else(|| EvalError::BadGroundTruth {
            query: q.id.clone(),
            message: "corridor needs two anchors".into(),
        })?;
        let c = center_of(second)?;
        if c == anchor {
            return Err(EvalError::DegenerateAnchors {
                query: q.id.clone(),
            });
        }
        Some(c)
    } else {
        None
    };
    let direction = direction_code.map(Direction26::from_code).transpose()?;
    if direction.is_none() && !corridor {
        return Err(EvalError::BadGroundTruth {
            query: q.id.clone(),
            message: "neither direction nor corridor".into(),
        });
    }
    Ok(AirConstraint {
        anchor,
        second_anchor,
        direction,
        r_star_mm: *r_star_mm,
        exclude: anchors.clone(),
    })
}

/// Score an air prediction: back-project each point, test the relation
/// (direction cone or between corridor), reject relation-passing points that
/// sit inside another object's inflated proxy box, and compute the distance
/// bias on surviving points of metric-offset queries.
///
/// Back-projection failures (zero depth) mark the point failed, not the query
/// invalid.
pub fn eval_air(
    pred: &PointList,
    q: &Query,
    scene: &Scene,
    params: &RelationParams,
    apply_occupancy: bool,
) -> Result<EvalRecord, EvalError> {
    let constraint = resolve_air_constraint(q, scene)?;
    if pred.is_empty() {
        return Ok(EvalRecord::all_wrong(&q.id, q.family));
    }
    let mut points = Vec::with_capacity(pred.len());
    for t in &pred.points {
        let Ok(p) = back_project(*t, &scene.cam) else {
            points.push(PointOutcome::failed_air());
            continue;
        };
        let relation = match (&constraint.direction, &constraint.second_anchor) {
            (Some(d), None) => {
                // A prediction exactly on the anchor has no direction: failed.
                in_direction_cone(&p, &constraint.anchor, *d, params).unwrap_or(false)
            }
            (None, Some(cb)) => in_between_corridor(&p, &constraint.anchor, cb, params)
                .expect("anchors checked distinct"),
            _ => unreachable!("constraint resolved to exactly one relation"),
        };
        let occupancy = (relation && apply_occupancy)
            .then(|| !is_occupied(&p, scene, &constraint.exclude, params.occupancy_inflation));
        let dir_passed = relation && occupancy != Some(false);
        let bias = match (dir_passed, q.family.has_metric(), constraint.r_star_mm) {
            (true, true, Some(r_star)) => Some(distance_bias(&p, &constraint.anchor, r_star)),
            (true, true, None) => {
                return Err(EvalError::BadGroundTruth {
                    query: q.id.clone(),
                    message: "metric family without r*".into(),
                })
            }
            _ => None,
        };
        points.push(PointOutcome {
            in_mask: None,
            relation_ok: Some(relation),
            occupancy_ok: occupancy,
            metric_bias_mm: bias,
            depth_err_mm: None,
            ref_depth_hole: false,
        });
    }
    Ok(EvalRecord {
        id: q.id.clone(),
        family: q.family,
        points,
        parse_failed: false,
        acc_2d: None,
    })
}

/// A rate together with the counts that produced it. `value` is absent when
/// the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: Option<f64>,
    pub num: usize,
    pub den: usize,
}

impl Rate {
    fn from_counts(num: usize, den: usize) -> Self {
        Self {
            value: (den > 0).then(|| num as f64 / den as f64),
            num,
            den,
        }
    }
}

/// A mean with its sample count. `value` is absent when no samples exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStat {
    pub value: Option<f64>,
    pub count: usize,
}

impl MeanStat {
    fn from_sum(sum: f64, count: usize) -> Self {
        Self {
            value: (count > 0).then(|| sum / count as f64),
            count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirSummary {
    pub dir_pt: Rate,
    pub met_pt_5cm: Rate,
    pub full_pt: Rate,
    pub mean_err_cm: MeanStat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchableSummary {
    /// Mean of per-query 2D accuracy (each query normalized by its own point
    /// count, then averaged over queries).
    pub acc_2d: MeanStat,
    /// Depth error pooled over points, split by mask membership, millimeters.
    pub mae_z_in_mm: MeanStat,
    pub mae_z_out_mm: MeanStat,
    pub mae_z_all_mm: MeanStat,
    /// Points excluded from the depth error because the reference depth had a
    /// hole at the predicted pixel.
    pub ref_depth_holes_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportCounts {
    pub queries: usize,
    pub air_points: usize,
    pub touchable_points: usize,
    pub parse_failures: usize,
    pub missing_predictions: usize,
}

/// Micro-aggregated benchmark report with per-family and per-group breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: RelationParams,
    pub occupancy_applied: bool,
    pub counts: ReportCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub touchable: Option<TouchableSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub air_overall: Option<AirSummary>,
    pub air_per_family: BTreeMap<QueryFamily, AirSummary>,
    pub air_per_group: BTreeMap<String, AirSummary>,
}

#[derive(Default, Clone, Copy)]
struct AirAccum {
    points: usize,
    passed: usize,
    metric_points: usize,
    metric_passed: usize,
    metric_hits: usize,
    bias_sum_mm: f64,
}

impl AirAccum {
    fn add(&mut self, family: QueryFamily, p: &PointOutcome, tol_mm: f64) {
        self.points += 1;
        let passed = p.dir_passed();
        self.passed += passed as usize;
        if family.has_metric() {
            self.metric_points += 1;
            if passed {
                self.metric_passed += 1;
                let bias = p
                    .metric_bias_mm
                    .expect("bias present on passed metric points");
                self.bias_sum_mm += bias;
                if bias <= tol_mm {
                    self.metric_hits += 1;
                }
            }
        }
    }

    fn summary(&self) -> AirSummary {
        AirSummary {
            dir_pt: Rate::from_counts(self.passed, self.points),
            met_pt_5cm: Rate::from_counts(self.metric_hits, self.metric_passed),
            full_pt: Rate::from_counts(self.metric_hits, self.metric_points),
            mean_err_cm: MeanStat::from_sum(self.bias_sum_mm / 10.0, self.metric_passed),
        }
    }
}

/// Fold per-query records into the micro-aggregated report.
pub fn aggregate(
    records: &[EvalRecord],
    params: &RelationParams,
    occupancy_applied: bool,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let tol = params.metric_tol_mm;
    let mut overall = AirAccum::default();
    let mut per_family: BTreeMap<QueryFamily, AirAccum> = BTreeMap::new();
    let mut acc_sum = 0.0f64;
    let mut acc_n = 0usize;
    let mut mae_in = (0.0f64, 0usize);
    let mut mae_out = (0.0f64, 0usize);
    let mut holes = 0usize;
    let mut counts = ReportCounts {
        queries: records.len(),
        ..Default::default()
    };

    for rec in records {
        counts.parse_failures += rec.parse_failed as usize;
        if rec.family.is_air() {
            counts.air_points += rec.points.len();
            let fam = per_family.entry(rec.family).or_default();
            for p in &rec.points {
                overall.add(rec.family, p, tol);
                fam.add(rec.family, p, tol);
            }
        } else {
            counts.touchable_points += rec.points.len();
            acc_sum += rec.acc_2d.expect("touchable record carries acc_2d");
            acc_n += 1;
            for p in &rec.points {
                holes += p.ref_depth_hole as usize;
                if let Some(err) = p.depth_err_mm {
                    match p.in_mask {
                        Some(true) => {
                            mae_in.0 += err;
                            mae_in.1 += 1;
                        }
                        _ => {
                            mae_out.0 += err;
                            mae_out.1 += 1;
                        }
                    }
                }
            }
        }
    }

    let touchable = (acc_n > 0).then(|| TouchableSummary {
        acc_2d: MeanStat::from_sum(acc_sum, acc_n),
        mae_z_in_mm: MeanStat::from_sum(mae_in.0, mae_in.1),
        mae_z_out_mm: MeanStat::from_sum(mae_out.0, mae_out.1),
        mae_z_all_mm: MeanStat::from_sum(mae_in.0 + mae_out.0, mae_in.1 + mae_out.1),
        ref_depth_holes_excluded: holes,
    });

    let mut per_group: BTreeMap<String, AirAccum> = BTreeMap::new();
    for (family, accum) in &per_family {
        let g = per_group.entry(family.group().to_string()).or_default();
        g.points += accum.points;
        g.passed += accum.passed;
        g.metric_points += accum.metric_points;
        g.metric_passed += accum.metric_passed;
        g.metric_hits += accum.metric_hits;
        g.bias_sum_mm += accum.bias_sum_mm;
    }

    Ok(EvalReport {
        params: *params,
        occupancy_applied,
        counts,
        touchable,
        air_overall: (overall.points > 0).then(|| overall.summary()),
        air_per_family: per_family
            .into_iter()
            .map(|(f, a)| (f, a.summary()))
            .collect(),
        air_per_group: per_group
            .into_iter()
            .map(|(g, a)| (g, a.summary()))
            .collect(),
    })
}

fn fmt_rate(r: &Rate) -> String {
    match r.value {
        Some(v) => format!("{:.4} ({}/{})", v, r.num, r.den),
        None => format!("-      (0/{})", r.den),
    }
}

fn fmt_mean(m: &MeanStat, digits: usize) -> String {
    match m.value {
        Some(v) => format!("{:.digits$} (n={})", v, m.count),
        None => format!("-      (n={})", m.count),
    }
}

/// Human-readable tables mirroring the touchable / air-overall / by-category
/// result layout.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(t) = &report.touchable {
        out.push_str("Touchable points\n");
        out.push_str(&format!(
            "  {:<18} {:<22} {:<22} {:<22} holes_excluded={}\n",
            "Acc2D", "MAE_Z(in) mm", "MAE_Z(out) mm", "MAE_Z(all) mm", t.ref_depth_holes_excluded
        ));
        out.push_str(&format!(
            "  {:<18} {:<22} {:<22} {:<22}\n",
            fmt_mean(&t.acc_2d, 4),
            fmt_mean(&t.mae_z_in_mm, 1),
            fmt_mean(&t.mae_z_out_mm, 1),
            fmt_mean(&t.mae_z_all_mm, 1),
        ));
    }
    if let Some(a) = &report.air_overall {
        out.push_str(&format!(
            "Air points (overall; occupancy {})\n",
            if report.occupancy_applied {
                "on"
            } else {
                "off"
            }
        ));
        out.push_str(&format!(
            "  {:<20} {:<20} {:<20} {:<20}\n",
            "DirPt", "MetPt@5cm", "FullPt", "MeanErr (cm)"
        ));
        out.push_str(&format!(
            "  {:<20} {:<20} {:<20} {:<20}\n",
            fmt_rate(&a.dir_pt),
            fmt_rate(&a.met_pt_5cm),
            fmt_rate(&a.full_pt),
            fmt_mean(&a.mean_err_cm, 4),
        ));
    }
    if !report.air_per_group.is_empty() {
        out.push_str("Air points by category\n");
        out.push_str(&format!(
            "  {:<14} {:<20} {:<20} {:<20} {:<20}\n",
            "category", "DirPt", "MetPt@5cm", "FullPt", "MeanErr (cm)"
        ));
        for (group, a) in &report.air_per_group {
            out.push_str(&format!(
                "  {:<14} {:<20} {:<20} {:<20} {:<20}\n",
                group,
                fmt_rate(&a.dir_pt),
                fmt_rate(&a.met_pt_5cm),
                fmt_rate(&a.full_pt),
                fmt_mean(&a.mean_err_cm, 4),
            ));
        }
    }
    out
}

/// One model response row in the predictions JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub response_text: String,
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), EvalError> {
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for p in predictions {
        serde_json::to_writer(&mut file, p).map_err(|e| io_err(path, e))?;
        file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    file.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
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

/// Loads the scene a query refers to, keeping only the most recent one.
/// Datasets are written scene-major, so one slot avoids rebuilding scenes
/// without holding a whole run in memory.
pub struct SceneCache {
    base: PathBuf,
    slot: Option<((String, String, String), Scene)>,
}

impl SceneCache {
    pub fn new(base: &Path) -> Self {
        Self {
            base: base.to_path_buf(),
            slot: None,
        }
    }

    pub fn scene_for(&mut self, q: &Query) -> Result<&Scene, EvalError> {
        let detections = match &q.gt {
            GroundTruth::Touchable { detections, .. } => detections.clone(),
            GroundTruth::Air { detections, .. } => detections.clone(),
        };
        let key = (q.depth.clone(), q.intrinsics.clone(), detections.clone());
        if self.slot.as_ref().map(|(k, _)| k) != Some(&key) {
            let cam = CameraIntrinsics::load_json(&self.base.join(&q.intrinsics))?;
            let depth = DepthMap::load_png16(&self.base.join(&q.depth))?;
            let dets = crate::scene::read_detections(&self.base.join(&detections))?;
            let scene = Scene::build(cam, depth, dets)?;
            self.slot = Some((key, scene));
        }
        Ok(&self.slot.as_ref().expect("slot just filled").1)
    }
}

/// Evaluate a predictions file against a dataset file. Paths inside the
/// dataset resolve relative to the dataset's directory.
///
/// Malformed or missing responses score as one all-wrong point and are
/// tallied in the report counts; `strict` handling (nonzero exit) is the
/// caller's decision based on those counts.
pub fn evaluate_dataset(
    dataset_path: &Path,
    predictions_path: &Path,
    params: &RelationParams,
    apply_occupancy: bool,
) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let queries = crate::datagen::read_dataset(dataset_path)?;
    let predictions = read_predictions(predictions_path)?;
    let by_id: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.response_text.as_str()))
        .collect();
    let base = dataset_path.parent().unwrap_or_else(|| Path::new("."));
    let mut cache = SceneCache::new(base);
    let mut records = Vec::with_capacity(queries.len());
    let mut missing = 0usize;

    for q in &queries {
        let Some(text) = by_id.get(q.id.as_str()) else {
            missing += 1;
            records.push(EvalRecord::all_wrong(&q.id, q.family));
            continue;
        };
        let record = match parse_points(text) {
            Err(ParseError::ParseFailure) | Err(ParseError::RangeViolation { .. }) => {
                EvalRecord::all_wrong(&q.id, q.family)
            }
            Ok(list) => match &q.gt {
                GroundTruth::Air { .. } => {
                    let scene = cache.scene_for(q)?;
                    eval_air(&list, q, scene, params, apply_occupancy)?
                }
                GroundTruth::Touchable { mask_object, .. } => {
                    let scene = cache.scene_for(q)?;
                    let obj =
                        scene
                            .object(mask_object)
                            .ok_or_else(|| EvalError::UnknownObject {
                                query: q.id.clone(),
                                object: mask_object.clone(),
                            })?;
                    eval_touchable(&q.id, &list, &obj.mask, &scene.depth, &scene.cam)
                }
            },
        };
        records.push(record);
    }

    let mut report = aggregate(&records, params, apply_occupancy)?;
    report.counts.missing_predictions = missing;
    Ok((report, records))
}
