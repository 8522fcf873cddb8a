//! Reproducible run orchestration: synthetic scenes and queries to disk,
//! oracle predictions over a dataset, and evaluation into a report file.
//!
//! A run directory looks like:
//!
//! ```text
//! run/
//!   dataset.jsonl      one query per line
//!   manifest.json      counts per family, skip log, config hash, seed
//!   predictions.jsonl  {id, response_text} per line (selftest only)
//!   report.json        micro-aggregated metrics
//!   scenes/s000/       depth.png (+ .json sidecar), intrinsics.json,
//!                      detections.jsonl, rgb.png
//! ```
//!
//! Fixed seeds give byte-identical dataset, prediction, and report files.

use crate::camera::CameraError;
use crate::datagen::{
    build_touchable_query, plan_mix, synthesize_air_query, write_dataset, DatagenError,
    DatasetManifest, Query, QueryFamily, ScenePaths,
};
use crate::depth::DepthError;
use crate::evalbench::{
    evaluate_dataset, write_predictions, EvalError, EvalRecord, EvalReport, Prediction, SceneCache,
};
use crate::harness::{
    derive_seed, generate_scene, run_oracle, HarnessError, OracleKind, SyntheticSceneSpec,
};
use crate::outparse::serialize_points;
use crate::relations::{RelationError, RelationParams};
use crate::scene::{write_detections, SceneError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

const SCENE_STREAM: u64 = 1;
const TOUCH_STREAM: u64 = 2;
const ORACLE_STREAM: u64 = 3;
const FAMILY_STREAM_BASE: u64 = 100;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn family_stream(family: QueryFamily) -> u64 {
    FAMILY_STREAM_BASE
        + match family {
            QueryFamily::Touchable => 0,
            QueryFamily::DirOnly => 1,
            QueryFamily::DirOffset => 2,
            QueryFamily::BodyLength => 3,
            QueryFamily::Between => 4,
            QueryFamily::BetweenOffset => 5,
        }
}

/// Full configuration of a generation run. Hashed into the manifest so a
/// dataset can be traced back to the exact settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub total_air: usize,
    pub touchable_per_scene: usize,
    pub scene_count: usize,
    pub mix: BTreeMap<QueryFamily, f64>,
    pub scene_template: SyntheticSceneSpec,
    pub params: RelationParams,
}

impl GenConfig {
    /// Desk-scale defaults: around 500 air queries per scene.
    pub fn desk_default(total_air: usize, seed: u64) -> Self {
        Self {
            seed,
            total_air,
            touchable_per_scene: 0,
            scene_count: (total_air / 500).max(1),
            mix: crate::datagen::table1_air_mix(),
            scene_template: SyntheticSceneSpec::default(),
            params: RelationParams::default(),
        }
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// What a generation run produced and where.
#[derive(Debug, Clone)]
pub struct GenSummary {
    pub dataset_path: PathBuf,
    pub manifest: DatasetManifest,
}

fn write_rgb_placeholder(path: &Path, width: u32, height: u32) -> Result<(), PipelineError> {
    let buf: image::ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        image::ImageBuffer::from_pixel(width, height, image::Rgb([128u8, 128, 128]));
    buf.save(path).map_err(|e| io_err(path, e))
}

/// Generate scenes and queries under `out_dir`, one scene at a time.
///
/// Air queries are apportioned per family by the mix, then dealt round-robin
/// across scenes. Unsatisfiable queries are skipped and tallied in the
/// manifest, never silently replaced.
pub fn generate_run(out_dir: &Path, config: &GenConfig) -> Result<GenSummary, PipelineError> {
    let scenes_dir = out_dir.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| io_err(&scenes_dir, e))?;

    let family_counts = plan_mix(config.total_air, &config.mix)?;
    let n_scenes = config.scene_count.max(1);
    let mut queries: Vec<Query> = Vec::with_capacity(config.total_air);
    let mut skipped: BTreeMap<QueryFamily, usize> = BTreeMap::new();

    for scene_idx in 0..n_scenes {
        let spec = SyntheticSceneSpec {
            seed: derive_seed(config.seed, SCENE_STREAM, scene_idx as u64),
            ..config.scene_template.clone()
        };
        let synthetic = generate_scene(&spec)?;
        let rel = format!("scenes/s{scene_idx:03}");
        let dir = out_dir.join(&rel);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

        synthetic.scene.depth.save_png16(&dir.join("depth.png"))?;
        synthetic
            .scene
            .cam
            .save_json(&dir.join("intrinsics.json"))
            .map_err(|e| io_err(&dir, e))?;
        write_detections(&dir.join("detections.jsonl"), &synthetic.detections)?;
        write_rgb_placeholder(
            &dir.join("rgb.png"),
            synthetic.scene.cam.width,
            synthetic.scene.cam.height,
        )?;

        let paths = ScenePaths {
            image: format!("{rel}/rgb.png"),
            depth: format!("{rel}/depth.png"),
            intrinsics: format!("{rel}/intrinsics.json"),
            detections: format!("{rel}/detections.jsonl"),
        };

        for (&family, &count) in &family_counts {
            // This scene owns the indices congruent to scene_idx mod n_scenes.
            let mut index = scene_idx;
            while index < count {
                let id = format!("q{:06}", queries.len());
                let seed = derive_seed(config.seed, family_stream(family), index as u64);
                match synthesize_air_query(
                    &synthetic.scene,
                    &paths,
                    family,
                    &id,
                    seed,
                    &config.params,
                ) {
                    Ok(q) => queries.push(q),
                    Err(DatagenError::Unsatisfiable { .. })
                    | Err(DatagenError::NotEnoughObjects { .. }) => {
                        *skipped.entry(family).or_insert(0) += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
                index += n_scenes;
            }
        }

        for k in 0..config.touchable_per_scene {
            if synthetic.scene.objects.is_empty() {
                *skipped.entry(QueryFamily::Touchable).or_insert(0) += 1;
                continue;
            }
            let object = &synthetic.scene.objects[k % synthetic.scene.objects.len()];
            let seed = derive_seed(config.seed, TOUCH_STREAM, (scene_idx * 100_000 + k) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<(u32, u32)> = object.mask.iter_set().collect();
            let annotations: Vec<(f64, f64)> = (0..3)
                .map(|_| {
                    let (x, y) = pixels[rng.random_range(0..pixels.len())];
                    (x as f64 + 0.5, y as f64 + 0.5)
                })
                .collect();
            let id = format!("q{:06}", queries.len());
            match build_touchable_query(
                &synthetic.scene,
                &paths,
                &object.id,
                &annotations,
                &id,
                seed,
            ) {
                Ok(q) => queries.push(q),
                Err(DatagenError::EmptyLift) => {
                    *skipped.entry(QueryFamily::Touchable).or_insert(0) += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    let dataset_path = out_dir.join("dataset.jsonl");
    let manifest = write_dataset(
        &queries,
        &dataset_path,
        &config.config_hash(),
        config.seed,
        &skipped,
    )?;
    Ok(GenSummary {
        dataset_path,
        manifest,
    })
}

/// Run an oracle over every query of a dataset, in dataset order.
pub fn predict_run(
    dataset_path: &Path,
    kind: OracleKind,
    seed: u64,
) -> Result<Vec<Prediction>, PipelineError> {
    let queries = crate::datagen::read_dataset(dataset_path)?;
    let base = dataset_path.parent().unwrap_or_else(|| Path::new("."));
    let mut cache = SceneCache::new(base);
    let mut predictions = Vec::with_capacity(queries.len());
    for (index, q) in queries.iter().enumerate() {
        let scene = cache.scene_for(q)?;
        let list = run_oracle(
            kind,
            q,
            scene,
            derive_seed(seed, ORACLE_STREAM, index as u64),
        )?;
        predictions.push(Prediction {
            id: q.id.clone(),
            response_text: serialize_points(&list),
        });
    }
    Ok(predictions)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Outcome of a full generate -> predict -> evaluate selftest run.
pub struct SelftestOutcome {
    pub summary: GenSummary,
    pub predictions_path: PathBuf,
    pub report_path: PathBuf,
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
}

/// Generate a dataset, answer it with the given oracle, and evaluate the
/// answers, leaving all artifacts under `out_dir`.
pub fn selftest(
    out_dir: &Path,
    config: &GenConfig,
    oracle: OracleKind,
    apply_occupancy: bool,
) -> Result<SelftestOutcome, PipelineError> {
    let summary = generate_run(out_dir, config)?;
    let predictions = predict_run(&summary.dataset_path, oracle, config.seed)?;
    let predictions_path = out_dir.join("predictions.jsonl");
    write_predictions(&predictions_path, &predictions)?;
    let (report, records) = evaluate_dataset(
        &summary.dataset_path,
        &predictions_path,
        &config.params,
        apply_occupancy,
    )?;
    let report_path = out_dir.join("report.json");
    write_report(&report_path, &report)?;
    Ok(SelftestOutcome {
        summary,
        predictions_path,
        report_path,
        report,
        records,
    })
}
