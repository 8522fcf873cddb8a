//! File-format round trips for the dataset and prediction interfaces.

use std::collections::BTreeMap;
use uvz_core::datagen::{read_dataset, write_dataset, QueryFamily};
use uvz_core::evalbench::{read_predictions, write_predictions, Prediction};
use uvz_core::harness::OracleKind;
use uvz_core::pipeline::{generate_run, predict_run, GenConfig};

#[test]
fn dataset_read_back_reserializes_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = GenConfig::desk_default(60, 4242);
    config.touchable_per_scene = 2;
    config.scene_count = 2;
    let summary = generate_run(dir.path(), &config).unwrap();

    let original = std::fs::read(&summary.dataset_path).unwrap();
    let queries = read_dataset(&summary.dataset_path).unwrap();
    let rewritten_path = dir.path().join("rewritten.jsonl");
    write_dataset(
        &queries,
        &rewritten_path,
        &config.config_hash(),
        config.seed,
        &BTreeMap::new(),
    )
    .unwrap();
    let rewritten = std::fs::read(&rewritten_path).unwrap();
    assert_eq!(
        original, rewritten,
        "read-back re-serialization changed bytes"
    );
}

#[test]
fn empty_dataset_writes_empty_file_and_zero_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    let manifest = write_dataset(&[], &path, "cafe", 1, &BTreeMap::new()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    assert_eq!(manifest.total, 0);
    assert!(manifest.per_family.is_empty());
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn manifest_counts_match_dataset_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig::desk_default(50, 8);
    let summary = generate_run(dir.path(), &config).unwrap();
    let queries = read_dataset(&summary.dataset_path).unwrap();
    assert_eq!(queries.len(), summary.manifest.total);
    let mut counts: BTreeMap<QueryFamily, usize> = BTreeMap::new();
    for q in &queries {
        *counts.entry(q.family).or_insert(0) += 1;
    }
    assert_eq!(counts, summary.manifest.per_family);
    assert_eq!(summary.manifest.config_hash, config.config_hash());
}

#[test]
fn predictions_round_trip_and_cover_every_query() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig::desk_default(40, 13);
    let summary = generate_run(dir.path(), &config).unwrap();
    let predictions = predict_run(&summary.dataset_path, OracleKind::Random, 5).unwrap();
    let queries = read_dataset(&summary.dataset_path).unwrap();
    assert_eq!(predictions.len(), queries.len());
    for (p, q) in predictions.iter().zip(&queries) {
        assert_eq!(p.id, q.id);
    }
    let path = dir.path().join("predictions.jsonl");
    write_predictions(&path, &predictions).unwrap();
    let back: Vec<Prediction> = read_predictions(&path).unwrap();
    assert_eq!(back, predictions);
}
