//! Shared fixtures for the criterion benches.

use uvz_core::datagen::{synthesize_air_query, Query, QueryFamily, ScenePaths};
use uvz_core::harness::{derive_seed, generate_scene, SyntheticScene, SyntheticSceneSpec};
use uvz_core::relations::RelationParams;

pub fn bench_scene(seed: u64) -> SyntheticScene {
    generate_scene(&SyntheticSceneSpec {
        seed,
        ..Default::default()
    })
    .expect("bench scene")
}

pub fn bench_paths() -> ScenePaths {
    ScenePaths {
        image: "scenes/s000/rgb.png".into(),
        depth: "scenes/s000/depth.png".into(),
        intrinsics: "scenes/s000/intrinsics.json".into(),
        detections: "scenes/s000/detections.jsonl".into(),
    }
}

/// A batch of air queries over one scene, one per family, repeated.
pub fn bench_queries(scene: &SyntheticScene, count: usize) -> Vec<Query> {
    let params = RelationParams::default();
    let paths = bench_paths();
    let mut queries = Vec::with_capacity(count);
    let mut index = 0u64;
    while queries.len() < count {
        for family in QueryFamily::AIR {
            if queries.len() >= count {
                break;
            }
            let id = format!("q{:06}", queries.len());
            if let Ok(q) = synthesize_air_query(
                &scene.scene,
                &paths,
                family,
                &id,
                derive_seed(0xBE7C, family as u64, index),
                &params,
            ) {
                queries.push(q);
            }
            index += 1;
        }
    }
    queries
}
