//! Depth-aware point-target toolkit: geometry, data engine, and benchmark
//! evaluator for `(u, v, Z)` predictions on RGB-D scenes.
//!
//! The crate is organized around the pipeline it supports:
//!
//! - [`camera`]: pinhole model and the normalized `(u, v, Z)` target encoding
//! - [`depth`]: depth-map storage/IO and the three-channel uint8 encodings
//! - [`scene`]: masks, lifted point clouds, proxy boxes, occupancy
//! - [`relations`]: the 26-direction taxonomy and relation predicates
//! - [`outparse`]: deterministic parsing of structured point-list output
//! - [`datagen`]: touchable-point lifting and air-point QA synthesis
//! - [`evalbench`]: per-query scoring and micro-aggregated reports
//! - [`harness`]: synthetic scenes and oracle predictors
//! - [`pipeline`]: reproducible generate -> predict -> evaluate runs

pub mod camera;
pub mod datagen;
pub mod depth;
pub mod evalbench;
pub mod harness;
pub mod outparse;
pub mod pipeline;
pub mod relations;
pub mod scene;

pub use camera::{CameraIntrinsics, Point3, PointTarget};
pub use depth::{DepthMap, EncodedDepthImage, GeometryVolume};
pub use outparse::PointList;
pub use relations::{Direction26, OffsetSpec, RelationParams};
pub use scene::{ProxyBox, Scene, SceneObject};
