//! Acceptance suite: every release-gating criterion as one test, each printing
//! a `criterion NN PASS` line with the measured values (visible with
//! `cargo test -p uvz-core --test acceptance -- --nocapture`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;
use uvz_core::camera::{back_project, project, CameraIntrinsics, Point3, PointTarget};
use uvz_core::datagen::QueryFamily;
use uvz_core::depth::{decode_depth_3ch, encode_depth_3ch, DepthMap, GeometryVolume};
use uvz_core::evalbench::{aggregate, eval_touchable, EvalRecord, PointOutcome};
use uvz_core::harness::{OracleKind, SyntheticSceneSpec};
use uvz_core::outparse::{parse_points, serialize_points, PointList};
use uvz_core::pipeline::{selftest, GenConfig};
use uvz_core::relations::{
    in_between_corridor, in_direction_cone, required_offset, Direction26, OffsetSpec,
    RelationParams,
};
use uvz_core::scene::{is_occupied, PixelMask, ProxyBox, Scene, SceneObject};

fn pass(criterion: &str, detail: String) {
    println!("criterion {criterion} PASS: {detail}");
}

/// Criterion 1: over >= 1000 generated queries spanning all five air
/// families, the perfect oracle scores DirPt = MetPt = FullPt = 1.0 and
/// MeanErr = 0.0 cm exactly, in under 60 s single-threaded.
#[test]
fn c01_perfect_oracle_self_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig::desk_default(1050, 20260809);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let outcome = pool
        .install(|| selftest(dir.path(), &config, OracleKind::Perfect, true))
        .unwrap();
    let elapsed = start.elapsed();

    assert!(
        outcome.summary.manifest.total >= 1000,
        "only {} queries emitted",
        outcome.summary.manifest.total
    );
    for family in QueryFamily::AIR {
        let n = outcome
            .summary
            .manifest
            .per_family
            .get(&family)
            .copied()
            .unwrap_or(0);
        assert!(n > 0, "family {family:?} missing from the generated set");
    }
    let air = outcome.report.air_overall.expect("air metrics present");
    assert_eq!(air.dir_pt.value, Some(1.0), "DirPt");
    assert_eq!(air.met_pt_5cm.value, Some(1.0), "MetPt@5cm");
    assert_eq!(air.full_pt.value, Some(1.0), "FullPt");
    assert_eq!(
        air.mean_err_cm.value,
        Some(0.0),
        "MeanErr must be exactly zero"
    );
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget is 60 s");
    pass(
        "01",
        format!(
            "{} queries, DirPt=MetPt=FullPt=1.0, MeanErr=0.0 cm exactly, {:.2} s single-threaded",
            outcome.summary.manifest.total,
            elapsed.as_secs_f64()
        ),
    );
}

/// Criterion 2: the relation-blind oracle on 10,000 direction-only queries
/// (occupancy disabled) hits the analytic cone probability
/// (1 - cos 30) / 2 within +/- 0.01.
#[test]
fn c02_relation_blind_matches_solid_angle() {
    let dir = tempfile::tempdir().unwrap();
    // Square image and tight placement so the full sphere around any anchor
    // projects inside the frustum: no sample is rejected, directions stay
    // exactly uniform.
    let cam = CameraIntrinsics::new(500.0, 500.0, 319.5, 319.5, 640, 640).unwrap();
    let mut config = GenConfig::desk_default(10_000, 31);
    config.mix = BTreeMap::from([(QueryFamily::DirOnly, 1.0)]);
    config.scene_template = SyntheticSceneSpec {
        cam,
        placement: GeometryVolume {
            min: [-150.0, -150.0, 1900.0],
            max: [150.0, 150.0, 2100.0],
        },
        object_count: (2, 3),
        object_size_mm: (60.0, 100.0),
        ..Default::default()
    };
    let outcome = selftest(dir.path(), &config, OracleKind::RelationBlind, false).unwrap();
    let total = outcome.summary.manifest.total;
    assert!(total >= 9_990, "only {total} queries emitted");
    let dir_pt = outcome.report.air_overall.unwrap().dir_pt;
    assert_eq!(dir_pt.den, total, "one point per query");
    let observed = dir_pt.value.unwrap();
    let expected = (1.0 - 30f64.to_radians().cos()) / 2.0;
    assert!(
        (observed - expected).abs() < 0.01,
        "DirPt {observed:.4} vs analytic {expected:.4}"
    );
    pass(
        "02",
        format!("DirPt {observed:.4} within 0.01 of analytic {expected:.4} over {total} queries"),
    );
}

/// Criterion 3: conditional-denominator semantics on a constructed fixture:
/// 10 offset points, 5 dir-passed, 2 within 5 cm give DirPt 0.500,
/// MetPt 0.400, FullPt 0.200 exactly.
#[test]
fn c03_metric_conditionality_fixture() {
    let mk = |passed: bool, bias: Option<f64>| PointOutcome {
        in_mask: None,
        relation_ok: Some(passed),
        occupancy_ok: passed.then_some(true),
        metric_bias_mm: bias,
        depth_err_mm: None,
        ref_depth_hole: false,
    };
    let rec = |id: &str, family, points| EvalRecord {
        id: id.into(),
        family,
        points,
        parse_failed: false,
        acc_2d: None,
    };
    let records = vec![
        rec(
            "q1",
            QueryFamily::DirOffset,
            vec![
                mk(true, Some(30.0)),
                mk(true, Some(80.0)),
                mk(false, None),
                mk(false, None),
            ],
        ),
        rec(
            "q2",
            QueryFamily::DirOffset,
            vec![mk(true, Some(50.0)), mk(true, Some(90.0)), mk(false, None)],
        ),
        rec(
            "q3",
            QueryFamily::BodyLength,
            vec![mk(true, Some(200.0)), mk(false, None), mk(false, None)],
        ),
    ];
    let report = aggregate(&records, &RelationParams::default(), true).unwrap();
    let air = report.air_overall.unwrap();
    assert_eq!(air.dir_pt.value, Some(0.500));
    assert_eq!(air.met_pt_5cm.value, Some(0.400));
    assert_eq!(air.full_pt.value, Some(0.200));
    assert_eq!((air.dir_pt.num, air.dir_pt.den), (5, 10));
    assert_eq!((air.met_pt_5cm.num, air.met_pt_5cm.den), (2, 5));
    assert_eq!((air.full_pt.num, air.full_pt.den), (2, 10));
    pass(
        "03",
        "DirPt=0.500 (5/10), MetPt=0.400 (2/5), FullPt=0.200 (2/10) exactly".into(),
    );
}

/// Criterion 4: handcrafted masks and depth maps reproduce the 2D accuracy
/// and depth-error definitions to machine precision, including constant bias.
#[test]
fn c04_acc2d_and_maez_fixtures() {
    let cam = CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap();
    let mut mask = PixelMask::new(640, 480);
    for y in 100..200 {
        for x in 100..200 {
            mask.set(x, y, true);
        }
    }
    let ref_depth = DepthMap::constant(640, 480, 1000);
    let target = |px: u32, py: u32, z: u32| {
        let (u, v) =
            uvz_core::camera::pixel_to_normalized(px as f64 + 0.5, py as f64 + 0.5, &cam).unwrap();
        PointTarget { u, v, z_mm: z }
    };

    // 4 points, 2 inside the mask.
    let pred = PointList::new(vec![
        target(150, 150, 1000),
        target(120, 180, 1000),
        target(10, 10, 1000),
        target(400, 400, 1000),
    ]);
    let rec = eval_touchable("q", &pred, &mask, &ref_depth, &cam);
    assert_eq!(rec.acc_2d, Some(0.5));
    let t = aggregate(&[rec], &RelationParams::default(), true)
        .unwrap()
        .touchable
        .unwrap();
    assert_eq!(t.mae_z_all_mm.value, Some(0.0));

    // Split errors: inside points off by 30 mm, outside points off by 70 mm.
    let pred = PointList::new(vec![
        target(150, 150, 1030),
        target(120, 180, 1030),
        target(10, 10, 1070),
        target(400, 400, 930),
    ]);
    let rec = eval_touchable("q", &pred, &mask, &ref_depth, &cam);
    let t = aggregate(&[rec], &RelationParams::default(), true)
        .unwrap()
        .touchable
        .unwrap();
    assert_eq!(t.mae_z_in_mm.value, Some(30.0));
    assert_eq!(t.mae_z_out_mm.value, Some(70.0));
    assert_eq!(t.mae_z_all_mm.value, Some(50.0));

    // Constant bias b on every point: each split equals b exactly.
    let bias = 37u32;
    let pred = PointList::new(vec![
        target(150, 150, 1000 + bias),
        target(120, 180, 1000 + bias),
        target(10, 10, 1000 + bias),
        target(400, 400, 1000 + bias),
    ]);
    let rec = eval_touchable("q", &pred, &mask, &ref_depth, &cam);
    assert_eq!(rec.acc_2d, Some(0.5));
    let t = aggregate(&[rec], &RelationParams::default(), true)
        .unwrap()
        .touchable
        .unwrap();
    assert_eq!(t.mae_z_in_mm.value, Some(bias as f64));
    assert_eq!(t.mae_z_out_mm.value, Some(bias as f64));
    assert_eq!(t.mae_z_all_mm.value, Some(bias as f64));
    pass(
        "04",
        "Acc2D=0.5, MAE splits (30/70/50) and constant bias b -> MAE=b, all exact".into(),
    );
}

/// Criterion 5: the six corridor boundary probes produce the documented
/// inclusive/exclusive verdicts.
#[test]
fn c05_corridor_boundary_probes() {
    let params = RelationParams::default();
    let a = Point3::new(0.0, 0.0, 1000.0);
    let b = Point3::new(1000.0, 0.0, 1000.0);
    let probes = [
        (Point3::new(90.0, 0.0, 1000.0), false, "t=0.09"),
        (Point3::new(100.0, 0.0, 1000.0), true, "t=0.10"),
        (Point3::new(900.0, 0.0, 1000.0), true, "t=0.90"),
        (Point3::new(910.0, 0.0, 1000.0), false, "t=0.91"),
        (Point3::new(500.0, 99.0, 1000.0), true, "perp=99"),
        (Point3::new(500.0, 101.0, 1000.0), false, "perp=101"),
    ];
    for (p, expected, label) in probes {
        let got = in_between_corridor(&p, &a, &b, &params).unwrap();
        assert_eq!(got, expected, "probe {label}");
    }
    pass(
        "05",
        "all six probes (t in {0.09,0.10,0.90,0.91}, perp in {99,101}) verdict as documented"
            .into(),
    );
}

/// Criterion 6: a 100k-query generation run with the corpus mix lands every
/// family fraction within +/- 1% absolute of its target ratio.
#[test]
fn c06_generation_mix_matches_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = GenConfig::desk_default(100_000, 7);
    // Smaller frames keep the run quick; geometry is unaffected.
    config.scene_template = SyntheticSceneSpec {
        cam: CameraIntrinsics::new(250.0, 250.0, 159.5, 119.5, 320, 240).unwrap(),
        ..Default::default()
    };
    let summary = uvz_core::pipeline::generate_run(dir.path(), &config).unwrap();
    let total = summary.manifest.total as f64;
    let expected = [
        (QueryFamily::DirOnly, 0.3518),
        (QueryFamily::DirOffset, 0.3366),
        (QueryFamily::BodyLength, 0.1933),
        (QueryFamily::Between, 0.0376),
        (QueryFamily::BetweenOffset, 0.0807),
    ];
    let mut detail = String::new();
    for (family, ratio) in expected {
        let count = summary
            .manifest
            .per_family
            .get(&family)
            .copied()
            .unwrap_or(0) as f64;
        let fraction = count / total;
        assert!(
            (fraction - ratio).abs() < 0.01,
            "{family:?} fraction {fraction:.4} vs target {ratio:.4}"
        );
        detail.push_str(&format!("{}={:.4} ", family.name(), fraction));
    }
    let skipped: usize = summary.manifest.skipped.values().sum();
    assert!(
        skipped as f64 <= 0.01 * 100_000.0,
        "{skipped} skipped queries"
    );
    pass(
        "06",
        format!(
            "{detail}({} emitted, {skipped} skipped)",
            summary.manifest.total
        ),
    );
}

/// Criterion 7: exact round trips for the three codecs.
#[test]
fn c07_round_trips() {
    // Depth 3-channel encode/decode over a dense sweep of [0, 2^24).
    let mut values: Vec<u32> = (0..(1u32 << 24)).step_by(997).collect();
    values.push((1 << 24) - 1);
    let count = values.len();
    let depth = DepthMap::from_values(count as u32, 1, values.clone()).unwrap();
    let decoded = decode_depth_3ch(&encode_depth_3ch(&depth).unwrap());
    assert_eq!(decoded, depth, "depth codec not exact");

    // parse . serialize identity on 10,000 random point lists.
    let mut rng = ChaCha8Rng::seed_from_u64(977);
    for _ in 0..10_000 {
        let n = rng.random_range(0..12);
        let list = PointList::new(
            (0..n)
                .map(|_| PointTarget {
                    u: rng.random_range(0..1000),
                    v: rng.random_range(0..1000),
                    z_mm: rng.random_range(0..(1 << 24)),
                })
                .collect(),
        );
        assert_eq!(parse_points(&serialize_points(&list)).unwrap(), list);
    }

    // project . back_project identity on 1,000 random valid targets.
    let cams = [
        CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap(),
        CameraIntrinsics::new(1000.0, 980.0, 320.0, 240.0, 640, 480).unwrap(),
        CameraIntrinsics::new(700.0, 700.0, 500.0, 500.0, 1000, 1000).unwrap(),
        CameraIntrinsics::new(900.0, 880.0, 640.0, 360.0, 1280, 720).unwrap(),
    ];
    for i in 0..1_000u64 {
        let cam = &cams[(i % 4) as usize];
        let t = PointTarget {
            u: rng.random_range(0..1000),
            v: rng.random_range(0..1000),
            z_mm: rng.random_range(1..30_000),
        };
        let p = back_project(t, cam).unwrap();
        assert_eq!(
            project(&p, cam).unwrap(),
            t,
            "camera round trip failed for {t:?}"
        );
    }
    pass(
        "07",
        format!("depth codec exact on {count} sweep values, 10k parse/serialize and 1k camera round trips identical"),
    );
}

// Integer-arithmetic oracles for criterion 8. Independent of the f64
// implementation path: membership reduces to exact integer comparisons.

/// angle(v, d) <= 30 degrees, exactly: dot >= 0 and 4 dot^2 >= 3 |v|^2 |d|^2.
fn cone_oracle_integer(v: [i64; 3], d: [i64; 3]) -> bool {
    let dot = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
    if dot < 0 {
        return false;
    }
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    4 * (dot as i128) * (dot as i128) >= 3 * (v2 as i128) * (d2 as i128)
}

/// Corridor membership with span (1/10, 9/10) and radius rho, exactly.
fn corridor_oracle_integer(w: [i64; 3], seg: [i64; 3], rho: i64) -> bool {
    let dot = (w[0] * seg[0] + w[1] * seg[1] + w[2] * seg[2]) as i128;
    let len2 = (seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]) as i128;
    if 10 * dot < len2 || 10 * dot > 9 * len2 {
        return false;
    }
    let w2 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) as i128;
    // perp^2 = |w|^2 - dot^2 / len2 <= rho^2, cleared of the denominator.
    w2 * len2 - dot * dot <= (rho as i128) * (rho as i128) * len2
}

/// Criterion 8: cone, corridor, and occupancy predicates agree with dense
/// grid-sweep oracles with zero disagreements.
#[test]
fn c08_brute_force_grid_oracles() {
    let params = RelationParams::default();

    // Cone sweep: 1 mm grid in an 80 mm cube straddling the cone boundary at
    // 100 mm from the apex, for an axis, an edge, and a corner direction.
    let apex = [0i64, 0, 1000];
    let apex_p = Point3::new(0.0, 0.0, 1000.0);
    let mut cone_checked = 0usize;
    for comps in [(1i8, 0i8, 0i8), (1, -1, 0), (1, 1, 1)] {
        let dir = Direction26::from_components(comps.0, comps.1, comps.2).unwrap();
        let d = [comps.0 as i64, comps.1 as i64, comps.2 as i64];
        let norm = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt();
        let center = [
            apex[0] + (100.0 * d[0] as f64 / norm).round() as i64,
            apex[1] + (100.0 * d[1] as f64 / norm).round() as i64,
            apex[2] + (100.0 * d[2] as f64 / norm).round() as i64,
        ];
        for x in center[0] - 40..=center[0] + 40 {
            for y in center[1] - 40..=center[1] + 40 {
                for z in center[2] - 40..=center[2] + 40 {
                    let v = [x - apex[0], y - apex[1], z - apex[2]];
                    if v == [0, 0, 0] {
                        continue;
                    }
                    let p = Point3::new(x as f64, y as f64, z as f64);
                    let got = in_direction_cone(&p, &apex_p, dir, &params).unwrap();
                    let want = cone_oracle_integer(v, d);
                    assert_eq!(got, want, "cone disagreement at {v:?} for {comps:?}");
                    cone_checked += 1;
                }
            }
        }
    }

    // Corridor sweep: 2 mm grid over a volume covering both span and radius
    // boundaries, for an axis-aligned and a skew segment.
    let mut corridor_checked = 0usize;
    for (ca, cb) in [
        ([0i64, 0, 800], [200i64, 0, 800]),
        ([0i64, 0, 800], [150i64, 100, 850]),
    ] {
        let ca_p = Point3::new(ca[0] as f64, ca[1] as f64, ca[2] as f64);
        let cb_p = Point3::new(cb[0] as f64, cb[1] as f64, cb[2] as f64);
        let seg = [cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]];
        let mut x = -10i64;
        while x <= 210 {
            let mut y = -110i64;
            while y <= 110 {
                let mut z = 690i64;
                while z <= 910 {
                    let p = Point3::new(x as f64, y as f64, z as f64);
                    let w = [x - ca[0], y - ca[1], z - ca[2]];
                    let got = in_between_corridor(&p, &ca_p, &cb_p, &params).unwrap();
                    let want = corridor_oracle_integer(w, seg, params.corridor_radius_mm as i64);
                    assert_eq!(
                        got, want,
                        "corridor disagreement at ({x}, {y}, {z}) for {ca:?}->{cb:?}"
                    );
                    corridor_checked += 1;
                    z += 2;
                }
                y += 2;
            }
            x += 2;
        }
    }

    // Occupancy sweep: hand-set integer proxies, inflation 1.0 and 1.1,
    // against direct per-axis interval membership.
    let mut occupancy_checked = 0usize;
    let object = |id: &str, center: Point3, half: (f64, f64, f64)| SceneObject {
        id: id.into(),
        caption: format!("{id} box"),
        bbox: [0, 0, 2, 2],
        mask: {
            let mut m = PixelMask::new(4, 4);
            m.set(0, 0, true);
            m
        },
        proxy: ProxyBox {
            center,
            half_extents: half,
        },
    };
    let scene = Scene {
        cam: CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap(),
        depth: DepthMap::constant(4, 4, 1000),
        objects: vec![
            object("a", Point3::new(0.0, 0.0, 1000.0), (50.0, 60.0, 70.0)),
            object("b", Point3::new(120.0, -40.0, 1050.0), (40.0, 40.0, 40.0)),
        ],
    };
    let exclude = ["a".to_string()];
    for inflation in [1.0f64, 1.1] {
        let b = &scene.objects[1].proxy;
        let inside_b = |p: &Point3| {
            (p.x - b.center.x).abs() <= b.half_extents.0 * inflation
                && (p.y - b.center.y).abs() <= b.half_extents.1 * inflation
                && (p.z - b.center.z).abs() <= b.half_extents.2 * inflation
        };
        let mut x = -80i64;
        while x <= 200 {
            let mut y = -120i64;
            while y <= 80 {
                let mut z = 900i64;
                while z <= 1150 {
                    let p = Point3::new(x as f64, y as f64, z as f64);
                    // Object a excluded: only b's box counts.
                    let got = is_occupied(&p, &scene, &exclude, inflation);
                    assert_eq!(
                        got,
                        inside_b(&p),
                        "occupancy disagreement at ({x}, {y}, {z}), inflation {inflation}"
                    );
                    occupancy_checked += 1;
                    z += 2;
                }
                y += 2;
            }
            x += 2;
        }
    }

    pass(
        "08",
        format!(
            "zero disagreements: cone {cone_checked} pts, corridor {corridor_checked} pts, occupancy {occupancy_checked} pts"
        ),
    );
}

/// Criterion 9: two body lengths of a (100, 50, 50) mm half-extent box.
#[test]
fn c09_body_length_offset() {
    let anchor = ProxyBox {
        center: Point3::new(0.0, 0.0, 1000.0),
        half_extents: (100.0, 50.0, 50.0),
    };
    let r = required_offset(OffsetSpec::BodyLengths(2.0), &anchor).unwrap();
    assert!((r - 244.949).abs() <= 0.001, "got {r}");
    pass(
        "09",
        format!("BodyLengths(2) on (100, 50, 50) mm box -> {r:.6} mm (244.949 +/- 0.001)"),
    );
}

/// Criterion 10: two full generate -> oracle -> evaluate runs with identical
/// seeds produce byte-identical dataset, prediction, and report files.
#[test]
fn c10_pipeline_determinism() {
    let mut config = GenConfig::desk_default(300, 99);
    config.touchable_per_scene = 3;
    let run = |dir: &std::path::Path| {
        selftest(dir, &config, OracleKind::NoisyDepth(20.0), true).unwrap();
        let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
        (
            read("dataset.jsonl"),
            read("manifest.json"),
            read("predictions.jsonl"),
            read("report.json"),
        )
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run(dir_a.path());
    let b = run(dir_b.path());
    assert_eq!(a.0, b.0, "dataset.jsonl differs");
    assert_eq!(a.1, b.1, "manifest.json differs");
    assert_eq!(a.2, b.2, "predictions.jsonl differs");
    assert_eq!(a.3, b.3, "report.json differs");
    pass(
        "10",
        format!(
            "byte-identical dataset ({} B), manifest ({} B), predictions ({} B), report ({} B)",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a.3.len()
        ),
    );
}
