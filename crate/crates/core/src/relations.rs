//! The 26-direction taxonomy and the geometric relation predicates: direction
//! cone, between-corridor, and distance bias.
//!
//! Directions index the nonzero vectors of `{-1, 0, 1}^3` in lexicographic
//! `(dx, dy, dz)` order. The camera frame fixes the language table: right is
//! +X, left is -X, above is -Y, below is +Y, behind is +Z, in front of is -Z.

use crate::camera::Point3;
use crate::scene::{body_length, ProxyBox};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

/// Guard for comparisons at exact angular boundaries (degrees). Absorbs the
/// one-ulp rounding of probes constructed exactly on a cone surface.
const ANGLE_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("point coincides with the anchor; direction undefined")]
    DegenerateDisplacement,
    #[error("corridor endpoints coincide; segment undefined")]
    DegenerateSegment,
    #[error("offset must be nonnegative, got {0}")]
    BadOffset(f64),
    #[error("direction code {0} outside 0..26")]
    BadCode(u8),
    #[error("no direction labeled {0:?}")]
    BadLabel(String),
    #[error("invalid relation parameters: {0}")]
    BadParams(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
}

/// One of the 26 canonical camera-frame directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Direction26 {
    code: u8,
}

struct DirectionEntry {
    components: (i8, i8, i8),
    vector: Point3,
    label: String,
}

fn direction_table() -> &'static [DirectionEntry; 26] {
    static TABLE: OnceLock<[DirectionEntry; 26]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut entries = Vec::with_capacity(26);
        for dx in -1i8..=1 {
            for dy in -1i8..=1 {
                for dz in -1i8..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let raw = Point3::new(dx as f64, dy as f64, dz as f64);
                    entries.push(DirectionEntry {
                        components: (dx, dy, dz),
                        vector: raw.normalized().expect("nonzero"),
                        label: label_for(dx, dy, dz),
                    });
                }
            }
        }
        entries.try_into().ok().expect("exactly 26 directions")
    })
}

fn label_for(dx: i8, dy: i8, dz: i8) -> String {
    let axes = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
    if axes == 1 {
        return match (dx, dy, dz) {
            (1, 0, 0) => "right",
            (-1, 0, 0) => "left",
            (0, -1, 0) => "above",
            (0, 1, 0) => "below",
            (0, 0, 1) => "behind",
            (0, 0, -1) => "in front of",
            _ => unreachable!(),
        }
        .to_string();
    }
    let mut parts = Vec::new();
    match dy {
        -1 => parts.push("above"),
        1 => parts.push("below"),
        _ => {}
    }
    match dx {
        1 => parts.push("right"),
        -1 => parts.push("left"),
        _ => {}
    }
    match dz {
        1 => parts.push("behind"),
        -1 => parts.push("front"),
        _ => {}
    }
    parts.join("-")
}

impl Direction26 {
    pub fn from_code(code: u8) -> Result<Self, RelationError> {
        if code < 26 {
            Ok(Self { code })
        } else {
            Err(RelationError::BadCode(code))
        }
    }

    pub fn from_label(label: &str) -> Result<Self, RelationError> {
        direction_table()
            .iter()
            .position(|e| e.label == label)
            .map(|i| Self { code: i as u8 })
            .ok_or_else(|| RelationError::BadLabel(label.to_string()))
    }

    pub fn from_components(dx: i8, dy: i8, dz: i8) -> Result<Self, RelationError> {
        direction_table()
            .iter()
            .position(|e| e.components == (dx, dy, dz))
            .map(|i| Self { code: i as u8 })
            .ok_or(RelationError::BadCode(u8::MAX))
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    /// Unit direction vector in the camera frame.
    pub fn vector(&self) -> Point3 {
        direction_table()[self.code as usize].vector
    }

    pub fn components(&self) -> (i8, i8, i8) {
        direction_table()[self.code as usize].components
    }

    /// Canonical language label, bijective with the code.
    pub fn label(&self) -> &'static str {
        &direction_table()[self.code as usize].label
    }

    pub fn all() -> impl Iterator<Item = Direction26> {
        (0..26u8).map(|code| Direction26 { code })
    }
}

/// Thresholds shared by the data engine and the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationParams {
    /// Cone half-angle in degrees.
    pub cone_half_angle_deg: f64,
    /// Between-corridor cylinder radius in millimeters.
    pub corridor_radius_mm: f64,
    /// Admissible span of the segment projection, as fractions of its length.
    pub corridor_span: (f64, f64),
    /// Distance-bias tolerance for metric success, millimeters.
    pub metric_tol_mm: f64,
    /// Proxy-box half-extent multiplier for the occupancy test.
    pub occupancy_inflation: f64,
}

impl Default for RelationParams {
    fn default() -> Self {
        Self {
            cone_half_angle_deg: 30.0,
            corridor_radius_mm: 100.0,
            corridor_span: (0.10, 0.90),
            metric_tol_mm: 50.0,
            occupancy_inflation: 1.10,
        }
    }
}

impl RelationParams {
    pub fn validate(&self) -> Result<(), RelationError> {
        // Written so NaN fails every check.
        fn within(x: f64, lo: f64, hi: f64) -> bool {
            x.is_finite() && x > lo && x < hi
        }
        fn positive(x: f64) -> bool {
            x.is_finite() && x > 0.0
        }
        let bad = |m: String| Err(RelationError::BadParams(m));
        if !within(self.cone_half_angle_deg, 0.0, 90.0) {
            return bad(format!(
                "cone half-angle {} not in (0, 90)",
                self.cone_half_angle_deg
            ));
        }
        if !positive(self.corridor_radius_mm) {
            return bad(format!(
                "corridor radius {} not positive",
                self.corridor_radius_mm
            ));
        }
        let (lo, hi) = self.corridor_span;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad(format!("corridor span ({lo}, {hi}) not ordered in [0, 1]"));
        }
        if !positive(self.metric_tol_mm) {
            return bad(format!(
                "metric tolerance {} not positive",
                self.metric_tol_mm
            ));
        }
        if !(self.occupancy_inflation.is_finite() && self.occupancy_inflation >= 1.0) {
            return bad(format!(
                "occupancy inflation {} below 1.0",
                self.occupancy_inflation
            ));
        }
        Ok(())
    }

    /// Load from a TOML or JSON file, by extension. Missing fields take defaults.
    pub fn load(path: &Path) -> Result<Self, RelationError> {
        let err = |m: String| RelationError::Config {
            path: path.display().to_string(),
            message: m,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let params: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| err(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| err(e.to_string()))?,
        };
        params.validate()?;
        Ok(params)
    }
}

fn angle_deg(a: &Point3, b: &Point3) -> f64 {
    let cos = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Does `p` lie within the cone of half-angle `params.cone_half_angle_deg`
/// around direction `d` apexed at `c`? Boundary inclusive.
pub fn in_direction_cone(
    p: &Point3,
    c: &Point3,
    d: Direction26,
    params: &RelationParams,
) -> Result<bool, RelationError> {
    let disp = p.sub(c);
    if disp.norm() == 0.0 {
        return Err(RelationError::DegenerateDisplacement);
    }
    Ok(angle_deg(&disp, &d.vector()) <= params.cone_half_angle_deg + ANGLE_EPS_DEG)
}

/// Does `p` lie inside the cylindrical corridor between `c_a` and `c_b`?
///
/// Membership needs the projection fraction within `corridor_span` and the
/// perpendicular distance within `corridor_radius_mm`, both inclusive.
pub fn in_between_corridor(
    p: &Point3,
    c_a: &Point3,
    c_b: &Point3,
    params: &RelationParams,
) -> Result<bool, RelationError> {
    let seg = c_b.sub(c_a);
    let len2 = seg.dot(&seg);
    if len2 == 0.0 {
        return Err(RelationError::DegenerateSegment);
    }
    let t = p.sub(c_a).dot(&seg) / len2;
    let (lo, hi) = params.corridor_span;
    if t < lo || t > hi {
        return Ok(false);
    }
    let perp = p.sub(c_a).sub(&seg.scale(t)).norm();
    Ok(perp <= params.corridor_radius_mm)
}

/// Absolute difference between the predicted displacement magnitude and the
/// required magnitude, millimeters.
pub fn distance_bias(p: &Point3, c: &Point3, r_star_mm: f64) -> f64 {
    (p.distance(c) - r_star_mm).abs()
}

/// How a query states its required offset from the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum OffsetSpec {
    /// Absolute metric offset in millimeters.
    MetricMm(f64),
    /// Multiples of the anchor object's body length.
    BodyLengths(f64),
}

/// Resolve an offset spec to a required distance in millimeters.
pub fn required_offset(spec: OffsetSpec, anchor_box: &ProxyBox) -> Result<f64, RelationError> {
    let r = match spec {
        OffsetSpec::MetricMm(mm) => mm,
        OffsetSpec::BodyLengths(n) => n * body_length(anchor_box),
    };
    if r < 0.0 {
        return Err(RelationError::BadOffset(r));
    }
    Ok(r)
}

/// The canonical direction whose unit vector best matches `p - c`.
/// Ties break toward the lowest code.
pub fn classify_direction(p: &Point3, c: &Point3) -> Result<Direction26, RelationError> {
    let disp = p
        .sub(c)
        .normalized()
        .ok_or(RelationError::DegenerateDisplacement)?;
    let mut best = Direction26 { code: 0 };
    let mut best_dot = f64::NEG_INFINITY;
    for d in Direction26::all() {
        let dot = disp.dot(&d.vector());
        if dot > best_dot {
            best_dot = dot;
            best = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, UnitSphere};

    fn params() -> RelationParams {
        RelationParams::default()
    }

    fn dir(dx: i8, dy: i8, dz: i8) -> Direction26 {
        Direction26::from_components(dx, dy, dz).unwrap()
    }

    #[test]
    fn direction_table_is_bijective_and_unit() {
        let mut labels = std::collections::BTreeSet::new();
        let mut comps = std::collections::BTreeSet::new();
        for d in Direction26::all() {
            assert!((d.vector().norm() - 1.0).abs() < 1e-12);
            assert!(
                labels.insert(d.label().to_string()),
                "duplicate label {}",
                d.label()
            );
            assert!(comps.insert(d.components()));
            assert_eq!(Direction26::from_label(d.label()).unwrap(), d);
            assert_eq!(Direction26::from_code(d.code()).unwrap(), d);
        }
        assert_eq!(labels.len(), 26);
    }

    #[test]
    fn axis_labels_match_frame_convention() {
        assert_eq!(dir(1, 0, 0).label(), "right");
        assert_eq!(dir(-1, 0, 0).label(), "left");
        assert_eq!(dir(0, -1, 0).label(), "above");
        assert_eq!(dir(0, 1, 0).label(), "below");
        assert_eq!(dir(0, 0, 1).label(), "behind");
        assert_eq!(dir(0, 0, -1).label(), "in front of");
        assert_eq!(dir(1, -1, 0).label(), "above-right");
        assert_eq!(dir(-1, 1, -1).label(), "below-left-front");
    }

    #[test]
    fn cone_examples() {
        let c = Point3::new(0.0, 0.0, 1000.0);
        let px = dir(1, 0, 0);
        assert!(in_direction_cone(&Point3::new(500.0, 0.0, 1000.0), &c, px, &params()).unwrap());
        assert!(!in_direction_cone(&Point3::new(500.0, 500.0, 1000.0), &c, px, &params()).unwrap());
        assert!(matches!(
            in_direction_cone(&c, &c, px, &params()),
            Err(RelationError::DegenerateDisplacement)
        ));
    }

    #[test]
    fn cone_boundary_at_exactly_alpha_is_inside() {
        // Rotate the axis by exactly the half-angle; the boundary is inclusive.
        let c = Point3::new(0.0, 0.0, 1000.0);
        let alpha = params().cone_half_angle_deg.to_radians();
        let p = c.add(&Point3::new(alpha.cos(), alpha.sin(), 0.0).scale(300.0));
        assert!(in_direction_cone(&p, &c, dir(1, 0, 0), &params()).unwrap());
        // Slightly past the boundary is outside.
        let beyond = (alpha + 1e-6).to_degrees();
        let q = c.add(
            &Point3::new(beyond.to_radians().cos(), beyond.to_radians().sin(), 0.0).scale(300.0),
        );
        assert!(!in_direction_cone(&q, &c, dir(1, 0, 0), &params()).unwrap());
    }

    #[test]
    fn corridor_examples() {
        let a = Point3::new(0.0, 0.0, 1000.0);
        let b = Point3::new(1000.0, 0.0, 1000.0);
        let p = params();
        assert!(in_between_corridor(&Point3::new(500.0, 50.0, 1000.0), &a, &b, &p).unwrap());
        assert!(!in_between_corridor(&Point3::new(50.0, 0.0, 1000.0), &a, &b, &p).unwrap());
        assert!(!in_between_corridor(&Point3::new(500.0, 150.0, 1000.0), &a, &b, &p).unwrap());
        assert!(matches!(
            in_between_corridor(&Point3::new(0.0, 0.0, 0.0), &a, &a, &p),
            Err(RelationError::DegenerateSegment)
        ));
    }

    #[test]
    fn distance_bias_examples() {
        let c = Point3::new(0.0, 0.0, 1000.0);
        let p = Point3::new(250.0, 0.0, 1000.0);
        assert_eq!(distance_bias(&p, &c, 200.0), 50.0);
        assert_eq!(distance_bias(&c, &c, 0.0), 0.0);
    }

    #[test]
    fn required_offset_examples() {
        let b = ProxyBox {
            center: Point3::new(0.0, 0.0, 1000.0),
            half_extents: (100.0, 50.0, 50.0),
        };
        assert_eq!(
            required_offset(OffsetSpec::MetricMm(300.0), &b).unwrap(),
            300.0
        );
        let two_bodies = required_offset(OffsetSpec::BodyLengths(2.0), &b).unwrap();
        assert!((two_bodies - 244.94897427831782).abs() < 1e-9);
        assert_eq!(
            required_offset(OffsetSpec::BodyLengths(0.0), &b).unwrap(),
            0.0
        );
        assert!(matches!(
            required_offset(OffsetSpec::MetricMm(-1.0), &b),
            Err(RelationError::BadOffset(_))
        ));
    }

    #[test]
    fn classify_examples() {
        let c = Point3::new(0.0, 0.0, 0.0);
        assert_eq!(
            classify_direction(&Point3::new(1.0, 0.0, 0.0), &c).unwrap(),
            dir(1, 0, 0)
        );
        let diag = Point3::new(1.0, 1.0, 0.0).scale(1.0 / 2f64.sqrt());
        assert_eq!(classify_direction(&diag, &c).unwrap(), dir(1, 1, 0));
        assert!(classify_direction(&c, &c).is_err());
    }

    #[test]
    fn classify_fixes_all_canonical_vectors() {
        let origin = Point3::new(0.0, 0.0, 0.0);
        for d in Direction26::all() {
            assert_eq!(classify_direction(&d.vector(), &origin).unwrap(), d);
        }
    }

    /// Largest angle from any unit vector to its nearest canonical direction,
    /// from a dense deterministic sphere sweep. Independent of the classifier.
    fn max_classification_half_angle_deg(samples: usize) -> f64 {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut worst: f64 = 0.0;
        for i in 0..samples {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / samples as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let v = Point3::new(r * th.cos(), y, r * th.sin());
            let min_angle = Direction26::all()
                .map(|d| angle_deg(&v, &d.vector()))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(min_angle);
        }
        worst
    }

    #[test]
    fn classify_is_consistent_with_cone_membership() {
        let bound = max_classification_half_angle_deg(20_000) + 0.5;
        let wide = RelationParams {
            cone_half_angle_deg: bound,
            ..params()
        };
        let c = Point3::new(10.0, -20.0, 1500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let v: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = rng.random_range(10.0..2000.0);
            let p = c.add(&Point3::new(v[0], v[1], v[2]).scale(r));
            let d = classify_direction(&p, &c).unwrap();
            assert!(in_direction_cone(&p, &c, d, &wide).unwrap());
        }
    }

    #[test]
    fn monte_carlo_cone_probability_matches_solid_angle() {
        // P(uniform unit vector within a 30 degree cone) = (1 - cos 30) / 2.
        let c = Point3::new(0.0, 0.0, 0.0);
        let d = dir(1, 0, 0);
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let v: [f64; 3] = UnitSphere.sample(&mut rng);
            let pt = Point3::new(v[0], v[1], v[2]);
            if in_direction_cone(&pt, &c, d, &p).unwrap() {
                hits += 1;
            }
        }
        let expected = (1.0 - 30f64.to_radians().cos()) / 2.0;
        let observed = hits as f64 / n as f64;
        assert!(
            (observed - expected).abs() < 0.01,
            "observed {observed}, expected {expected}"
        );
    }

    #[test]
    fn params_validation_and_config_round_trip() {
        assert!(params().validate().is_ok());
        let bad = RelationParams {
            cone_half_angle_deg: 0.0,
            ..params()
        };
        assert!(bad.validate().is_err());
        let bad = RelationParams {
            corridor_span: (0.9, 0.1),
            ..params()
        };
        assert!(bad.validate().is_err());

        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("params.toml");
        std::fs::write(&toml_path, "cone_half_angle_deg = 25.0\n").unwrap();
        let loaded = RelationParams::load(&toml_path).unwrap();
        assert_eq!(loaded.cone_half_angle_deg, 25.0);
        assert_eq!(loaded.corridor_radius_mm, 100.0);

        let json_path = dir.path().join("params.json");
        std::fs::write(&json_path, serde_json::to_string(&params()).unwrap()).unwrap();
        assert_eq!(RelationParams::load(&json_path).unwrap(), params());
    }

    proptest! {
        #[test]
        fn cone_is_scale_invariant(
            vx in -1.0f64..1.0, vy in -1.0f64..1.0, vz in -1.0f64..1.0,
            k in 0.01f64..100.0,
            code in 0u8..26,
        ) {
            prop_assume!(vx.abs() + vy.abs() + vz.abs() > 1e-6);
            let c = Point3::new(5.0, -3.0, 900.0);
            let d = Direction26::from_code(code).unwrap();
            let p1 = c.add(&Point3::new(vx, vy, vz));
            let pk = c.add(&Point3::new(vx, vy, vz).scale(k));
            let a1 = in_direction_cone(&p1, &c, d, &params()).unwrap();
            let ak = in_direction_cone(&pk, &c, d, &params()).unwrap();
            // Skip the measure-zero boundary where scaling can flip the verdict.
            let angle = angle_deg(&p1.sub(&c), &d.vector());
            prop_assume!((angle - params().cone_half_angle_deg).abs() > 1e-6);
            prop_assert_eq!(a1, ak);
        }

        #[test]
        fn corridor_symmetric_under_endpoint_swap(
            px in -500.0f64..1500.0, py in -300.0f64..300.0, pz in 500.0f64..1500.0,
        ) {
            let a = Point3::new(0.0, 0.0, 1000.0);
            let b = Point3::new(1000.0, 0.0, 1000.0);
            let p = Point3::new(px, py, pz);
            // Default span (0.10, 0.90) is symmetric about 0.5.
            let fwd = in_between_corridor(&p, &a, &b, &params()).unwrap();
            let rev = in_between_corridor(&p, &b, &a, &params()).unwrap();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn bias_satisfies_triangle_bound(
            x1 in -500.0f64..500.0, y1 in -500.0f64..500.0, z1 in 500.0f64..1500.0,
            x2 in -500.0f64..500.0, y2 in -500.0f64..500.0, z2 in 500.0f64..1500.0,
            r in 0.0f64..1000.0,
        ) {
            let c = Point3::new(0.0, 0.0, 1000.0);
            let p1 = Point3::new(x1, y1, z1);
            let p2 = Point3::new(x2, y2, z2);
            let lhs = (distance_bias(&p1, &c, r) - distance_bias(&p2, &c, r)).abs();
            prop_assert!(lhs <= p1.distance(&p2) + 1e-9);
        }

        #[test]
        fn bias_invariant_under_rotation_about_anchor(
            r in 1.0f64..1000.0,
            theta in 0.0f64..std::f64::consts::TAU,
            phi in 0.0f64..std::f64::consts::PI,
            r_star in 0.0f64..1000.0,
        ) {
            let c = Point3::new(40.0, -10.0, 1200.0);
            let p1 = c.add(&Point3::new(r, 0.0, 0.0));
            let rotated = Point3::new(
                r * phi.sin() * theta.cos(),
                r * phi.sin() * theta.sin(),
                r * phi.cos(),
            );
            let p2 = c.add(&rotated);
            let b1 = distance_bias(&p1, &c, r_star);
            let b2 = distance_bias(&p2, &c, r_star);
            prop_assert!((b1 - b2).abs() < 1e-6);
        }
    }
}
