//! Missions, evaluation specs and the soft photographic blueprint.
//!
//! The blueprint biases the search but never constrains it: every field has
//! a usable default, and the advisor-backed builder falls back field by field
//! to the deterministic rule-based builder.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::advisors::{Advisor, Role};
use crate::camera::{AnglePref, AspectRatio, CameraState, Placement};
use crate::geometry::Vec3;
use crate::scene::{geometric_summary, SceneModel, TopologySummary};

pub const MISSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("failed to read mission file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed mission document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("mission `{0}`: aspect_set is empty")]
    EmptyAspectSet(String),
    #[error("mission `{mission}` references unknown object `{object}`")]
    UnknownObject { mission: String, object: String },
    #[error("duplicate mission id `{0}`")]
    DuplicateMission(String),
    #[error("mission `{0}` not found in registry")]
    NotFound(String),
    #[error("registry holds {0} missions; choose one by id")]
    Ambiguous(usize),
    #[error("unsupported mission format_version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionCategory {
    SubjectPlacement,
    RelationalComposition,
    AtmosphereStyle,
}

impl MissionCategory {
    pub const ALL: [MissionCategory; 3] = [
        MissionCategory::SubjectPlacement,
        MissionCategory::RelationalComposition,
        MissionCategory::AtmosphereStyle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MissionCategory::SubjectPlacement => "subject_placement",
            MissionCategory::RelationalComposition => "relational_composition",
            MissionCategory::AtmosphereStyle => "atmosphere_style",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePref {
    Small,
    Medium,
    Large,
}

/// Subject screen-coverage bands per scale preference, `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleBands {
    pub small: (f64, f64),
    pub medium: (f64, f64),
    pub large: (f64, f64),
}

impl Default for ScaleBands {
    fn default() -> Self {
        Self {
            small: (0.005, 0.05),
            medium: (0.05, 0.20),
            large: (0.20, 0.60),
        }
    }
}

impl ScaleBands {
    pub fn band(&self, pref: ScalePref) -> (f64, f64) {
        match pref {
            ScalePref::Small => self.small,
            ScalePref::Medium => self.medium,
            ScalePref::Large => self.large,
        }
    }

    /// Band membership; the large band includes its upper edge.
    pub fn contains(&self, pref: ScalePref, coverage: f64) -> bool {
        let (lo, hi) = self.band(pref);
        coverage >= lo && (coverage < hi || (pref == ScalePref::Large && coverage <= hi))
    }

    pub fn is_well_formed(&self) -> bool {
        let b = [self.small, self.medium, self.large];
        b.iter().all(|(lo, hi)| lo < hi && *lo >= 0.0 && *hi <= 1.0) && b[0].1 <= b[1].0 && b[1].1 <= b[2].0
    }
}

/// Checkable task intent attached to a mission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    #[serde(default)]
    pub primary_subject: Option<String>,
    #[serde(default)]
    pub placement_pref: Option<Placement>,
    #[serde(default)]
    pub scale_pref: Option<ScalePref>,
    #[serde(default)]
    pub angle_pref: Option<AnglePref>,
    #[serde(default)]
    pub symmetry: Option<bool>,
    #[serde(default)]
    pub depth_emphasis: Option<bool>,
    #[serde(default)]
    pub hard_fail_conditions: Vec<String>,
}

/// Pre-rendered scouting camera supplied with the mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoutView {
    pub position: Vec3,
    pub look_at: Vec3,
    #[serde(default = "default_focal")]
    pub focal_mm: f64,
    #[serde(default)]
    pub visibility: Option<f64>,
}

fn default_focal() -> f64 {
    35.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    #[serde(default)]
    pub notes: Option<String>,
    #[serde(default)]
    pub scout_views: Vec<ScoutView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub mission_id: String,
    pub category: MissionCategory,
    pub scene_ref: String,
    pub instruction: String,
    #[serde(default)]
    pub bootstrap: Bootstrap,
    pub aspect_set: Vec<AspectRatio>,
    #[serde(default)]
    pub eval_spec: EvaluationSpec,
}

impl MissionSpec {
    pub fn validate(&self, scene: &SceneModel) -> Result<(), MissionError> {
        if self.aspect_set.is_empty() {
            return Err(MissionError::EmptyAspectSet(self.mission_id.clone()));
        }
        if let Some(id) = &self.eval_spec.primary_subject {
            if scene.object(id).is_none() {
                return Err(MissionError::UnknownObject {
                    mission: self.mission_id.clone(),
                    object: id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissionRegistry {
    pub format_version: u32,
    pub missions: Vec<MissionSpec>,
}

fn parse_err(e: serde_json::Error) -> MissionError {
    MissionError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses either a registry document or a single mission document.
pub fn parse_missions(text: &str) -> Result<Vec<MissionSpec>, MissionError> {
    let value: Value = serde_json::from_str(text).map_err(parse_err)?;
    let missions = if value.get("missions").is_some() {
        let reg: MissionRegistry = serde_json::from_str(text).map_err(parse_err)?;
        if reg.format_version != MISSION_FORMAT_VERSION {
            return Err(MissionError::UnsupportedVersion(reg.format_version));
        }
        reg.missions
    } else {
        vec![serde_json::from_str(text).map_err(parse_err)?]
    };
    let mut seen = HashSet::new();
    for m in &missions {
        if !seen.insert(m.mission_id.clone()) {
            return Err(MissionError::DuplicateMission(m.mission_id.clone()));
        }
        if m.aspect_set.is_empty() {
            return Err(MissionError::EmptyAspectSet(m.mission_id.clone()));
        }
    }
    Ok(missions)
}

pub fn load_missions(path: impl AsRef<Path>) -> Result<Vec<MissionSpec>, MissionError> {
    parse_missions(&fs::read_to_string(path)?)
}

/// Picks one mission from a registry, by id when given.
pub fn select_mission(missions: Vec<MissionSpec>, id: Option<&str>) -> Result<MissionSpec, MissionError> {
    match id {
        Some(id) => missions
            .into_iter()
            .find(|m| m.mission_id == id)
            .ok_or_else(|| MissionError::NotFound(id.to_string())),
        None if missions.len() == 1 => Ok(missions.into_iter().next().unwrap()),
        None => Err(MissionError::Ambiguous(missions.len())),
    }
}

pub fn registry_to_string(missions: &[MissionSpec]) -> String {
    serde_json::to_string_pretty(&MissionRegistry {
        format_version: MISSION_FORMAT_VERSION,
        missions: missions.to_vec(),
    })
    .expect("registry serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionCue {
    Thirds,
    Center,
    LeadingLines,
    FrameWithinFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZonePref {
    #[default]
    Ground,
    Elevated,
    Aerial,
    Interior,
}

impl ZonePref {
    /// Camera height band as fractions of scene height above the scene floor.
    pub fn height_band(&self) -> (f64, f64) {
        match self {
            ZonePref::Ground => (0.0, 0.35),
            ZonePref::Elevated => (0.35, 1.2),
            ZonePref::Aerial => (1.2, 3.0),
            ZonePref::Interior => (0.1, 0.9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Soft preferences. Every field is optional on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    #[serde(default)]
    pub primary_subject: Option<String>,
    #[serde(default)]
    pub context_objects: Vec<String>,
    #[serde(default)]
    pub composition_cues: Vec<CompositionCue>,
    #[serde(default = "default_angle")]
    pub angle_pref: AnglePref,
    #[serde(default)]
    pub zone_pref: ZonePref,
    #[serde(default)]
    pub look_toward: Vec3,
    #[serde(default)]
    pub axis_pref: Option<Axis>,
    #[serde(default)]
    pub symmetry_pref: Option<bool>,
    #[serde(default)]
    pub vibe: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}

fn default_angle() -> AnglePref {
    AnglePref::Eye
}

impl Blueprint {
    pub const FIELDS: [&'static str; 10] = [
        "primary_subject",
        "context_objects",
        "composition_cues",
        "angle_pref",
        "zone_pref",
        "look_toward",
        "axis_pref",
        "symmetry_pref",
        "vibe",
        "negatives",
    ];
}

const VIBE_WORDS: [&str; 16] = [
    "lonely", "cinematic", "moody", "muted", "bright", "calm", "dramatic", "cozy", "epic", "mysterious",
    "serene", "grand", "intimate", "panoramic", "vast", "warm",
];

fn extract_vibe(instruction: &str) -> String {
    let lower = instruction.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| VIBE_WORDS.contains(w))
        .collect();
    words.join(" ")
}

fn extract_negatives(instruction: &str) -> Vec<String> {
    let lower = instruction.to_lowercase();
    let mut out = Vec::new();
    for clause in lower.split(['.', ',', ';']) {
        let clause = clause.trim();
        for marker in ["avoid ", "no ", "without "] {
            if let Some(rest) = clause.find(marker).map(|i| &clause[i + marker.len()..]) {
                let rest = rest.trim();
                if !rest.is_empty() {
                    out.push(rest.to_string());
                }
                break;
            }
        }
    }
    out.truncate(8);
    out
}

/// Deterministic blueprint from the evaluation spec and scene topology.
pub fn build_blueprint_rule_based(mission: &MissionSpec, scene: &SceneModel, topo: &TopologySummary) -> Blueprint {
    let eval = &mission.eval_spec;
    let primary = eval
        .primary_subject
        .clone()
        .filter(|id| scene.object(id).is_some())
        .or_else(|| topo.dominant_objects.first().cloned());
    let look_toward = primary
        .as_deref()
        .and_then(|id| scene.object(id))
        .map(|o| o.center())
        .unwrap_or_else(|| scene.centroid());
    let context_objects = topo
        .dominant_objects
        .iter()
        .filter(|id| Some(*id) != primary.as_ref())
        .take(2)
        .cloned()
        .collect();
    let cue = match eval.placement_pref {
        Some(p) if p.is_thirds() => CompositionCue::Thirds,
        _ => CompositionCue::Center,
    };
    let angle = eval.angle_pref.unwrap_or(AnglePref::Eye);
    let zone = match angle {
        AnglePref::Low | AnglePref::Eye => ZonePref::Ground,
        AnglePref::High => ZonePref::Elevated,
        AnglePref::Top => ZonePref::Aerial,
    };
    let ext = scene.scene_aabb().extent();
    let axis_pref = if ext.x > 2.0 * ext.y.max(ext.z) {
        Some(Axis::X)
    } else if ext.y > 2.0 * ext.x.max(ext.z) {
        Some(Axis::Y)
    } else if ext.z > 2.0 * ext.x.max(ext.y) {
        Some(Axis::Z)
    } else {
        None
    };
    Blueprint {
        primary_subject: primary,
        context_objects,
        composition_cues: vec![cue],
        angle_pref: angle,
        zone_pref: zone,
        look_toward,
        axis_pref,
        symmetry_pref: eval.symmetry,
        vibe: extract_vibe(&mission.instruction),
        negatives: extract_negatives(&mission.instruction),
    }
}

/// Which blueprint fields came from the rule-based fallback, and why.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlueprintProvenance {
    pub source: String,
    pub fallback_fields: Vec<String>,
    pub fallback_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct BlueprintRequest<'a> {
    mission_id: &'a str,
    instruction: &'a str,
    bootstrap: &'a Bootstrap,
    eval_spec: &'a EvaluationSpec,
    aspect_set: &'a [AspectRatio],
    geometry: crate::scene::GeometricSummary,
    topology: &'a TopologySummary,
}

/// Validates an advisor blueprint document field by field against `fallback`.
pub fn merge_blueprint(doc: &Value, scene: &SceneModel, fallback: &Blueprint) -> (Blueprint, Vec<String>) {
    let empty = Map::new();
    let obj = doc.as_object().unwrap_or(&empty);
    let mut bp = fallback.clone();
    let mut replaced = Vec::new();
    let valid_id = |s: &String| scene.object(s).is_some();
    let bounds = scene.scene_aabb().scaled(2.0);

    macro_rules! take {
        ($field:ident, $ty:ty, $ok:expr) => {{
            let name = stringify!($field);
            match obj.get(name).map(|v| serde_json::from_value::<$ty>(v.clone())) {
                Some(Ok(v)) if ($ok)(&v) => bp.$field = v,
                _ => replaced.push(name.to_string()),
            }
        }};
    }

    match obj.get("primary_subject").map(|v| serde_json::from_value::<String>(v.clone())) {
        Some(Ok(id)) if valid_id(&id) => bp.primary_subject = Some(id),
        _ => replaced.push("primary_subject".into()),
    }
    take!(context_objects, Vec<String>, |v: &Vec<String>| v.iter().all(valid_id) && v.len() <= 16);
    take!(composition_cues, Vec<CompositionCue>, |v: &Vec<CompositionCue>| !v.is_empty());
    take!(angle_pref, AnglePref, |_: &AnglePref| true);
    take!(zone_pref, ZonePref, |_: &ZonePref| true);
    take!(look_toward, Vec3, |v: &Vec3| crate::geometry::is_finite(v) && bounds.contains(v));
    take!(axis_pref, Option<Axis>, |_: &Option<Axis>| true);
    take!(symmetry_pref, Option<bool>, |_: &Option<bool>| true);
    take!(vibe, String, |v: &String| v.chars().count() <= 200);
    take!(negatives, Vec<String>, |v: &Vec<String>| v.len() <= 8);
    (bp, replaced)
}

/// Advisor-parsed blueprint with field-level fallback to the rule-based one.
pub fn build_blueprint_advised(
    mission: &MissionSpec,
    scene: &SceneModel,
    topo: &TopologySummary,
    advisor: &dyn Advisor,
) -> (Blueprint, BlueprintProvenance) {
    let rule = build_blueprint_rule_based(mission, scene, topo);
    let request = BlueprintRequest {
        mission_id: &mission.mission_id,
        instruction: &mission.instruction,
        bootstrap: &mission.bootstrap,
        eval_spec: &mission.eval_spec,
        aspect_set: &mission.aspect_set,
        geometry: geometric_summary(scene),
        topology: topo,
    };
    let payload = serde_json::to_value(&request).expect("request serializes");
    match advisor.call(Role::Blueprint, &payload) {
        Ok(doc) if doc.is_object() => {
            let (bp, fields) = merge_blueprint(&doc, scene, &rule);
            (
                bp,
                BlueprintProvenance {
                    source: advisor.name().to_string(),
                    fallback_reason: (!fields.is_empty()).then(|| "invalid or missing fields".to_string()),
                    fallback_fields: fields,
                },
            )
        }
        Ok(_) => (rule, full_fallback("advisor response is not an object")),
        Err(e) => (rule, full_fallback(&e.to_string())),
    }
}

fn full_fallback(reason: &str) -> BlueprintProvenance {
    BlueprintProvenance {
        source: "rule_based".into(),
        fallback_fields: Blueprint::FIELDS.iter().map(|s| s.to_string()).collect(),
        fallback_reason: Some(reason.to_string()),
    }
}

/// Subject object resolved from the blueprint, falling back to the evaluation spec.
pub fn resolve_subject<'a>(
    scene: &'a SceneModel,
    blueprint: &Blueprint,
    eval: &EvaluationSpec,
) -> Option<&'a crate::scene::SceneObject> {
    eval.primary_subject
        .as_deref()
        .and_then(|id| scene.object(id))
        .or_else(|| blueprint.primary_subject.as_deref().and_then(|id| scene.object(id)))
}

/// Aspect ratio cameras default to when nothing better is known.
pub fn default_aspect(mission: &MissionSpec) -> AspectRatio {
    mission.aspect_set[0]
}

/// Camera validity within a mission (aspect membership included).
pub fn camera_ok(mission: &MissionSpec, cam: &CameraState) -> bool {
    cam.validate_in(&mission.aspect_set).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisors::AdvisorError;
    use crate::scene::{topology_summary, SceneObject};

    fn scene() -> SceneModel {
        SceneModel::new(vec![
            SceneObject::new("cabin", "cabin", Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 2.0, 2.0)),
            SceneObject::new("tower", "tower", Vec3::new(6.0, 0.0, 0.0), Vec3::new(7.0, 1.0, 9.0)),
            SceneObject::new("rock", "rock", Vec3::new(-3.0, 0.0, 0.0), Vec3::new(-2.5, 0.5, 0.5)),
        ])
        .unwrap()
    }

    fn mission(subject: Option<&str>, placement: Option<Placement>) -> MissionSpec {
        MissionSpec {
            mission_id: "m1".into(),
            category: MissionCategory::SubjectPlacement,
            scene_ref: "scene.json".into(),
            instruction: "A lonely cinematic cabin, avoid clutter".into(),
            bootstrap: Bootstrap::default(),
            aspect_set: vec![AspectRatio::WIDE, AspectRatio::SQUARE],
            eval_spec: EvaluationSpec {
                primary_subject: subject.map(String::from),
                placement_pref: placement,
                ..Default::default()
            },
        }
    }

    struct Fixed(Result<Value, AdvisorError>);
    impl Advisor for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn call(&self, _: Role, _: &Value) -> Result<Value, AdvisorError> {
            self.0.clone()
        }
    }

    #[test]
    fn subject_passthrough() {
        let s = scene();
        let bp = build_blueprint_rule_based(&mission(Some("cabin"), None), &s, &topology_summary(&s));
        assert_eq!(bp.primary_subject.as_deref(), Some("cabin"));
        assert_eq!(bp.look_toward, Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(bp.vibe, "lonely cinematic");
        assert_eq!(bp.negatives, vec!["clutter"]);
    }

    #[test]
    fn dominant_tower_when_no_subject() {
        let s = scene();
        let topo = topology_summary(&s);
        let bp = build_blueprint_rule_based(&mission(None, None), &s, &topo);
        assert_eq!(bp.primary_subject.as_deref(), Some("tower"));
    }

    #[test]
    fn thirds_placement_maps_to_thirds_cue() {
        let s = scene();
        let bp = build_blueprint_rule_based(&mission(None, Some(Placement::ThirdsLeft)), &s, &topology_summary(&s));
        assert!(bp.composition_cues.contains(&CompositionCue::Thirds));
        let bp = build_blueprint_rule_based(&mission(None, Some(Placement::Left)), &s, &topology_summary(&s));
        assert_eq!(bp.composition_cues, vec![CompositionCue::Center]);
    }

    #[test]
    fn advised_verbatim_when_valid() {
        let s = scene();
        let topo = topology_summary(&s);
        let m = mission(None, None);
        let mut wanted = build_blueprint_rule_based(&m, &s, &topo);
        wanted.primary_subject = Some("rock".into());
        wanted.vibe = "quiet".into();
        wanted.composition_cues = vec![CompositionCue::LeadingLines];
        let doc = serde_json::to_value(&wanted).unwrap();
        let (bp, prov) = build_blueprint_advised(&m, &s, &topo, &Fixed(Ok(doc)));
        assert_eq!(bp, wanted);
        assert!(prov.fallback_fields.is_empty());
    }

    #[test]
    fn advised_invalid_id_falls_back_per_field() {
        let s = scene();
        let topo = topology_summary(&s);
        let m = mission(None, None);
        let rule = build_blueprint_rule_based(&m, &s, &topo);
        let mut doc = serde_json::to_value(&rule).unwrap();
        doc["primary_subject"] = Value::from("ghost");
        doc["vibe"] = Value::from("foggy");
        let (bp, prov) = build_blueprint_advised(&m, &s, &topo, &Fixed(Ok(doc)));
        assert_eq!(bp.primary_subject, rule.primary_subject);
        assert_eq!(bp.vibe, "foggy");
        assert_eq!(prov.fallback_fields, vec!["primary_subject"]);
    }

    #[test]
    fn advised_unreachable_equals_rule_based() {
        let s = scene();
        let topo = topology_summary(&s);
        let m = mission(Some("cabin"), None);
        let (bp, prov) = build_blueprint_advised(&m, &s, &topo, &Fixed(Err(AdvisorError::Unavailable("down".into()))));
        assert_eq!(bp, build_blueprint_rule_based(&m, &s, &topo));
        assert_eq!(prov.source, "rule_based");
        assert!(prov.fallback_reason.is_some());
    }

    #[test]
    fn look_toward_outside_double_bounds_rejected() {
        let s = scene();
        let topo = topology_summary(&s);
        let m = mission(None, None);
        let rule = build_blueprint_rule_based(&m, &s, &topo);
        let mut doc = serde_json::to_value(&rule).unwrap();
        doc["look_toward"] = serde_json::json!([1000.0, 0.0, 0.0]);
        let (bp, fields) = merge_blueprint(&doc, &s, &rule);
        assert_eq!(bp.look_toward, rule.look_toward);
        assert_eq!(fields, vec!["look_toward"]);
    }

    #[test]
    fn registry_parsing() {
        let m = mission(Some("cabin"), Some(Placement::ThirdsRight));
        let text = registry_to_string(std::slice::from_ref(&m));
        let back = parse_missions(&text).unwrap();
        assert_eq!(back, vec![m.clone()]);
        let single = serde_json::to_string(&m).unwrap();
        assert_eq!(parse_missions(&single).unwrap(), vec![m.clone()]);
        let dup = registry_to_string(&[m.clone(), m]);
        assert!(matches!(parse_missions(&dup), Err(MissionError::DuplicateMission(_))));
    }

    #[test]
    fn scale_bands() {
        let b = ScaleBands::default();
        assert!(b.is_well_formed());
        assert!(b.contains(ScalePref::Medium, 0.05));
        assert!(!b.contains(ScalePref::Medium, 0.20));
        assert!(b.contains(ScalePref::Large, 0.60));
        assert!(!b.contains(ScalePref::Small, 0.004));
    }
}
