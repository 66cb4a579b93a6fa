//! Advisor roles (proposer, visual reviewer, round reflector, pairwise judge)
//! behind one pluggable transport.
//!
//! An [`Advisor`] only moves JSON documents. Everything that leaves this
//! module goes through the parsing functions below, which validate, clamp,
//! and fall back, so no advisor response can violate a downstream invariant.

mod remote;
mod stub;

pub use remote::RemoteAdvisor;
pub use stub::{stub_visual_scores, StubAdvisor};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::blueprint::{Blueprint, EvaluationSpec};
use crate::camera::{AspectRatio, CameraState, RuleSignals};
use crate::geometry::Vec3;
use crate::memory::{inside_any, ForbiddenZone, RegionKey, ZoneOrigin};
use crate::scene::SceneModel;

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_RATIONALE_CHARS: usize = 500;
pub const MAX_FAILURE_TAGS: usize = 6;
pub const MAX_REVIEWER_ZONES: usize = 2;
pub const MAX_SEED_CANDIDATES: usize = 4;
pub const STEP_SCALE_RANGE: (f64, f64) = (0.4, 1.8);
pub const EXPLORE_RATIO_RANGE: (f64, f64) = (0.1, 0.8);
pub const NEUTRAL_STEP_SCALE: f64 = 1.0;
pub const NEUTRAL_EXPLORE_RATIO: f64 = 0.35;
pub const NEUTRAL_REVIEW_SCORE: f64 = 0.5;
/// Margin by which the stub judge requires a challenger to beat the incumbent.
pub const PAIRWISE_MARGIN: f64 = 0.02;
const MAX_TEXT_CHARS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Blueprint,
    Propose,
    Review,
    Reflect,
    Compare,
    FinalRatio,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdvisorError {
    #[error("advisor unavailable: {0}")]
    Unavailable(String),
    #[error("advisor timed out")]
    Timeout,
    #[error("advisor transport error: {0}")]
    Transport(String),
    #[error("malformed advisor response: {0}")]
    Malformed(String),
    #[error("advisor does not implement this role")]
    Unsupported,
}

/// Transport for advisor calls: one request document in, one response out.
pub trait Advisor: Send + Sync {
    fn name(&self) -> &str;

    fn call(&self, role: Role, payload: &Value) -> Result<Value, AdvisorError>;

    /// Whether the advisor answers `role` at all. Unsupported roles go
    /// straight to the rule-based path without being logged as fallbacks.
    fn supports(&self, _role: Role) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOrigin {
    Incumbent,
    Region,
    Anchor,
    Probe,
    HighExplore,
    Fallback,
}

/// Camera hypothesis fed to the proposer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub camera: CameraState,
    pub origin: SeedOrigin,
    #[serde(default)]
    pub anchor_index: Option<usize>,
    #[serde(default)]
    pub region: Option<RegionKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProposal {
    pub camera: CameraState,
    pub rationale: String,
    pub seed_origin: SeedOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferredMotion {
    #[default]
    Hold,
    OrbitLeft,
    OrbitRight,
    DollyIn,
    DollyOut,
    CraneUp,
    CraneDown,
    ZoomIn,
    ZoomOut,
}

/// Image-side scores (m3..m6). On the wire they are named `m1`..`m4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualReview {
    pub m3: f64,
    pub m4: f64,
    pub m5: f64,
    pub m6: f64,
    pub reasoning: String,
    pub summary: String,
    pub fallback_used: bool,
}

impl VisualReview {
    pub fn neutral() -> Self {
        Self {
            m3: NEUTRAL_REVIEW_SCORE,
            m4: NEUTRAL_REVIEW_SCORE,
            m5: NEUTRAL_REVIEW_SCORE,
            m6: NEUTRAL_REVIEW_SCORE,
            reasoning: String::new(),
            summary: String::new(),
            fallback_used: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFeedback {
    pub round_review: String,
    pub next_strategy: String,
    pub step_scale: f64,
    pub explore_ratio_next: f64,
    pub preferred_motion: PreferredMotion,
    pub failure_tags: Vec<String>,
    pub forbidden_zones: Vec<ForbiddenZone>,
    pub seed_candidates: Vec<CameraState>,
    pub fallback_used: bool,
}

impl RoundFeedback {
    pub fn neutral() -> Self {
        Self {
            round_review: String::new(),
            next_strategy: String::new(),
            step_scale: NEUTRAL_STEP_SCALE,
            explore_ratio_next: NEUTRAL_EXPLORE_RATIO,
            preferred_motion: PreferredMotion::Hold,
            failure_tags: Vec::new(),
            forbidden_zones: Vec::new(),
            seed_candidates: Vec::new(),
            fallback_used: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseVerdict {
    KeepIncumbent,
    TakeChallenger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDecision {
    pub verdict: PairwiseVerdict,
    pub per_dimension: BTreeMap<String, String>,
    pub fallback_used: bool,
}

/// Compact per-candidate record sent to the reflector and the judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDigest {
    pub index: usize,
    pub camera: CameraState,
    pub seed_origin: SeedOrigin,
    pub rule: RuleSignals,
    pub review: VisualReview,
    pub score: f64,
    pub region_key: RegionKey,
    pub subject_coverage: f64,
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub round: usize,
    pub k: usize,
    pub seeds: Vec<Seed>,
    pub blueprint: Blueprint,
    pub last_feedback: Option<RoundFeedback>,
    pub aspect_set: Vec<AspectRatio>,
    pub forbidden_zones: Vec<ForbiddenZone>,
    pub cell_size: f64,
    pub step_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub camera: CameraState,
    pub image_path: Option<String>,
    pub width: u32,
    pub height: u32,
    pub instruction: String,
    pub eval_spec: EvaluationSpec,
    pub blueprint: Blueprint,
    pub scale_band: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectRequest {
    pub round: usize,
    pub candidates: Vec<CandidateDigest>,
    pub incumbent: Option<CandidateDigest>,
    pub blueprint: Blueprint,
    pub scale_band: (f64, f64),
    pub cell_size: f64,
    pub aspect_set: Vec<AspectRatio>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRequest {
    pub incumbent: CandidateDigest,
    pub challenger: CandidateDigest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalRatioRequest {
    pub aspect_set: Vec<AspectRatio>,
    pub incumbent: CandidateDigest,
    pub rule_choice: AspectRatio,
    pub vibe: String,
}

fn to_payload<T: Serialize>(req: &T) -> Value {
    serde_json::to_value(req).expect("advisor request serializes")
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

fn text_field(obj: &Map<String, Value>, key: &str) -> String {
    obj.get(key)
        .and_then(Value::as_str)
        .map(|s| truncate(s, MAX_TEXT_CHARS))
        .unwrap_or_default()
}

fn finite_number(v: Option<&Value>) -> Option<f64> {
    v.and_then(Value::as_f64).filter(|x| x.is_finite())
}

/// Result of one proposal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatch {
    pub proposals: Vec<CandidateProposal>,
    /// Number of proposals produced by the fallback path.
    pub fallback_count: usize,
    pub fallback_reason: Option<String>,
}

/// Gaussian perturbation of a seed camera, rejected against forbidden zones
/// and object interiors. Returns the unperturbed seed camera if no sample
/// lands in free space.
pub fn perturb_seed<R: Rng>(
    seed: &CameraState,
    h: f64,
    step_scale: f64,
    zones: &[ForbiddenZone],
    scene: Option<&SceneModel>,
    rng: &mut R,
) -> CameraState {
    let pos_noise = Normal::new(0.0, (0.25 * h * step_scale).max(1e-9)).expect("finite sigma");
    let look_noise = Normal::new(0.0, (0.1 * h).max(1e-9)).expect("finite sigma");
    for _ in 0..16 {
        let dp = Vec3::new(pos_noise.sample(rng), pos_noise.sample(rng), pos_noise.sample(rng));
        let dl = Vec3::new(look_noise.sample(rng), look_noise.sample(rng), look_noise.sample(rng));
        let mut cam = *seed;
        cam.position += dp;
        cam.look_at += dl;
        let blocked = inside_any(zones, &cam.position)
            || scene.is_some_and(|s| s.point_inside_any(&cam.position))
            || cam.validate().is_err();
        if !blocked {
            return cam;
        }
    }
    *seed
}

fn parse_proposal(v: &Value, aspect_set: &[AspectRatio], zones: &[ForbiddenZone], default_origin: SeedOrigin) -> Option<CandidateProposal> {
    let obj = v.as_object()?;
    let camera: CameraState = serde_json::from_value(obj.get("camera")?.clone()).ok()?;
    camera.validate_in(aspect_set).ok()?;
    if inside_any(zones, &camera.position) {
        return None;
    }
    let rationale = truncate(obj.get("rationale").and_then(Value::as_str).unwrap_or(""), MAX_RATIONALE_CHARS);
    let seed_origin = obj
        .get("seed_origin")
        .and_then(|o| serde_json::from_value::<SeedOrigin>(o.clone()).ok())
        .unwrap_or(default_origin);
    Some(CandidateProposal {
        camera,
        rationale,
        seed_origin,
    })
}

/// Turns seeds into exactly `k` proposals. Advisor proposals are validated
/// against the camera invariants, the aspect set and the forbidden zones;
/// missing slots are filled from the seeds (total failure) or from seed
/// perturbations (partial failure), marked as `fallback`.
pub fn propose<R: Rng>(
    advisor: &dyn Advisor,
    req: &ProposeRequest,
    scene: Option<&SceneModel>,
    rng: &mut R,
) -> ProposalBatch {
    assert!(req.k >= 1 && !req.seeds.is_empty(), "propose needs k >= 1 and a non-empty seed pool");
    let mut reason = None;
    let mut proposals: Vec<CandidateProposal> = match advisor.call(Role::Propose, &to_payload(req)) {
        Ok(doc) => match doc.get("candidates").and_then(Value::as_array) {
            Some(items) => items
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let origin = req.seeds.get(i).map(|s| s.origin).unwrap_or(SeedOrigin::Probe);
                    parse_proposal(v, &req.aspect_set, &req.forbidden_zones, origin)
                })
                .take(req.k)
                .collect(),
            None => {
                reason = Some("response has no candidates array".to_string());
                Vec::new()
            }
        },
        Err(e) => {
            reason = Some(e.to_string());
            Vec::new()
        }
    };
    let valid = proposals.len();
    if valid < req.k && reason.is_none() {
        reason = Some(format!("{} of {} proposals usable", valid, req.k));
    }
    let mut fallback_count = 0;
    if valid == 0 {
        for seed in req.seeds.iter().take(req.k) {
            proposals.push(CandidateProposal {
                camera: seed.camera,
                rationale: "fallback: seed passthrough".into(),
                seed_origin: SeedOrigin::Fallback,
            });
            fallback_count += 1;
        }
    }
    let mut j = 0usize;
    while proposals.len() < req.k {
        let base = &req.seeds[j % req.seeds.len()].camera;
        let camera = perturb_seed(base, req.cell_size, req.step_scale, &req.forbidden_zones, scene, rng);
        proposals.push(CandidateProposal {
            camera,
            rationale: "fallback: seed perturbation".into(),
            seed_origin: SeedOrigin::Fallback,
        });
        fallback_count += 1;
        j += 1;
    }
    ProposalBatch {
        proposals,
        fallback_count,
        fallback_reason: reason,
    }
}

/// Parses a visual review. Wire fields `m1..m4` map to m3..m6; each score
/// is clamped to `[0, 1]`. Any parse failure yields the neutral 0.5 review.
pub fn parse_review(doc: &Value) -> VisualReview {
    let Some(obj) = doc.as_object() else {
        return VisualReview::neutral();
    };
    let mut scores = [0.0; 4];
    for (slot, key) in scores.iter_mut().zip(["m1", "m2", "m3", "m4"]) {
        match finite_number(obj.get(key)) {
            Some(x) => *slot = x.clamp(0.0, 1.0),
            None => return VisualReview::neutral(),
        }
    }
    VisualReview {
        m3: scores[0],
        m4: scores[1],
        m5: scores[2],
        m6: scores[3],
        reasoning: text_field(obj, "reasoning"),
        summary: text_field(obj, "summary"),
        fallback_used: false,
    }
}

pub fn review_image(advisor: &dyn Advisor, req: &ReviewRequest) -> VisualReview {
    match advisor.call(Role::Review, &to_payload(req)) {
        Ok(doc) => parse_review(&doc),
        Err(_) => VisualReview::neutral(),
    }
}

fn parse_zone(v: &Value, h: f64) -> Option<ForbiddenZone> {
    let obj = v.as_object()?;
    let center: Vec3 = serde_json::from_value(obj.get("center")?.clone()).ok()?;
    let half: Vec3 = serde_json::from_value(obj.get("half_extent")?.clone()).ok()?;
    if !crate::geometry::is_finite(&center) || !crate::geometry::is_finite(&half) {
        return None;
    }
    let lo = 1e-3 * h;
    let hi = 2.0 * h;
    Some(ForbiddenZone {
        center,
        half_extent: half.map(|c| c.abs().clamp(lo, hi)),
        origin: ZoneOrigin::Reviewer,
    })
}

/// Parses round feedback with every clamp applied. A response that is not
/// an object or lacks numeric `step_scale`/`explore_ratio_next` is a parse
/// failure and yields neutral feedback.
pub fn parse_feedback(doc: &Value, h: f64, aspect_set: &[AspectRatio]) -> RoundFeedback {
    let Some(obj) = doc.as_object() else {
        return RoundFeedback::neutral();
    };
    let (Some(step), Some(explore)) = (
        finite_number(obj.get("step_scale")),
        finite_number(obj.get("explore_ratio_next")),
    ) else {
        return RoundFeedback::neutral();
    };
    let failure_tags = obj
        .get("failure_tags")
        .and_then(Value::as_array)
        .map(|tags| {
            tags.iter()
                .filter_map(Value::as_str)
                .map(|s| truncate(s, 64))
                .take(MAX_FAILURE_TAGS)
                .collect()
        })
        .unwrap_or_default();
    let forbidden_zones = obj
        .get("forbidden_zones")
        .and_then(Value::as_array)
        .map(|zs| zs.iter().take(MAX_REVIEWER_ZONES).filter_map(|z| parse_zone(z, h)).collect())
        .unwrap_or_default();
    let seed_candidates = obj
        .get("candidates")
        .or_else(|| obj.get("seed_candidates"))
        .and_then(Value::as_array)
        .map(|cs| {
            cs.iter()
                .filter_map(|c| {
                    let c = c.get("camera").unwrap_or(c);
                    serde_json::from_value::<CameraState>(c.clone()).ok()
                })
                .filter(|c| c.validate_in(aspect_set).is_ok())
                .take(MAX_SEED_CANDIDATES)
                .collect()
        })
        .unwrap_or_default();
    RoundFeedback {
        round_review: text_field(obj, "round_review"),
        next_strategy: text_field(obj, "next_strategy"),
        step_scale: step.clamp(STEP_SCALE_RANGE.0, STEP_SCALE_RANGE.1),
        explore_ratio_next: explore.clamp(EXPLORE_RATIO_RANGE.0, EXPLORE_RATIO_RANGE.1),
        preferred_motion: obj
            .get("preferred_motion")
            .and_then(|m| serde_json::from_value(m.clone()).ok())
            .unwrap_or_default(),
        failure_tags,
        forbidden_zones,
        seed_candidates,
        fallback_used: false,
    }
}

pub fn reflect_round(advisor: &dyn Advisor, req: &ReflectRequest) -> RoundFeedback {
    assert!(!req.candidates.is_empty(), "reflect_round needs at least one candidate record");
    match advisor.call(Role::Reflect, &to_payload(req)) {
        Ok(doc) => parse_feedback(&doc, req.cell_size, &req.aspect_set),
        Err(_) => RoundFeedback::neutral(),
    }
}

/// Parses a pairwise verdict; anything unparseable keeps the incumbent.
pub fn parse_verdict(doc: &Value) -> PairwiseDecision {
    let keep = PairwiseDecision {
        verdict: PairwiseVerdict::KeepIncumbent,
        per_dimension: BTreeMap::new(),
        fallback_used: true,
    };
    let Some(verdict) = doc
        .get("verdict")
        .and_then(|v| serde_json::from_value::<PairwiseVerdict>(v.clone()).ok())
    else {
        return keep;
    };
    let per_dimension = doc
        .get("per_dimension")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| v.as_str().map(|s| (truncate(k, 64), truncate(s, 64))))
                .take(16)
                .collect()
        })
        .unwrap_or_default();
    PairwiseDecision {
        verdict,
        per_dimension,
        fallback_used: false,
    }
}

pub fn compare_pairwise(advisor: &dyn Advisor, req: &CompareRequest) -> PairwiseDecision {
    match advisor.call(Role::Compare, &to_payload(req)) {
        Ok(doc) => parse_verdict(&doc),
        Err(_) => parse_verdict(&Value::Null),
    }
}

/// Advisor override of the final aspect ratio; only members of the aspect
/// set are accepted.
pub fn final_ratio_override(advisor: &dyn Advisor, req: &FinalRatioRequest) -> Option<AspectRatio> {
    if !advisor.supports(Role::FinalRatio) {
        return None;
    }
    let doc = advisor.call(Role::FinalRatio, &to_payload(req)).ok()?;
    let ratio: AspectRatio = serde_json::from_value(doc.get("ratio")?.clone()).ok()?;
    req.aspect_set.contains(&ratio).then_some(ratio)
}

/// Wire envelope for remote calls.
pub fn envelope(role: Role, payload: &Value) -> Value {
    json!({ "role": role, "payload": payload, "schema_version": SCHEMA_VERSION })
}
