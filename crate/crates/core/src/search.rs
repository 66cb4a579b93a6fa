//! The finite-horizon search: seed pools, proposal, preview rendering,
//! scoring, pairwise incumbent selection, reflection, region memory, final
//! aspect-ratio choice and the run log.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisors::{
    compare_pairwise, final_ratio_override, propose, reflect_round, review_image, stub_visual_scores, Advisor,
    CandidateDigest, CandidateProposal, CompareRequest, FinalRatioRequest, PairwiseDecision, PairwiseVerdict,
    PreferredMotion, ProposeRequest, ReflectRequest, ReviewRequest, Role, RoundFeedback, Seed, SeedOrigin,
    VisualReview,
};
use crate::anchors::{build_anchor_bank, Anchor, AnchorConfig};
use crate::blueprint::{
    build_blueprint_advised, build_blueprint_rule_based, default_aspect, resolve_subject, Blueprint,
    BlueprintProvenance, MissionCategory, MissionError, MissionSpec, ScalePref, ScaleBands,
};
use crate::camera::{project_box, rule_signals, AspectRatio, CameraState, FailureThresholds, RuleSignals, FOCAL_RANGE};
use crate::geometry::Vec3;
use crate::memory::{
    cell_size, inside_any, search_diagnostics, CellSnapshot, ForbiddenZone, MemoryError, RegionKey, RegionLabel,
    RegionMemory, ReflectorThresholds,
};
use crate::render::{
    render_parallel, resolution_for, Quality, RenderBackend, RenderError, RenderFailure, RenderRequest, RenderResult,
    RenderStats, DEFAULT_FINAL_SAMPLES, PREVIEW_SAMPLE_CAP,
};
use crate::scene::{topology_summary, SceneModel, SceneObject, TopologySummary, VerticalStructure};

pub const RUN_LOG_VERSION: u32 = 1;
pub const SCORE_WEIGHTS: [f64; 6] = [0.10, 0.10, 0.15, 0.15, 0.25, 0.25];
pub const HE_UNKNOWN_BONUS: f64 = 1.2;
pub const HE_KNOWN_BONUS: f64 = 0.25;
pub const HE_DISTANCE_CAP: f64 = 2.0;
pub const HE_VISIT_PENALTY: f64 = 0.35;
pub const HE_PROMISING_PENALTY: f64 = 0.40;
/// Probe sphere radius as a fraction of the incumbent's look distance.
pub const PROBE_RADIUS_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("score input m{index} = {value} is outside [0, 1]")]
    ScoreInput { index: usize, value: f64 },
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("mission {mission_id} failed: {category}")]
    MissionFailed {
        mission_id: String,
        category: String,
        log: Box<RunLog>,
    },
}

/// Weighted sum of the six signals with fixed weights. Inputs must already
/// lie in `[0, 1]`.
pub fn internal_score(m: &[f64; 6]) -> Result<f64, SearchError> {
    for (i, &v) in m.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(SearchError::ScoreInput { index: i + 1, value: v });
        }
    }
    Ok(m.iter().zip(SCORE_WEIGHTS).map(|(v, w)| v * w).sum())
}

/// Whether an anchor is excluded from the high-explore ranking: its cell is
/// dead or its position lies in a forbidden zone.
pub fn anchor_skipped(anchor: &Anchor, memory: &RegionMemory, zones: &[ForbiddenZone]) -> bool {
    memory.label_at(&anchor.position) == RegionLabel::Dead || inside_any(zones, &anchor.position)
}

/// High-explore priority of an anchor, or `None` when its cell is dead.
pub fn high_explore_priority(anchor: &Anchor, incumbent_pos: &Vec3, memory: &RegionMemory) -> Option<f64> {
    let h = memory.cell_size();
    let record = memory.record_at(&memory.key(&anchor.position));
    let label = record.label();
    if label == RegionLabel::Dead {
        return None;
    }
    let u = if label == RegionLabel::Unknown { HE_UNKNOWN_BONUS } else { HE_KNOWN_BONUS };
    let dist = ((anchor.position - incumbent_pos).norm() / (2.0 * h)).min(HE_DISTANCE_CAP);
    let promising = if label == RegionLabel::Promising { HE_PROMISING_PENALTY } else { 0.0 };
    Some(anchor.prior + u + dist - HE_VISIT_PENALTY * record.visits as f64 - promising)
}

/// Index of the top-priority non-skipped anchor; ties keep bank order.
pub fn pick_high_explore(
    bank: &[Anchor],
    incumbent_pos: &Vec3,
    memory: &RegionMemory,
    zones: &[ForbiddenZone],
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in bank.iter().enumerate() {
        if inside_any(zones, &a.position) {
            continue;
        }
        if let Some(s) = high_explore_priority(a, incumbent_pos, memory) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub rounds: usize,
    pub candidates: usize,
    pub explore_ratio_init: f64,
    pub step_scale_init: f64,
    pub workers: usize,
    pub seed: u64,
    pub high_explore: bool,
    pub region_memory: bool,
    pub preview_samples: u32,
    pub final_samples: u32,
    pub reflector: ReflectorThresholds,
    pub failure: FailureThresholds,
    pub scale_bands: ScaleBands,
    pub anchors: AnchorConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rounds: 6,
            candidates: 4,
            explore_ratio_init: 0.35,
            step_scale_init: 1.0,
            workers: 4,
            seed: 0,
            high_explore: true,
            region_memory: true,
            preview_samples: PREVIEW_SAMPLE_CAP,
            final_samples: DEFAULT_FINAL_SAMPLES,
            reflector: ReflectorThresholds::default(),
            failure: FailureThresholds::default(),
            scale_bands: ScaleBands::default(),
            anchors: AnchorConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.candidates == 0 {
            return bad("candidates per round must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.explore_ratio_init) {
            return bad("explore_ratio_init must lie in [0, 1]");
        }
        if !(self.step_scale_init > 0.0) {
            return bad("step_scale_init must be positive");
        }
        if !self.scale_bands.is_well_formed() {
            return bad("scale bands are malformed");
        }
        Ok(())
    }

    pub fn preview_budget(&self) -> usize {
        self.rounds * self.candidates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderInfo {
    pub path: Option<String>,
    pub width: u32,
    pub height: u32,
    pub samples: u32,
    pub backend: String,
    pub camera_inside_geometry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderFailureRecord {
    pub category: RenderFailure,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub camera: CameraState,
    pub seed_origin: SeedOrigin,
    pub region_key: RegionKey,
    pub attempts: u32,
    pub render: Option<RenderInfo>,
    pub failure: Option<RenderFailureRecord>,
    pub rule: Option<RuleSignals>,
    pub review: Option<VisualReview>,
    pub score: Option<f64>,
    pub subject_coverage: f64,
}

impl CandidateRecord {
    pub fn rendered(&self) -> bool {
        self.score.is_some()
    }

    pub fn digest(&self) -> Option<CandidateDigest> {
        Some(CandidateDigest {
            index: self.index,
            camera: self.camera,
            seed_origin: self.seed_origin,
            rule: self.rule?,
            review: self.review.clone()?,
            score: self.score?,
            region_key: self.region_key,
            subject_coverage: self.subject_coverage,
            image_path: self.render.as_ref().and_then(|r| r.path.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentRecord {
    pub round: usize,
    pub candidate: CandidateRecord,
}

impl IncumbentRecord {
    pub fn score(&self) -> f64 {
        self.candidate.score.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub explore_ratio: f64,
    pub step_scale: f64,
    pub seeds: Vec<Seed>,
    pub high_explore_anchor: Option<usize>,
    pub seed_fallback: bool,
    pub proposals: Vec<CandidateProposal>,
    pub proposal_fallbacks: usize,
    pub proposal_fallback_reason: Option<String>,
    pub candidates: Vec<CandidateRecord>,
    pub incumbent_before: Option<IncumbentRecord>,
    pub incumbent_after: Option<IncumbentRecord>,
    pub verdict: Option<PairwiseDecision>,
    pub feedback: RoundFeedback,
    pub memory: Vec<CellSnapshot>,
    pub forbidden_zones: Vec<ForbiddenZone>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecord {
    pub preview_budget: usize,
    pub preview_requests: usize,
    pub previews_rendered: usize,
    pub retries: usize,
    pub render_failures: usize,
    pub final_requests: usize,
}

/// Signals recomputed on the final camera with the built-in rules and the
/// geometric stub reviewer, for log-driven scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignals {
    pub m: [f64; 6],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub camera: CameraState,
    pub ratio: AspectRatio,
    pub ratio_reasons: Vec<String>,
    pub width: u32,
    pub height: u32,
    pub samples: u32,
    pub backend: String,
    pub image_path: Option<String>,
    pub incumbent_score: f64,
    pub reference: ReferenceSignals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub format_version: u32,
    pub method: String,
    pub mission_id: String,
    pub category: MissionCategory,
    pub advisor: String,
    pub renderer: String,
    pub config: SearchConfig,
    pub scene_scale: f64,
    pub cell_size: f64,
    pub scale_band: (f64, f64),
    pub blueprint: Blueprint,
    pub blueprint_provenance: BlueprintProvenance,
    pub topology: TopologySummary,
    pub anchor_bank: Vec<Anchor>,
    pub rounds: Vec<RoundRecord>,
    pub budget: BudgetRecord,
    pub diagnostics: Option<crate::memory::SearchDiagnostics>,
    pub final_result: Option<FinalRecord>,
    pub failure: Option<String>,
}

impl RunLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes")
    }

    /// Region keys of rendered candidates, grouped by round.
    pub fn round_keys(&self) -> Vec<Vec<RegionKey>> {
        self.rounds
            .iter()
            .map(|r| r.candidates.iter().filter(|c| c.rendered()).map(|c| c.region_key).collect())
            .collect()
    }
}

pub struct FinalResult {
    pub camera: CameraState,
    pub ratio: AspectRatio,
    pub image: RgbImage,
    pub stats: RenderStats,
    pub log: RunLog,
}

/// Inputs to the rule-based final aspect-ratio choice.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioInputs {
    pub aspect_set: Vec<AspectRatio>,
    pub incumbent: AspectRatio,
    pub vertical: VerticalStructure,
    pub scene_extent: Vec3,
    pub subject_coverage: f64,
    /// Subject screen box width over height, in pixels.
    pub subject_box_aspect: Option<f64>,
    pub vibe: String,
}

const WIDE_VIBES: [&str; 5] = ["panoramic", "vast", "epic", "cinematic", "grand"];

/// Rule-based final ratio. Each firing rule votes for one member of the
/// aspect set; the vote wins only when all votes agree, otherwise the
/// incumbent's ratio stays.
pub fn select_final_ratio(inp: &RatioInputs) -> (AspectRatio, Vec<String>) {
    let set = &inp.aspect_set;
    if set.len() == 1 {
        return (set[0], vec!["single ratio".into()]);
    }
    let widest = *set.iter().max_by(|a, b| a.value().total_cmp(&b.value())).expect("non-empty");
    let tallest = *set.iter().min_by(|a, b| a.value().total_cmp(&b.value())).expect("non-empty");
    let squarest = *set
        .iter()
        .min_by(|a, b| a.value().ln().abs().total_cmp(&b.value().ln().abs()))
        .expect("non-empty");
    let mut votes: Vec<(AspectRatio, String)> = Vec::new();
    if inp.vertical == VerticalStructure::Tower {
        votes.push((tallest, "tower structure".into()));
    }
    let e = inp.scene_extent;
    if e.x.max(e.y) > 2.0 * e.z && inp.subject_coverage < 0.2 {
        votes.push((widest, "strong horizontal axis, low subject concentration".into()));
    }
    if inp.subject_coverage >= 0.2 && inp.subject_box_aspect.is_some_and(|a| (0.8..=1.25).contains(&a)) {
        votes.push((squarest, "concentrated near-square subject".into()));
    }
    let vibe = inp.vibe.to_lowercase();
    if vibe.split_whitespace().any(|w| WIDE_VIBES.contains(&w)) {
        votes.push((widest, "wide atmosphere".into()));
    }
    let distinct: BTreeSet<(u32, u32)> = votes.iter().map(|(r, _)| (r.w, r.h)).collect();
    if distinct.len() == 1 {
        (votes[0].0, votes.into_iter().map(|(_, why)| why).collect())
    } else if votes.is_empty() {
        (inp.incumbent, vec!["no rule fired; keep incumbent ratio".into()])
    } else {
        (inp.incumbent, vec!["conflicting rules; keep incumbent ratio".into()])
    }
}

/// Everything that stays fixed during one mission's search.
pub struct Session<'a> {
    pub mission: MissionSpec,
    pub scene: Arc<SceneModel>,
    pub config: SearchConfig,
    pub topology: TopologySummary,
    pub blueprint: Blueprint,
    pub provenance: BlueprintProvenance,
    pub bank: Vec<Anchor>,
    pub h: f64,
    pub scale_band: (f64, f64),
    advisor: &'a dyn Advisor,
    backend: &'a dyn RenderBackend,
    out_dir: Option<PathBuf>,
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

impl<'a> Session<'a> {
    pub fn new(
        mission: MissionSpec,
        scene: Arc<SceneModel>,
        config: SearchConfig,
        advisor: &'a dyn Advisor,
        backend: &'a dyn RenderBackend,
        out_dir: Option<&Path>,
    ) -> Result<Self, SearchError> {
        config.validate()?;
        mission.validate(&scene)?;
        let topology = topology_summary(&scene);
        let (blueprint, provenance) = if advisor.supports(Role::Blueprint) {
            build_blueprint_advised(&mission, &scene, &topology, advisor)
        } else {
            (
                build_blueprint_rule_based(&mission, &scene, &topology),
                BlueprintProvenance {
                    source: "rule_based".into(),
                    fallback_fields: Vec::new(),
                    fallback_reason: None,
                },
            )
        };
        let h = cell_size(scene.scene_scale())?;
        let bank = build_anchor_bank(
            &scene,
            &blueprint,
            &topology,
            &mission.bootstrap.scout_views,
            default_aspect(&mission),
            h,
            &config.anchors,
        );
        let scale_band = config
            .scale_bands
            .band(mission.eval_spec.scale_pref.unwrap_or(ScalePref::Medium));
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir.join("previews"))?;
        }
        Ok(Self {
            mission,
            scene,
            config,
            topology,
            blueprint,
            provenance,
            bank,
            h,
            scale_band,
            advisor,
            backend,
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    pub fn subject(&self) -> Option<&SceneObject> {
        resolve_subject(&self.scene, &self.blueprint, &self.mission.eval_spec)
    }

    pub fn advisor(&self) -> &dyn Advisor {
        self.advisor
    }

    /// Renders, scores and reviews a batch of proposals. Failed renders are
    /// retried once while `budget` allows another preview request.
    pub fn evaluate(
        &self,
        round: usize,
        proposals: &[CandidateProposal],
        budget: &mut BudgetRecord,
    ) -> Vec<CandidateRecord> {
        let requests: Vec<RenderRequest> = proposals
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let out = self
                    .out_dir
                    .as_ref()
                    .map(|d| d.join("previews").join(format!("r{round:02}_c{i}.png")));
                RenderRequest::preview(p.camera, self.config.preview_samples, out)
            })
            .collect();
        budget.preview_requests += requests.len();
        let mut results = render_parallel(self.backend, &self.scene, &requests, self.config.workers);
        let mut attempts = vec![1u32; requests.len()];
        let retry: Vec<usize> = results.iter().enumerate().filter(|(_, r)| r.is_err()).map(|(i, _)| i).collect();
        let spare = budget.preview_budget.saturating_sub(budget.preview_requests);
        let retry: Vec<usize> = retry.into_iter().take(spare).collect();
        if !retry.is_empty() {
            let again: Vec<RenderRequest> = retry.iter().map(|&i| requests[i].clone()).collect();
            budget.preview_requests += again.len();
            budget.retries += again.len();
            for (i, r) in retry.iter().zip(render_parallel(self.backend, &self.scene, &again, self.config.workers)) {
                attempts[*i] += 1;
                results[*i] = r;
            }
        }
        proposals
            .iter()
            .zip(results)
            .enumerate()
            .map(|(i, (p, r))| self.score_candidate(i, p, &requests[i], r, attempts[i], budget))
            .collect()
    }

    fn score_candidate(
        &self,
        index: usize,
        proposal: &CandidateProposal,
        request: &RenderRequest,
        result: Result<RenderResult, RenderError>,
        attempts: u32,
        budget: &mut BudgetRecord,
    ) -> CandidateRecord {
        let cam = proposal.camera;
        let subject = self.subject();
        let subject_coverage = subject
            .and_then(|s| project_box(&cam, s).ok())
            .map(|b| b.coverage)
            .unwrap_or(0.0);
        let mut rec = CandidateRecord {
            index,
            camera: cam,
            seed_origin: proposal.seed_origin,
            region_key: RegionKey::of(&cam.position, self.h),
            attempts,
            render: None,
            failure: None,
            rule: None,
            review: None,
            score: None,
            subject_coverage,
        };
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                budget.render_failures += 1;
                rec.failure = Some(RenderFailureRecord {
                    category: e.failure,
                    detail: e.detail,
                });
                return rec;
            }
        };
        budget.previews_rendered += 1;
        let path = result.path.as_ref().map(|p| rel(p, self.out_dir.as_deref().unwrap_or(Path::new(""))));
        let eval = &self.mission.eval_spec;
        let rule = rule_signals(
            &cam,
            &self.scene,
            subject,
            eval.placement_pref,
            eval.angle_pref,
            &self.config.failure,
        );
        let review = review_image(
            self.advisor,
            &ReviewRequest {
                camera: cam,
                image_path: path.clone(),
                width: request.width,
                height: request.height,
                instruction: self.mission.instruction.clone(),
                eval_spec: eval.clone(),
                blueprint: self.blueprint.clone(),
                scale_band: self.scale_band,
            },
        );
        let score = internal_score(&[rule.m1, rule.m2, review.m3, review.m4, review.m5, review.m6])
            .expect("signals are clamped upstream");
        rec.render = Some(RenderInfo {
            path,
            width: request.width,
            height: request.height,
            samples: result.stats.samples,
            backend: result.stats.backend,
            camera_inside_geometry: result.camera_inside_geometry,
        });
        rec.rule = Some(rule);
        rec.review = Some(review);
        rec.score = Some(score);
        rec
    }

    /// Empty run log for this session.
    pub fn new_log(&self, method: &str, preview_budget: usize) -> RunLog {
        RunLog {
            format_version: RUN_LOG_VERSION,
            method: method.to_string(),
            mission_id: self.mission.mission_id.clone(),
            category: self.mission.category,
            advisor: self.advisor.name().to_string(),
            renderer: self.backend.name().to_string(),
            config: self.config.clone(),
            scene_scale: self.scene.scene_scale(),
            cell_size: self.h,
            scale_band: self.scale_band,
            blueprint: self.blueprint.clone(),
            blueprint_provenance: self.provenance.clone(),
            topology: self.topology.clone(),
            anchor_bank: self.bank.clone(),
            rounds: Vec::new(),
            budget: BudgetRecord {
                preview_budget,
                ..Default::default()
            },
            diagnostics: None,
            final_result: None,
            failure: None,
        }
    }

    fn fail(&self, mut log: RunLog, category: &str) -> SearchError {
        log.failure = Some(category.to_string());
        if let Some(dir) = &self.out_dir {
            let _ = std::fs::write(dir.join("run_log.json"), log.to_json());
        }
        SearchError::MissionFailed {
            mission_id: self.mission.mission_id.clone(),
            category: category.to_string(),
            log: Box::new(log),
        }
    }

    /// Final aspect-ratio choice, final-quality render and log completion.
    pub fn finalize(&self, incumbent: Option<&IncumbentRecord>, mut log: RunLog) -> Result<FinalResult, SearchError> {
        log.diagnostics = search_diagnostics(&log.round_keys()).ok();
        let Some(inc) = incumbent else {
            return Err(self.fail(log, RenderFailure::TimeoutNoFirstImage.tag()));
        };
        let cam = inc.candidate.camera;
        let (pw, ph) = resolution_for(cam.aspect, Quality::Preview);
        let subject_box_aspect = self
            .subject()
            .and_then(|s| project_box(&cam, s).ok())
            .filter(|b| b.height() > 0.0)
            .map(|b| b.width() * pw as f64 / (b.height() * ph as f64));
        let inputs = RatioInputs {
            aspect_set: self.mission.aspect_set.clone(),
            incumbent: cam.aspect,
            vertical: self.topology.vertical_structure,
            scene_extent: self.scene.scene_aabb().extent(),
            subject_coverage: inc.candidate.subject_coverage,
            subject_box_aspect,
            vibe: self.blueprint.vibe.clone(),
        };
        let (mut ratio, mut reasons) = select_final_ratio(&inputs);
        if let Some(digest) = inc.candidate.digest() {
            let req = FinalRatioRequest {
                aspect_set: inputs.aspect_set.clone(),
                incumbent: digest,
                rule_choice: ratio,
                vibe: inputs.vibe.clone(),
            };
            if let Some(r) = final_ratio_override(self.advisor, &req) {
                if r != ratio {
                    reasons.push(format!("advisor override {ratio} -> {r}"));
                }
                ratio = r;
            }
        }
        let final_cam = CameraState { aspect: ratio, ..cam };
        let out = self.out_dir.as_ref().map(|d| d.join("final.png"));
        let req = RenderRequest::final_render(final_cam, self.config.final_samples, out);
        log.budget.final_requests += 1;
        let mut result = self.backend.render(&self.scene, &req);
        if result.is_err() {
            log.budget.final_requests += 1;
            result = self.backend.render(&self.scene, &req);
        }
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                let tag = match e.failure {
                    RenderFailure::BackendCrash => RenderFailure::BackendCrash.tag(),
                    _ => RenderFailure::NoFinalImage.tag(),
                };
                return Err(self.fail(log, tag));
            }
        };
        let subject = self.subject();
        let eval = &self.mission.eval_spec;
        let rule = rule_signals(&final_cam, &self.scene, subject, eval.placement_pref, eval.angle_pref, &self.config.failure);
        let [m3, m4, m5, m6] = stub_visual_scores(&self.scene, &final_cam, &self.blueprint, eval, self.scale_band);
        let m = [rule.m1, rule.m2, m3, m4, m5, m6];
        let reference = ReferenceSignals {
            m,
            score: internal_score(&m).expect("reference signals lie in [0, 1]"),
        };
        log.final_result = Some(FinalRecord {
            camera: final_cam,
            ratio,
            ratio_reasons: reasons,
            width: req.width,
            height: req.height,
            samples: result.stats.samples,
            backend: result.stats.backend.clone(),
            image_path: result
                .path
                .as_ref()
                .map(|p| rel(p, self.out_dir.as_deref().unwrap_or(Path::new("")))),
            incumbent_score: inc.score(),
            reference,
        });
        if let Some(dir) = &self.out_dir {
            std::fs::write(dir.join("run_log.json"), log.to_json())?;
        }
        Ok(FinalResult {
            camera: final_cam,
            ratio,
            image: result.image,
            stats: result.stats,
            log,
        })
    }
}

/// Per-round inputs to seed-pool construction.
pub struct SeedInputs<'s> {
    pub k: usize,
    pub incumbent: Option<&'s CameraState>,
    pub explore_ratio: f64,
    pub step_scale: f64,
    pub motion: PreferredMotion,
    pub feedback_seeds: &'s [CameraState],
    pub zones: &'s [ForbiddenZone],
    pub high_explore: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedPool {
    pub seeds: Vec<Seed>,
    pub high_explore_anchor: Option<usize>,
    /// Set when every admissible position was exhausted and the top-prior
    /// anchor was used regardless of zones.
    pub fallback: bool,
}

/// Orders anchors by prior, highest first; ties keep bank order.
pub fn anchors_by_prior(bank: &[Anchor]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bank.len()).collect();
    idx.sort_by(|&a, &b| bank[b].prior.total_cmp(&bank[a].prior));
    idx
}

fn next_aspect(set: &[AspectRatio], current: AspectRatio) -> AspectRatio {
    match set.iter().position(|a| *a == current) {
        Some(i) => set[(i + 1) % set.len()],
        None => set[0],
    }
}

/// Applies a preferred motion to a camera at motion scale `step * h`.
pub fn apply_motion(cam: &CameraState, motion: PreferredMotion, step: f64, h: f64) -> CameraState {
    let mut c = *cam;
    let reach = step * h;
    let offset = c.position - c.look_at;
    let dist = offset.norm().max(1e-9);
    match motion {
        PreferredMotion::Hold => {}
        PreferredMotion::OrbitLeft | PreferredMotion::OrbitRight => {
            let sign = if motion == PreferredMotion::OrbitLeft { 1.0 } else { -1.0 };
            let horiz = offset.x.hypot(offset.y).max(1e-9);
            let angle = sign * (reach / horiz).min(PI / 4.0);
            let (s, co) = angle.sin_cos();
            c.position = c.look_at + Vec3::new(offset.x * co - offset.y * s, offset.x * s + offset.y * co, offset.z);
        }
        PreferredMotion::DollyIn => {
            let d = (dist - reach).max(0.35 * dist);
            c.position = c.look_at + offset / dist * d;
        }
        PreferredMotion::DollyOut => c.position = c.look_at + offset / dist * (dist + reach),
        PreferredMotion::CraneUp => c.position.z += 0.5 * reach,
        PreferredMotion::CraneDown => c.position.z -= 0.5 * reach,
        PreferredMotion::ZoomIn => c.focal_mm = (c.focal_mm * (1.0 + 0.25 * step)).clamp(FOCAL_RANGE.0, FOCAL_RANGE.1),
        PreferredMotion::ZoomOut => c.focal_mm = (c.focal_mm / (1.0 + 0.25 * step)).clamp(FOCAL_RANGE.0, FOCAL_RANGE.1),
    }
    c
}

struct PoolBuilder<'s, 'a> {
    session: &'s Session<'a>,
    inputs: &'s SeedInputs<'s>,
    memory: &'s RegionMemory,
    seeds: Vec<Seed>,
    used_anchors: BTreeSet<usize>,
}

impl PoolBuilder<'_, '_> {
    fn admissible(&self, cam: &CameraState) -> bool {
        cam.validate_in(&self.session.mission.aspect_set).is_ok()
            && !inside_any(self.inputs.zones, &cam.position)
            && !self.session.scene.point_inside_any(&cam.position)
    }

    fn push(&mut self, camera: CameraState, origin: SeedOrigin, anchor_index: Option<usize>) {
        let region = Some(RegionKey::of(&camera.position, self.session.h));
        if let Some(i) = anchor_index {
            self.used_anchors.insert(i);
        }
        self.seeds.push(Seed {
            camera,
            origin,
            anchor_index,
            region,
        });
    }

    fn anchor_camera(&self, i: usize, aspect: AspectRatio) -> CameraState {
        self.session.bank[i].camera(aspect)
    }

    /// Next unused admissible anchor by prior, preferring cells still unknown.
    fn next_anchor(&self, aspect: AspectRatio) -> Option<usize> {
        let order = anchors_by_prior(&self.session.bank);
        let free = |i: &usize| {
            !self.used_anchors.contains(i)
                && self.memory.label_at(&self.session.bank[*i].position) != RegionLabel::Dead
                && self.admissible(&self.anchor_camera(*i, aspect))
        };
        order
            .iter()
            .copied()
            .filter(free)
            .find(|i| self.memory.label_at(&self.session.bank[*i].position) == RegionLabel::Unknown)
            .or_else(|| order.iter().copied().find(free))
    }

    fn refinement<R: Rng>(&self, inc: &CameraState, rng: &mut R) -> Option<CameraState> {
        let h = self.session.h;
        let step = self.inputs.step_scale;
        let moved = apply_motion(inc, self.inputs.motion, step, h);
        let pos = Normal::new(0.0, 0.25 * h * step).expect("positive sigma");
        let look = Normal::new(0.0, 0.1 * h).expect("positive sigma");
        for _ in 0..16 {
            let mut c = moved;
            c.position += Vec3::new(pos.sample(rng), pos.sample(rng), pos.sample(rng));
            c.look_at += Vec3::new(look.sample(rng), look.sample(rng), look.sample(rng));
            if self.admissible(&c) {
                return Some(c);
            }
        }
        None
    }

    fn probe<R: Rng>(&self, inc: &CameraState, rng: &mut R) -> Option<CameraState> {
        let center = self.session.blueprint.look_toward;
        let radius = PROBE_RADIUS_FRACTION * (inc.position - center).norm().max(self.session.h);
        let floor = self.session.scene.scene_aabb().min.z;
        for _ in 0..32 {
            let d: [f64; 3] = UnitSphere.sample(rng);
            let p = center + Vec3::new(d[0], d[1], d[2]) * radius;
            if p.z < floor {
                continue;
            }
            let c = CameraState {
                position: p,
                look_at: center,
                ..*inc
            };
            if self.admissible(&c) {
                return Some(c);
            }
        }
        None
    }

    fn region_centers(&self, inc: &CameraState) -> Vec<CameraState> {
        let h = self.session.h;
        let inc_key = RegionKey::of(&inc.position, h);
        let mut cells: Vec<(RegionKey, f64)> = self
            .memory
            .cells_with(RegionLabel::Promising)
            .filter(|(k, _)| **k != inc_key)
            .map(|(k, r)| (*k, r.best_score))
            .collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cells
            .into_iter()
            .map(|(k, _)| CameraState {
                position: k.center(h),
                look_at: self.session.blueprint.look_toward,
                ..*inc
            })
            .filter(|c| self.admissible(c))
            .collect()
    }
}

/// Builds exactly `k` seeds. Without an incumbent every slot is an anchor
/// by prior. Otherwise the last slot is the high-explore anchor (when
/// enabled and one exists), and the rest split into
/// `round(explore_ratio * rest)` explore seeds (anchors and probes,
/// alternating) and exploit seeds (incumbent refinements, reflector seeds,
/// promising-region centers).
pub fn build_seed_pool<R: Rng>(
    session: &Session<'_>,
    memory: &RegionMemory,
    used_anchors: &BTreeSet<usize>,
    inputs: &SeedInputs<'_>,
    rng: &mut R,
) -> SeedPool {
    let k = inputs.k;
    let mut b = PoolBuilder {
        session,
        inputs,
        memory,
        seeds: Vec::with_capacity(k),
        used_anchors: used_anchors.clone(),
    };
    let aspect0 = default_aspect(&session.mission);
    let mut high_explore_anchor = None;

    match inputs.incumbent {
        None => {
            for i in anchors_by_prior(&session.bank) {
                if b.seeds.len() == k {
                    break;
                }
                if !b.used_anchors.contains(&i) && b.admissible(&b.anchor_camera(i, aspect0)) {
                    b.push(b.anchor_camera(i, aspect0), SeedOrigin::Anchor, Some(i));
                }
            }
            // every anchor already used: allow repeats
            for i in anchors_by_prior(&session.bank) {
                if b.seeds.len() == k {
                    break;
                }
                if !b.seeds.iter().any(|s| s.anchor_index == Some(i)) && b.admissible(&b.anchor_camera(i, aspect0)) {
                    b.push(b.anchor_camera(i, aspect0), SeedOrigin::Anchor, Some(i));
                }
            }
        }
        Some(inc) => {
            let he = if inputs.high_explore && k >= 1 {
                pick_high_explore(&session.bank, &inc.position, memory, inputs.zones)
            } else {
                None
            };
            if let Some(i) = he {
                b.used_anchors.insert(i);
            }
            let rest = k - he.is_some() as usize;
            let explore_n = (inputs.explore_ratio * rest as f64).round() as usize;
            let exploit_n = rest - explore_n.min(rest);

            let extra: Vec<CameraState> = inputs.feedback_seeds.iter().copied().filter(|c| b.admissible(c)).collect();
            let mut extra = extra.into_iter();
            let mut regions = b.region_centers(inc).into_iter();
            for slot in 0..exploit_n {
                let pick = if slot == 0 {
                    b.refinement(inc, rng).map(|c| (c, SeedOrigin::Incumbent))
                } else if let Some(c) = extra.next() {
                    Some((c, SeedOrigin::Incumbent))
                } else if slot % 2 == 1 {
                    regions
                        .next()
                        .map(|c| (c, SeedOrigin::Region))
                        .or_else(|| b.refinement(inc, rng).map(|c| (c, SeedOrigin::Incumbent)))
                } else {
                    b.refinement(inc, rng).map(|c| (c, SeedOrigin::Incumbent))
                };
                if let Some((c, o)) = pick.or_else(|| b.probe(inc, rng).map(|c| (c, SeedOrigin::Probe))) {
                    b.push(c, o, None);
                }
            }
            for slot in 0..explore_n.min(rest) {
                let anchor = if slot % 2 == 0 { b.next_anchor(inc.aspect) } else { None };
                match anchor {
                    Some(i) => b.push(b.anchor_camera(i, inc.aspect), SeedOrigin::Anchor, Some(i)),
                    None => {
                        if let Some(c) = b.probe(inc, rng) {
                            b.push(c, SeedOrigin::Probe, None);
                        } else if let Some(i) = b.next_anchor(inc.aspect) {
                            b.push(b.anchor_camera(i, inc.aspect), SeedOrigin::Anchor, Some(i));
                        }
                    }
                }
            }
            // short lanes are topped up before the high-explore slot so it stays last
            let mut tries = 0;
            while b.seeds.len() < rest && tries < 8 {
                tries += 1;
                if let Some(c) = b.probe(inc, rng) {
                    b.push(c, SeedOrigin::Probe, None);
                }
            }
            if let Some(i) = he {
                let a = &session.bank[i];
                let aspect = match a.aspect_hint {
                    Some(hint) if hint != inc.aspect && session.mission.aspect_set.contains(&hint) => hint,
                    _ if session.mission.aspect_set.len() > 1 => next_aspect(&session.mission.aspect_set, inc.aspect),
                    _ => inc.aspect,
                };
                b.push(a.camera(aspect), SeedOrigin::HighExplore, Some(i));
                high_explore_anchor = Some(i);
            }
        }
    }

    let mut fallback = false;
    if b.seeds.is_empty() {
        let top = anchors_by_prior(&session.bank)[0];
        b.push(b.anchor_camera(top, aspect0), SeedOrigin::Fallback, Some(top));
        fallback = true;
    }
    let mut j = 0;
    while b.seeds.len() < k {
        // recycle admissible seeds already in the pool
        let s = b.seeds[j % b.seeds.len()].clone();
        let insert_at = if high_explore_anchor.is_some() { b.seeds.len() - 1 } else { b.seeds.len() };
        b.seeds.insert(insert_at, Seed { origin: if s.origin == SeedOrigin::HighExplore { SeedOrigin::Anchor } else { s.origin }, ..s });
        j += 1;
    }
    SeedPool {
        seeds: b.seeds,
        high_explore_anchor,
        fallback,
    }
}

/// Runs the full closed-loop search for one mission.
pub fn run_search(
    mission: MissionSpec,
    scene: Arc<SceneModel>,
    config: SearchConfig,
    advisor: &dyn Advisor,
    backend: &dyn RenderBackend,
    out_dir: Option<&Path>,
) -> Result<FinalResult, SearchError> {
    let session = Session::new(mission, scene, config, advisor, backend, out_dir)?;
    run_session(&session, "full")
}

/// Runs the round loop on an existing session.
pub fn run_session(session: &Session<'_>, method: &str) -> Result<FinalResult, SearchError> {
    let cfg = &session.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memory = RegionMemory::new(session.h, cfg.reflector, cfg.region_memory);
    let mut log = session.new_log(method, cfg.preview_budget());
    let mut incumbent: Option<IncumbentRecord> = None;
    let mut reviewer_zones: Vec<ForbiddenZone> = Vec::new();
    let mut used_anchors: BTreeSet<usize> = BTreeSet::new();
    let mut explore_ratio = cfg.explore_ratio_init;
    let mut step_scale = cfg.step_scale_init;
    let mut last_feedback: Option<RoundFeedback> = None;

    for round in 1..=cfg.rounds {
        let allowance = round * cfg.candidates;
        let k = cfg.candidates.min(allowance.saturating_sub(log.budget.preview_requests));
        let dead_zones = memory.forbidden_zones(&[]);
        let filter_zones: Vec<ForbiddenZone> = dead_zones.iter().chain(&reviewer_zones).copied().collect();
        let incumbent_before = incumbent.clone();
        if k == 0 {
            log.rounds.push(RoundRecord {
                round,
                explore_ratio,
                step_scale,
                seeds: vec![],
                high_explore_anchor: None,
                seed_fallback: false,
                proposals: vec![],
                proposal_fallbacks: 0,
                proposal_fallback_reason: Some("preview budget exhausted by retries".into()),
                candidates: vec![],
                incumbent_before: incumbent_before.clone(),
                incumbent_after: incumbent_before,
                verdict: None,
                feedback: RoundFeedback::neutral(),
                memory: memory.snapshot(),
                forbidden_zones: memory.forbidden_zones(&reviewer_zones),
            });
            continue;
        }
        let feedback_seeds = last_feedback.as_ref().map(|f| f.seed_candidates.clone()).unwrap_or_default();
        let inc_cam = incumbent.as_ref().map(|i| i.candidate.camera);
        let inputs = SeedInputs {
            k,
            incumbent: inc_cam.as_ref(),
            explore_ratio,
            step_scale,
            motion: last_feedback.as_ref().map(|f| f.preferred_motion).unwrap_or_default(),
            feedback_seeds: &feedback_seeds,
            zones: &filter_zones,
            high_explore: cfg.high_explore,
        };
        let pool = build_seed_pool(session, &memory, &used_anchors, &inputs, &mut rng);
        used_anchors.extend(pool.seeds.iter().filter_map(|s| s.anchor_index));

        let batch = propose(
            session.advisor,
            &ProposeRequest {
                round,
                k,
                seeds: pool.seeds.clone(),
                blueprint: session.blueprint.clone(),
                last_feedback: last_feedback.clone(),
                aspect_set: session.mission.aspect_set.clone(),
                forbidden_zones: filter_zones.clone(),
                cell_size: session.h,
                step_scale,
            },
            Some(&session.scene),
            &mut rng,
        );
        let candidates = session.evaluate(round, &batch.proposals, &mut log.budget);

        let best = candidates
            .iter()
            .filter(|c| c.rendered())
            .fold(None::<&CandidateRecord>, |acc, c| match acc {
                Some(a) if a.score >= c.score => Some(a),
                _ => Some(c),
            });
        let mut verdict = None;
        if let Some(best) = best {
            match &incumbent {
                None => {
                    incumbent = Some(IncumbentRecord {
                        round,
                        candidate: best.clone(),
                    })
                }
                Some(inc) => {
                    let decision = compare_pairwise(
                        session.advisor,
                        &CompareRequest {
                            incumbent: inc.candidate.digest().expect("incumbent was rendered"),
                            challenger: best.digest().expect("best was rendered"),
                        },
                    );
                    if decision.verdict == PairwiseVerdict::TakeChallenger {
                        incumbent = Some(IncumbentRecord {
                            round,
                            candidate: best.clone(),
                        });
                    }
                    verdict = Some(decision);
                }
            }
        }

        let digests: Vec<CandidateDigest> = candidates.iter().filter_map(CandidateRecord::digest).collect();
        let feedback = if digests.is_empty() {
            let mut fb = RoundFeedback::neutral();
            let tags: BTreeSet<&str> = candidates
                .iter()
                .filter_map(|c| c.failure.as_ref().map(|f| f.category.tag()))
                .collect();
            fb.failure_tags = tags.into_iter().map(String::from).collect();
            fb
        } else {
            reflect_round(
                session.advisor,
                &ReflectRequest {
                    round,
                    candidates: digests,
                    incumbent: incumbent_before.as_ref().and_then(|i| i.candidate.digest()),
                    blueprint: session.blueprint.clone(),
                    scale_band: session.scale_band,
                    cell_size: session.h,
                    aspect_set: session.mission.aspect_set.clone(),
                },
            )
        };

        let base = incumbent_before.as_ref().map(IncumbentRecord::score).unwrap_or(0.0);
        for c in candidates.iter().filter(|c| c.rendered()) {
            let score = c.score.expect("rendered");
            let semantic = c.review.as_ref().map(|r| r.m6).unwrap_or(0.0);
            let hard = c.rule.is_some_and(|r| r.hard_failure.is_some());
            memory.record_candidate(&c.camera.position, score, semantic, score - base, hard);
        }
        reviewer_zones.extend(feedback.forbidden_zones.iter().copied());
        reviewer_zones = dedup_exact(reviewer_zones);

        log.rounds.push(RoundRecord {
            round,
            explore_ratio,
            step_scale,
            seeds: pool.seeds,
            high_explore_anchor: pool.high_explore_anchor,
            seed_fallback: pool.fallback,
            proposals: batch.proposals,
            proposal_fallbacks: batch.fallback_count,
            proposal_fallback_reason: batch.fallback_reason,
            candidates,
            incumbent_before,
            incumbent_after: incumbent.clone(),
            verdict,
            feedback: feedback.clone(),
            memory: memory.snapshot(),
            forbidden_zones: memory.forbidden_zones(&reviewer_zones),
        });
        explore_ratio = feedback.explore_ratio_next;
        step_scale = feedback.step_scale;
        last_feedback = Some(feedback);
    }
    session.finalize(incumbent.as_ref(), log)
}

/// Removes exact duplicates while keeping first occurrences, so repeated
/// reviewer zones do not grow the list without bound.
fn dedup_exact(zones: Vec<ForbiddenZone>) -> Vec<ForbiddenZone> {
    let mut out: Vec<ForbiddenZone> = Vec::with_capacity(zones.len());
    for z in zones {
        if !out.iter().any(|o| o.center == z.center && o.half_extent == z.half_extent) {
            out.push(z);
        }
    }
    out
}

/// Every zone that was active at some round, in first-registered order.
pub fn zones_registered(log: &RunLog) -> Vec<(usize, ForbiddenZone)> {
    let mut out: Vec<(usize, ForbiddenZone)> = Vec::new();
    for r in &log.rounds {
        for z in &r.forbidden_zones {
            if !out.iter().any(|(_, o)| o == z) {
                out.push((r.round, *z));
            }
        }
    }
    out
}
