//! Deterministic geometric advisor. It never looks at pixels: every score is
//! a function of the camera, the scene boxes and the blueprint, so runs with
//! it are reproducible bit for bit.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::{json, Value};

use super::{
    Advisor, AdvisorError, CandidateDigest, CompareRequest, PreferredMotion, ProposeRequest, ReflectRequest,
    ReviewRequest, Role, PAIRWISE_MARGIN,
};
use crate::blueprint::{resolve_subject, Blueprint, CompositionCue, EvaluationSpec};
use crate::camera::{
    angle_class, occlusion_fraction, project_box, project_point, rule_m1, screen_distance, AnglePref, CameraState,
    FailureThresholds, HardFailure, Placement,
};
use crate::scene::SceneModel;

/// Screen distance at which the stub composition score reaches zero.
const COMPOSITION_FALLOFF: f64 = 0.6;
const THIRDS_POINTS: [(f64, f64); 4] = [(1.0 / 3.0, 1.0 / 3.0), (2.0 / 3.0, 1.0 / 3.0), (1.0 / 3.0, 2.0 / 3.0), (2.0 / 3.0, 2.0 / 3.0)];

#[derive(Debug, Clone)]
pub struct StubAdvisor {
    scene: Arc<SceneModel>,
}

impl StubAdvisor {
    pub fn new(scene: Arc<SceneModel>) -> Self {
        Self { scene }
    }

    fn propose(&self, req: ProposeRequest) -> Value {
        let candidates: Vec<Value> = req
            .seeds
            .iter()
            .take(req.k)
            .map(|s| json!({"camera": s.camera, "rationale": "seed", "seed_origin": s.origin}))
            .collect();
        json!({ "candidates": candidates })
    }

    fn review(&self, req: ReviewRequest) -> Value {
        let [m3, m4, m5, m6] = stub_visual_scores(&self.scene, &req.camera, &req.blueprint, &req.eval_spec, req.scale_band);
        json!({
            "m1": m3, "m2": m4, "m3": m5, "m4": m6,
            "reasoning": "geometric stub",
            "summary": format!("composition {m3:.2} clarity {m4:.2} scale {m5:.2} intent {m6:.2}"),
        })
    }

    fn reflect(&self, req: ReflectRequest) -> Value {
        let h = req.cell_size;
        let best = req
            .candidates
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score).then(b.index.cmp(&a.index)))
            .expect("reflect request has candidates");
        let all_failed = req.candidates.iter().all(|c| c.rule.hard_failure.is_some());
        let improved = match &req.incumbent {
            Some(inc) => best.score > inc.score + PAIRWISE_MARGIN,
            None => !all_failed,
        };
        let step_scale = if improved { 0.8 } else { 1.4 };
        let explore = if all_failed {
            0.7
        } else if improved {
            0.3
        } else {
            0.55
        };

        let mut tags = BTreeSet::new();
        for c in &req.candidates {
            if let Some(f) = c.rule.hard_failure {
                tags.insert(f.tag().to_string());
            }
            if c.subject_coverage < req.scale_band.0 {
                tags.insert("subject_too_small".to_string());
            } else if c.subject_coverage > req.scale_band.1 {
                tags.insert("subject_too_large".to_string());
            }
        }

        let zones: Vec<Value> = req
            .candidates
            .iter()
            .filter(|c| matches!(c.rule.hard_failure, Some(HardFailure::InvalidCamera | HardFailure::ExtremeOcclusion)))
            .take(2)
            .map(|c| json!({"center": c.camera.position, "half_extent": [0.25 * h, 0.25 * h, 0.25 * h]}))
            .collect();

        let motion = self.motion_for(best, &req.blueprint, req.scale_band, req.round);
        json!({
            "round_review": format!("best candidate {} scored {:.3}", best.index, best.score),
            "next_strategy": if improved { "refine around the incumbent" } else { "widen the search" },
            "step_scale": step_scale,
            "explore_ratio_next": explore,
            "preferred_motion": motion,
            "failure_tags": tags.into_iter().collect::<Vec<_>>(),
            "forbidden_zones": zones,
        })
    }

    fn motion_for(&self, best: &CandidateDigest, bp: &Blueprint, band: (f64, f64), round: usize) -> PreferredMotion {
        if best.subject_coverage < band.0 {
            return PreferredMotion::DollyIn;
        }
        if best.subject_coverage > band.1 {
            return PreferredMotion::DollyOut;
        }
        let target = bp
            .primary_subject
            .as_deref()
            .and_then(|id| self.scene.object(id))
            .map(|o| o.center())
            .unwrap_or(bp.look_toward);
        let have = angle_class(&best.camera, &target);
        match have.steps_from(AnglePref::Low) - bp.angle_pref.steps_from(AnglePref::Low) {
            d if d < 0 => PreferredMotion::CraneUp,
            d if d > 0 => PreferredMotion::CraneDown,
            _ if round % 2 == 0 => PreferredMotion::OrbitLeft,
            _ => PreferredMotion::OrbitRight,
        }
    }

    fn compare(&self, req: CompareRequest) -> Value {
        let take = req.challenger.score > req.incumbent.score + PAIRWISE_MARGIN;
        let pick = |a: f64, b: f64| if b > a { "challenger" } else { "incumbent" };
        json!({
            "verdict": if take { "take_challenger" } else { "keep_incumbent" },
            "per_dimension": {
                "composition": pick(req.incumbent.review.m3, req.challenger.review.m3),
                "clarity": pick(req.incumbent.review.m4, req.challenger.review.m4),
                "scale": pick(req.incumbent.review.m5, req.challenger.review.m5),
                "intent": pick(req.incumbent.review.m6, req.challenger.review.m6),
            }
        })
    }
}

fn decode<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T, AdvisorError> {
    serde_json::from_value(payload.clone()).map_err(|e| AdvisorError::Malformed(e.to_string()))
}

impl Advisor for StubAdvisor {
    fn name(&self) -> &str {
        "stub"
    }

    fn supports(&self, role: Role) -> bool {
        !matches!(role, Role::Blueprint | Role::FinalRatio)
    }

    fn call(&self, role: Role, payload: &Value) -> Result<Value, AdvisorError> {
        match role {
            Role::Propose => Ok(self.propose(decode(payload)?)),
            Role::Review => Ok(self.review(decode(payload)?)),
            Role::Reflect => Ok(self.reflect(decode(payload)?)),
            Role::Compare => Ok(self.compare(decode(payload)?)),
            Role::Blueprint | Role::FinalRatio => Err(AdvisorError::Unsupported),
        }
    }
}

fn composition_target(eval: &EvaluationSpec, bp: &Blueprint, at: (f64, f64)) -> (f64, f64) {
    if let Some(p) = eval.placement_pref {
        return Placement::target(Some(p));
    }
    if bp.composition_cues.contains(&CompositionCue::Thirds) {
        return THIRDS_POINTS
            .into_iter()
            .min_by(|a, b| {
                let da = (a.0 - at.0).hypot(a.1 - at.1);
                let db = (b.0 - at.0).hypot(b.1 - at.1);
                da.total_cmp(&db)
            })
            .expect("four thirds points");
    }
    (0.5, 0.5)
}

/// Geometric stand-ins for the image scores `[m3, m4, m5, m6]`:
/// composition against the cue target, subject clarity (in-frame and
/// unoccluded share), scale fit against the coverage band, and intent
/// agreement (placement, band, angle).
pub fn stub_visual_scores(
    scene: &SceneModel,
    cam: &CameraState,
    bp: &Blueprint,
    eval: &EvaluationSpec,
    band: (f64, f64),
) -> [f64; 4] {
    let Some(subject) = resolve_subject(scene, bp, eval) else {
        return [0.0; 4];
    };
    let Ok(sbox) = project_box(cam, subject) else {
        return [0.0; 4];
    };
    let m3 = match project_point(cam, &subject.center()) {
        Ok(Some(p)) if p.in_frame() => {
            let d = screen_distance(&p, composition_target(eval, bp, (p.u, p.v)));
            (1.0 - d / COMPOSITION_FALLOFF).max(0.0)
        }
        _ => 0.0,
    };
    let occluded = occlusion_fraction(cam, scene, subject, FailureThresholds::default().occlusion_grid).unwrap_or(1.0);
    let m4 = sbox.in_frame_fraction * (1.0 - occluded);
    let center = (band.0 * band.1).sqrt();
    let m5 = if sbox.coverage > 0.0 && center > 0.0 {
        (1.0 - (sbox.coverage / center).ln().abs() / 8f64.ln()).max(0.0)
    } else {
        0.0
    };
    let band_match = if sbox.coverage >= band.0 && sbox.coverage <= band.1 { 1.0 } else { 0.0 };
    let angle_match = match angle_class(cam, &subject.center()).steps_from(bp.angle_pref) {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    };
    let m1 = rule_m1(cam, subject, eval.placement_pref);
    let m6 = (m1 + band_match + angle_match) / 3.0;
    [m3, m4, m5, m6].map(|x: f64| x.clamp(0.0, 1.0))
}
