//! Global anchor bank: coarse camera seeds built once before local search.

use serde::{Deserialize, Serialize};

use crate::blueprint::{Blueprint, ScoutView};
use crate::camera::{occlusion_fraction, project_box, AspectRatio, CameraState, FOCAL_RANGE};
use crate::geometry::Vec3;
use crate::memory::RegionKey;
use crate::scene::{SceneModel, SceneObject, TopologySummary};

pub const DEFAULT_APERTURE: f64 = 5.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    BboxHeuristic,
    LookToward,
    Visibility,
    ScoutRelocation,
}

impl AnchorSource {
    pub fn base_prior(&self) -> f64 {
        match self {
            AnchorSource::BboxHeuristic => 0.4,
            AnchorSource::LookToward => 0.6,
            AnchorSource::Visibility => 0.7,
            AnchorSource::ScoutRelocation => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: Vec3,
    pub look_at: Vec3,
    pub focal_hint: f64,
    pub aspect_hint: Option<AspectRatio>,
    pub prior: f64,
    pub source: AnchorSource,
    pub region_key: RegionKey,
}

impl Anchor {
    pub fn camera(&self, aspect: AspectRatio) -> CameraState {
        CameraState::new(
            self.position,
            self.look_at,
            self.focal_hint,
            DEFAULT_APERTURE,
            self.aspect_hint.unwrap_or(aspect),
        )
    }
}

/// `0.5 * base(source) + 0.5 * visibility`, with visibility clamped to `[0, 1]`.
pub fn anchor_prior(source: AnchorSource, visibility: f64) -> f64 {
    let v = if visibility.is_nan() { 0.0 } else { visibility.clamp(0.0, 1.0) };
    0.5 * source.base_prior() + 0.5 * v
}

/// Geometry knobs for bank construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Ring radius as a multiple of the scene bounding-sphere radius.
    pub ring_radius: f64,
    /// Eye height as a fraction of scene height above the floor.
    pub eye_height: f64,
    pub elevated_radius: f64,
    pub elevated_lift: f64,
    pub top_lift: f64,
    /// Subject coverage targeted when choosing focal hints for subject views.
    pub subject_coverage: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            ring_radius: 1.4,
            eye_height: 0.12,
            elevated_radius: 1.2,
            elevated_lift: 0.6,
            top_lift: 1.6,
            subject_coverage: 0.12,
        }
    }
}

/// Focal length at which a sphere of `radius` at `distance` covers roughly
/// `coverage` of a frame with aspect `aspect` (width / height).
pub fn framing_focal(distance: f64, radius: f64, coverage: f64, aspect: f64) -> f64 {
    let tan_h = (radius / distance.max(1e-9)) * (aspect / coverage.max(1e-6)).sqrt();
    (18.0 / tan_h.max(1e-9)).clamp(FOCAL_RANGE.0, FOCAL_RANGE.1)
}

/// Focal length that keeps a sphere of `radius` inside the frame with margin.
pub fn fit_focal(distance: f64, radius: f64, aspect: f64) -> f64 {
    let tan_v = radius / distance.max(1e-9) / 0.85;
    (18.0 / (tan_v * aspect)).clamp(FOCAL_RANGE.0, FOCAL_RANGE.1)
}

/// Subject visibility from a camera: unoccluded fraction times in-frame fraction.
pub fn subject_visibility(cam: &CameraState, scene: &SceneModel, subject: &SceneObject) -> f64 {
    if scene.point_inside_any(&cam.position) {
        return 0.0;
    }
    let Ok(sbox) = project_box(cam, subject) else {
        return 0.0;
    };
    if sbox.coverage <= 0.0 {
        return 0.0;
    }
    match occlusion_fraction(cam, scene, subject, 8) {
        Ok(occ) => ((1.0 - occ) * sbox.in_frame_fraction).clamp(0.0, 1.0),
        Err(_) => 0.0,
    }
}

fn inside_closed(scene: &SceneModel, p: &Vec3) -> bool {
    scene.objects().iter().any(|o| o.aabb().contains(p))
}

/// Nearest cell center (cell side `h`) that lies outside every object box.
pub fn nearest_free_cell_center(scene: &SceneModel, p: &Vec3, h: f64) -> Vec3 {
    let home = RegionKey::of(p, h);
    for radius in 0..64i64 {
        let mut best: Option<(f64, Vec3)> = None;
        for di in -radius..=radius {
            for dj in -radius..=radius {
                for dk in -radius..=radius {
                    if di.abs().max(dj.abs()).max(dk.abs()) != radius {
                        continue;
                    }
                    let c = RegionKey(home.0 + di, home.1 + dj, home.2 + dk).center(h);
                    if inside_closed(scene, &c) {
                        continue;
                    }
                    let d = (c - p).norm();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
        }
        if let Some((_, c)) = best {
            return c;
        }
    }
    // unreachable for finite scenes; stay put rather than loop forever
    *p
}

struct Draft {
    position: Vec3,
    look_at: Vec3,
    focal: f64,
    aspect_hint: Option<AspectRatio>,
    source: AnchorSource,
    visibility: Option<f64>,
}

/// Builds the deterministic anchor bank: 8 eye-height ring anchors, 4
/// elevated ring anchors, one top-down anchor, up to 4 look-toward anchors
/// placed in open regions, up to 4 visibility anchors, and one relocation
/// anchor per scout view. Anchors inside objects move to the nearest free
/// cell center; anchors sharing a region cell keep only the highest prior.
pub fn build_anchor_bank(
    scene: &SceneModel,
    blueprint: &Blueprint,
    topo: &TopologySummary,
    scouts: &[ScoutView],
    aspect: AspectRatio,
    h: f64,
    cfg: &AnchorConfig,
) -> Vec<Anchor> {
    let bounds = scene.scene_aabb();
    let center = bounds.center();
    let radius = bounds.radius().max(1e-6);
    let height = bounds.extent().z;
    let ratio = aspect.value();
    let subject = blueprint
        .primary_subject
        .as_deref()
        .and_then(|id| scene.object(id));
    let target = subject.map(|s| s.center()).unwrap_or(blueprint.look_toward);
    let subject_radius = subject.map(|s| s.aabb().radius()).unwrap_or(h * 0.5).max(1e-3);

    let mut drafts: Vec<Draft> = Vec::new();
    let ring_dist = cfg.ring_radius * radius;
    let eye_z = bounds.min.z + cfg.eye_height * height;
    for i in 0..8 {
        let theta = (i as f64) * std::f64::consts::FRAC_PI_4;
        let pos = Vec3::new(center.x + ring_dist * theta.cos(), center.y + ring_dist * theta.sin(), eye_z);
        drafts.push(Draft {
            position: pos,
            look_at: center,
            focal: fit_focal((center - pos).norm(), radius, ratio),
            aspect_hint: None,
            source: AnchorSource::BboxHeuristic,
            visibility: None,
        });
    }
    let elev_dist = cfg.elevated_radius * radius;
    for i in 0..4 {
        let theta = std::f64::consts::FRAC_PI_4 + (i as f64) * std::f64::consts::FRAC_PI_2;
        let pos = Vec3::new(
            center.x + elev_dist * theta.cos(),
            center.y + elev_dist * theta.sin(),
            bounds.max.z + cfg.elevated_lift * radius,
        );
        drafts.push(Draft {
            position: pos,
            look_at: center,
            focal: fit_focal((center - pos).norm(), radius, ratio),
            aspect_hint: None,
            source: AnchorSource::BboxHeuristic,
            visibility: None,
        });
    }
    let top = Vec3::new(center.x, center.y, bounds.max.z + cfg.top_lift * radius);
    drafts.push(Draft {
        position: top,
        look_at: center,
        focal: fit_focal((center - top).norm(), radius, ratio),
        aspect_hint: None,
        source: AnchorSource::BboxHeuristic,
        visibility: None,
    });

    for region in topo.open_regions.iter().take(4) {
        let mut pos = *region;
        let offset = pos - target;
        let min_dist = (2.5 * subject_radius).max(0.5 * h);
        if offset.norm() < min_dist {
            let dir = if offset.norm() > 1e-9 { offset.normalize() } else { Vec3::new(0.0, -1.0, 0.3).normalize() };
            pos = target + dir * min_dist;
        }
        drafts.push(Draft {
            position: pos,
            look_at: target,
            focal: framing_focal((target - pos).norm(), subject_radius, cfg.subject_coverage, ratio),
            aspect_hint: None,
            source: AnchorSource::LookToward,
            visibility: None,
        });
    }

    if let Some(subject) = subject {
        drafts.extend(visibility_anchors(scene, subject, h, ratio, aspect, cfg));
    }

    for s in scouts {
        if !crate::geometry::is_finite(&s.position) || (s.position - s.look_at).norm() < 1e-9 {
            continue;
        }
        drafts.push(Draft {
            position: s.position,
            look_at: s.look_at,
            focal: s.focal_mm.clamp(FOCAL_RANGE.0, FOCAL_RANGE.1),
            aspect_hint: None,
            source: AnchorSource::ScoutRelocation,
            visibility: s.visibility,
        });
    }

    let mut bank: Vec<Anchor> = Vec::with_capacity(drafts.len());
    for d in drafts {
        let mut position = d.position;
        if inside_closed(scene, &position) {
            position = nearest_free_cell_center(scene, &position, h);
        }
        if (position - d.look_at).norm() < 1e-6 {
            continue;
        }
        let cam = CameraState::new(position, d.look_at, d.focal, DEFAULT_APERTURE, d.aspect_hint.unwrap_or(aspect));
        let vis = d
            .visibility
            .unwrap_or_else(|| subject.map(|s| subject_visibility(&cam, scene, s)).unwrap_or(0.5));
        let anchor = Anchor {
            position,
            look_at: d.look_at,
            focal_hint: d.focal,
            aspect_hint: d.aspect_hint,
            prior: anchor_prior(d.source, vis),
            source: d.source,
            region_key: RegionKey::of(&position, h),
        };
        match bank.iter_mut().find(|a| a.region_key == anchor.region_key) {
            Some(existing) if existing.prior < anchor.prior => *existing = anchor,
            Some(_) => {}
            None => bank.push(anchor),
        }
    }
    bank
}

fn visibility_anchors(
    scene: &SceneModel,
    subject: &SceneObject,
    h: f64,
    ratio: f64,
    aspect: AspectRatio,
    cfg: &AnchorConfig,
) -> Vec<Draft> {
    let target = subject.center();
    let rs = subject.aabb().radius().max(1e-3);
    let mut scored: Vec<(f64, Vec3, f64)> = Vec::new();
    for dist_mult in [3.0, 6.0] {
        let dist = (dist_mult * rs).max(1.5 * h);
        for elev_deg in [5.0f64, 25.0, 50.0] {
            for az in 0..12 {
                let theta = (az as f64) * std::f64::consts::PI / 6.0;
                let e = elev_deg.to_radians();
                let dir = Vec3::new(e.cos() * theta.cos(), e.cos() * theta.sin(), e.sin());
                let pos = target + dir * dist;
                if inside_closed(scene, &pos) {
                    continue;
                }
                let focal = framing_focal(dist, rs, cfg.subject_coverage, ratio);
                let cam = CameraState::new(pos, target, focal, DEFAULT_APERTURE, aspect);
                let score = subject_visibility(&cam, scene, subject);
                if score > 0.0 {
                    scored.push((score, pos, focal));
                }
            }
        }
    }
    // stable sort keeps grid order among ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut chosen: Vec<Draft> = Vec::new();
    let mut keys: Vec<RegionKey> = Vec::new();
    for (score, pos, focal) in scored {
        let key = RegionKey::of(&pos, h);
        if keys.contains(&key) {
            continue;
        }
        keys.push(key);
        chosen.push(Draft {
            position: pos,
            look_at: target,
            focal,
            aspect_hint: None,
            source: AnchorSource::Visibility,
            visibility: Some(score),
        });
        if chosen.len() == 4 {
            break;
        }
    }
    chosen
}
