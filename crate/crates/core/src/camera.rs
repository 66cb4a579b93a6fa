//! Executable camera state, pinhole projection, and the projection-side
//! reviewer signals (`rule_m1`, `rule_m2`, hard failures).
//!
//! Conventions: the sensor is 36 mm wide and `36 / r` mm tall, roll is zero
//! (camera up follows world +Z), and screen coordinates are normalized to
//! `[0, 1]²` with the origin at the top-left corner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{is_finite, Aabb, Vec3, UP};
use crate::scene::{SceneModel, SceneObject};

pub const SENSOR_WIDTH_MM: f64 = 36.0;
pub const FOCAL_RANGE: (f64, f64) = (8.0, 400.0);
pub const APERTURE_RANGE: (f64, f64) = (0.95, 22.0);
/// Points at or closer than this depth are treated as behind the camera.
pub const NEAR_DEPTH: f64 = 1e-6;
const DEGENERATE_EPS: f64 = 1e-9;
/// Distance from the composition target at which `rule_m2` reaches zero.
pub const M2_FALLOFF: f64 = 0.45;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera position and look-at coincide")]
    Degenerate,
    #[error("non-finite camera parameter")]
    NonFinite,
    #[error("focal length {0} mm outside [8, 400]")]
    Focal(f64),
    #[error("aperture f/{0} outside [0.95, 22]")]
    Aperture(f64),
    #[error("aspect ratio {0} not in the allowed set")]
    Aspect(AspectRatio),
    #[error("invalid aspect ratio `{0}`")]
    BadRatio(String),
}

/// Aspect ratio written as `W:H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AspectRatio {
    pub w: u32,
    pub h: u32,
}

impl AspectRatio {
    pub const WIDE: AspectRatio = AspectRatio { w: 16, h: 9 };
    pub const SQUARE: AspectRatio = AspectRatio { w: 1, h: 1 };
    pub const CLASSIC: AspectRatio = AspectRatio { w: 3, h: 2 };
    pub const PORTRAIT: AspectRatio = AspectRatio { w: 4, h: 5 };

    pub fn new(w: u32, h: u32) -> Result<Self, CameraError> {
        if w == 0 || h == 0 {
            return Err(CameraError::BadRatio(format!("{w}:{h}")));
        }
        Ok(Self { w, h })
    }

    /// Width over height.
    pub fn value(&self) -> f64 {
        self.w as f64 / self.h as f64
    }
}

impl fmt::Display for AspectRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.w, self.h)
    }
}

impl FromStr for AspectRatio {
    type Err = CameraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CameraError::BadRatio(s.to_string());
        let (w, h) = s.trim().split_once(':').ok_or_else(bad)?;
        let w = w.trim().parse().map_err(|_| bad())?;
        let h = h.trim().parse().map_err(|_| bad())?;
        AspectRatio::new(w, h)
    }
}

impl TryFrom<String> for AspectRatio {
    type Error = CameraError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AspectRatio> for String {
    fn from(r: AspectRatio) -> String {
        r.to_string()
    }
}

/// `(p, l, f, d, r)`: position, look-at, focal length (mm), f-number, aspect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub position: Vec3,
    pub look_at: Vec3,
    pub focal_mm: f64,
    pub aperture: f64,
    pub aspect: AspectRatio,
}

impl CameraState {
    pub fn new(position: Vec3, look_at: Vec3, focal_mm: f64, aperture: f64, aspect: AspectRatio) -> Self {
        Self {
            position,
            look_at,
            focal_mm,
            aperture,
            aspect,
        }
    }

    /// Checks every invariant except aspect-set membership.
    pub fn validate(&self) -> Result<(), CameraError> {
        if !is_finite(&self.position)
            || !is_finite(&self.look_at)
            || !self.focal_mm.is_finite()
            || !self.aperture.is_finite()
        {
            return Err(CameraError::NonFinite);
        }
        if (self.position - self.look_at).norm() <= DEGENERATE_EPS {
            return Err(CameraError::Degenerate);
        }
        if !(FOCAL_RANGE.0..=FOCAL_RANGE.1).contains(&self.focal_mm) {
            return Err(CameraError::Focal(self.focal_mm));
        }
        if !(APERTURE_RANGE.0..=APERTURE_RANGE.1).contains(&self.aperture) {
            return Err(CameraError::Aperture(self.aperture));
        }
        Ok(())
    }

    pub fn validate_in(&self, aspect_set: &[AspectRatio]) -> Result<(), CameraError> {
        self.validate()?;
        if !aspect_set.contains(&self.aspect) {
            return Err(CameraError::Aspect(self.aspect));
        }
        Ok(())
    }

    pub fn distance(&self) -> f64 {
        (self.look_at - self.position).norm()
    }

    /// Tangent of the horizontal half field of view.
    pub fn tan_half_h(&self) -> f64 {
        SENSOR_WIDTH_MM * 0.5 / self.focal_mm
    }

    /// Tangent of the vertical half field of view.
    pub fn tan_half_v(&self) -> f64 {
        self.tan_half_h() / self.aspect.value()
    }

    pub fn projector(&self) -> Result<Projector, CameraError> {
        if !is_finite(&self.position) || !is_finite(&self.look_at) || !self.focal_mm.is_finite() {
            return Err(CameraError::NonFinite);
        }
        let dir = self.look_at - self.position;
        let dist = dir.norm();
        if dist <= DEGENERATE_EPS {
            return Err(CameraError::Degenerate);
        }
        if self.focal_mm <= 0.0 {
            return Err(CameraError::Focal(self.focal_mm));
        }
        let forward = dir / dist;
        let side = forward.cross(&UP);
        let right = if side.norm() < 1e-9 {
            // looking straight up or down: keep +X as screen right
            Vec3::x()
        } else {
            side.normalize()
        };
        let up = right.cross(&forward);
        Ok(Projector {
            origin: self.position,
            forward,
            right,
            up,
            tan_h: self.tan_half_h(),
            tan_v: self.tan_half_v(),
        })
    }
}

/// Camera basis with precomputed field-of-view tangents.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub tan_h: f64,
    pub tan_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl ScreenPoint {
    pub fn in_frame(&self) -> bool {
        (0.0..=1.0).contains(&self.u) && (0.0..=1.0).contains(&self.v)
    }
}

impl Projector {
    pub fn depth(&self, world: &Vec3) -> f64 {
        (world - self.origin).dot(&self.forward)
    }

    /// Projection without the near-plane check; `depth` must be positive.
    fn project_unchecked(&self, world: &Vec3) -> ScreenPoint {
        let rel = world - self.origin;
        let depth = rel.dot(&self.forward);
        let x = rel.dot(&self.right) / (depth * self.tan_h);
        let y = rel.dot(&self.up) / (depth * self.tan_v);
        ScreenPoint {
            u: 0.5 + 0.5 * x,
            v: 0.5 - 0.5 * y,
            depth,
        }
    }

    pub fn project(&self, world: &Vec3) -> Option<ScreenPoint> {
        if self.depth(world) <= NEAR_DEPTH {
            return None;
        }
        Some(self.project_unchecked(world))
    }

    /// Unit-length world-space ray direction through screen point `(u, v)`.
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        let x = (2.0 * u - 1.0) * self.tan_h;
        let y = (1.0 - 2.0 * v) * self.tan_v;
        (self.forward + self.right * x + self.up * y).normalize()
    }

    /// Screen-space rectangle of a box, clipped against the near plane.
    /// Returns `None` when the box lies entirely behind the camera.
    pub fn box_rect(&self, aabb: &Aabb) -> Option<([f64; 4], bool)> {
        let corners = aabb.corners();
        let depths: Vec<f64> = corners.iter().map(|c| self.depth(c)).collect();
        let mut pts: Vec<ScreenPoint> = Vec::with_capacity(20);
        let mut all_front = true;
        for (c, d) in corners.iter().zip(&depths) {
            if *d > NEAR_DEPTH {
                pts.push(self.project_unchecked(c));
            } else {
                all_front = false;
            }
        }
        if pts.is_empty() {
            return None;
        }
        if !all_front {
            // edges crossing the near plane contribute their crossing point
            for (a, b) in Aabb::EDGES {
                let (da, db) = (depths[a], depths[b]);
                if (da > NEAR_DEPTH) != (db > NEAR_DEPTH) {
                    let t = (NEAR_DEPTH * 2.0 - da) / (db - da);
                    let p = corners[a] + (corners[b] - corners[a]) * t;
                    pts.push(self.project_unchecked(&p));
                }
            }
        }
        let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &pts {
            r[0] = r[0].min(p.u);
            r[1] = r[1].min(p.v);
            r[2] = r[2].max(p.u);
            r[3] = r[3].max(p.v);
        }
        Some((r, all_front))
    }
}

/// Projected, frame-clipped rectangle of an object box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub center: (f64, f64),
    /// Fraction of the frame area covered by the clipped rectangle.
    pub coverage: f64,
    pub fully_inside: bool,
    /// Clipped rectangle area over unclipped rectangle area.
    pub in_frame_fraction: f64,
}

impl ScreenBox {
    pub const EMPTY: ScreenBox = ScreenBox {
        u_min: 0.0,
        v_min: 0.0,
        u_max: 0.0,
        v_max: 0.0,
        center: (0.0, 0.0),
        coverage: 0.0,
        fully_inside: false,
        in_frame_fraction: 0.0,
    };

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }
}

pub fn project_point(cam: &CameraState, world: &Vec3) -> Result<Option<ScreenPoint>, CameraError> {
    Ok(cam.projector()?.project(world))
}

pub fn project_aabb(cam: &CameraState, aabb: &Aabb) -> Result<ScreenBox, CameraError> {
    let proj = cam.projector()?;
    let Some((raw, all_front)) = proj.box_rect(aabb) else {
        return Ok(ScreenBox::EMPTY);
    };
    let clip = [raw[0].clamp(0.0, 1.0), raw[1].clamp(0.0, 1.0), raw[2].clamp(0.0, 1.0), raw[3].clamp(0.0, 1.0)];
    let area = (clip[2] - clip[0]).max(0.0) * (clip[3] - clip[1]).max(0.0);
    let raw_area = (raw[2] - raw[0]) * (raw[3] - raw[1]);
    let fully_inside = all_front && raw[0] >= 0.0 && raw[1] >= 0.0 && raw[2] <= 1.0 && raw[3] <= 1.0;
    let in_frame_fraction = if fully_inside {
        1.0
    } else if raw_area.is_finite() && raw_area > 0.0 {
        (area / raw_area).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(ScreenBox {
        u_min: clip[0],
        v_min: clip[1],
        u_max: clip[2],
        v_max: clip[3],
        center: ((clip[0] + clip[2]) * 0.5, (clip[1] + clip[3]) * 0.5),
        coverage: area,
        fully_inside,
        in_frame_fraction,
    })
}

pub fn project_box(cam: &CameraState, obj: &SceneObject) -> Result<ScreenBox, CameraError> {
    project_aabb(cam, &obj.aabb())
}

/// Screen placement preference: a half-screen side or a rule-of-thirds point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Center,
    Left,
    Right,
    Top,
    Bottom,
    ThirdsLeft,
    ThirdsRight,
    ThirdsTop,
    ThirdsBottom,
    ThirdsTopLeft,
    ThirdsTopRight,
    ThirdsBottomLeft,
    ThirdsBottomRight,
}

impl Placement {
    pub fn is_thirds(&self) -> bool {
        self.thirds_target().is_some()
    }

    /// The third point for rule-of-thirds preferences.
    pub fn thirds_target(&self) -> Option<(f64, f64)> {
        const A: f64 = 1.0 / 3.0;
        const B: f64 = 2.0 / 3.0;
        match self {
            Placement::ThirdsLeft => Some((A, 0.5)),
            Placement::ThirdsRight => Some((B, 0.5)),
            Placement::ThirdsTop => Some((0.5, A)),
            Placement::ThirdsBottom => Some((0.5, B)),
            Placement::ThirdsTopLeft => Some((A, A)),
            Placement::ThirdsTopRight => Some((B, A)),
            Placement::ThirdsBottomLeft => Some((A, B)),
            Placement::ThirdsBottomRight => Some((B, B)),
            _ => None,
        }
    }

    /// Composition target used by `rule_m2`.
    pub fn target(pref: Option<Placement>) -> (f64, f64) {
        pref.and_then(|p| p.thirds_target()).unwrap_or((0.5, 0.5))
    }

    /// Half-screen test. Exactly 0.5 counts as a violation.
    pub fn half_ok(&self, u: f64, v: f64) -> bool {
        use Placement::*;
        let left = matches!(self, Left | ThirdsLeft | ThirdsTopLeft | ThirdsBottomLeft);
        let right = matches!(self, Right | ThirdsRight | ThirdsTopRight | ThirdsBottomRight);
        let top = matches!(self, Top | ThirdsTop | ThirdsTopLeft | ThirdsTopRight);
        let bottom = matches!(self, Bottom | ThirdsBottom | ThirdsBottomLeft | ThirdsBottomRight);
        (!left || u < 0.5) && (!right || u > 0.5) && (!top || v < 0.5) && (!bottom || v > 0.5)
    }
}

/// Camera elevation class relative to the subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnglePref {
    Low,
    Eye,
    High,
    Top,
}

impl AnglePref {
    fn ordinal(&self) -> i32 {
        match self {
            AnglePref::Low => 0,
            AnglePref::Eye => 1,
            AnglePref::High => 2,
            AnglePref::Top => 3,
        }
    }

    /// Classifies the elevation angle (degrees) of the camera above the subject.
    pub fn from_elevation(deg: f64) -> AnglePref {
        if deg < -3.0 {
            AnglePref::Low
        } else if deg < 20.0 {
            AnglePref::Eye
        } else if deg < 65.0 {
            AnglePref::High
        } else {
            AnglePref::Top
        }
    }

    pub fn steps_from(&self, other: AnglePref) -> i32 {
        (self.ordinal() - other.ordinal()).abs()
    }
}

/// Elevation in degrees of `camera` as seen from `target`.
pub fn elevation_deg(camera: &Vec3, target: &Vec3) -> f64 {
    let d = camera - target;
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    d.z.atan2(horiz).to_degrees()
}

pub fn angle_class(cam: &CameraState, target: &Vec3) -> AnglePref {
    AnglePref::from_elevation(elevation_deg(&cam.position, target))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardFailure {
    InvalidCamera,
    SubjectMissing,
    ExtremeOcclusion,
    ViewTypeViolation,
}

impl HardFailure {
    pub fn tag(&self) -> &'static str {
        match self {
            HardFailure::InvalidCamera => "invalid_camera",
            HardFailure::SubjectMissing => "subject_missing",
            HardFailure::ExtremeOcclusion => "extreme_occlusion",
            HardFailure::ViewTypeViolation => "view_type_violation",
        }
    }
}

/// Thresholds for the hard-failure checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureThresholds {
    /// Samples per axis of the stratified occlusion grid (total = square).
    pub occlusion_grid: usize,
    pub extreme_occlusion: f64,
    pub missing_coverage: f64,
    /// Angle-class distance at which a required view type counts as grossly violated.
    pub view_type_steps: i32,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            occlusion_grid: 8,
            extreme_occlusion: 0.9,
            missing_coverage: 0.0005,
            view_type_steps: 2,
        }
    }
}

/// Fraction of stratified subject samples whose sight line is blocked by
/// another object. Samples are rays through an `n × n` grid over the
/// subject's clipped screen rectangle that actually hit the subject, so they
/// land on its camera-facing faces.
pub fn occlusion_fraction(
    cam: &CameraState,
    scene: &SceneModel,
    subject: &SceneObject,
    grid: usize,
) -> Result<f64, CameraError> {
    let proj = cam.projector()?;
    let sbox = project_box(cam, subject)?;
    let target = subject.aabb();
    let others: Vec<Aabb> = scene
        .objects()
        .iter()
        .filter(|o| o.id != subject.id)
        .map(|o| o.aabb())
        .collect();
    let blocked_by = |dir: &Vec3| -> Option<bool> {
        let (t_hit, _) = target.ray_hit(&proj.origin, dir, 0.0, f64::INFINITY)?;
        Some(others.iter().any(|b| {
            b.ray_hit(&proj.origin, dir, 0.0, t_hit)
                .is_some_and(|(t0, t1)| t1 > t0 + 1e-9 && t0 < t_hit - 1e-9)
        }))
    };
    let mut hits = 0usize;
    let mut blocked = 0usize;
    if sbox.coverage > 0.0 {
        for j in 0..grid {
            for i in 0..grid {
                let u = sbox.u_min + (i as f64 + 0.5) / grid as f64 * sbox.width();
                let v = sbox.v_min + (j as f64 + 0.5) / grid as f64 * sbox.height();
                if let Some(b) = blocked_by(&proj.ray_dir(u, v)) {
                    hits += 1;
                    blocked += b as usize;
                }
            }
        }
    }
    if hits == 0 {
        let dir = (subject.center() - proj.origin).normalize();
        return Ok(match blocked_by(&dir) {
            Some(true) => 1.0,
            _ => 0.0,
        });
    }
    Ok(blocked as f64 / hits as f64)
}

/// First matching hard-failure tag, checked in the order invalid camera,
/// missing subject, extreme occlusion, view-type violation.
pub fn hard_failure_check(
    cam: &CameraState,
    scene: &SceneModel,
    subject: Option<&SceneObject>,
    required_angle: Option<AnglePref>,
    thresholds: &FailureThresholds,
) -> Option<HardFailure> {
    if cam.validate().is_err() || scene.point_inside_any(&cam.position) {
        return Some(HardFailure::InvalidCamera);
    }
    let subject = match subject {
        Some(s) => s,
        None => return Some(HardFailure::SubjectMissing),
    };
    let sbox = match project_box(cam, subject) {
        Ok(b) => b,
        Err(_) => return Some(HardFailure::InvalidCamera),
    };
    if sbox.coverage < thresholds.missing_coverage {
        return Some(HardFailure::SubjectMissing);
    }
    match occlusion_fraction(cam, scene, subject, thresholds.occlusion_grid) {
        Ok(f) if f >= thresholds.extreme_occlusion => return Some(HardFailure::ExtremeOcclusion),
        Err(_) => return Some(HardFailure::InvalidCamera),
        _ => {}
    }
    if let Some(req) = required_angle {
        if angle_class(cam, &subject.center()).steps_from(req) >= thresholds.view_type_steps {
            return Some(HardFailure::ViewTypeViolation);
        }
    }
    None
}

/// Whether the subject center is in frame and on the requested half.
pub fn rule_m1(cam: &CameraState, subject: &SceneObject, placement: Option<Placement>) -> f64 {
    if cam.validate().is_err() {
        return 0.0;
    }
    match project_point(cam, &subject.center()) {
        Ok(Some(p)) if p.in_frame() => match placement {
            Some(pref) if !pref.half_ok(p.u, p.v) => 0.0,
            _ => 1.0,
        },
        _ => 0.0,
    }
}

/// `max(0, 1 - d / 0.45)` for the screen distance `d` from the projected
/// subject center to the composition target.
pub fn rule_m2(cam: &CameraState, subject: &SceneObject, placement: Option<Placement>) -> f64 {
    if cam.validate().is_err() {
        return 0.0;
    }
    match project_point(cam, &subject.center()) {
        Ok(Some(p)) if p.in_frame() => m2_from_distance(screen_distance(&p, Placement::target(placement))),
        _ => 0.0,
    }
}

pub fn screen_distance(p: &ScreenPoint, target: (f64, f64)) -> f64 {
    ((p.u - target.0).powi(2) + (p.v - target.1).powi(2)).sqrt()
}

pub fn m2_from_distance(d: f64) -> f64 {
    (1.0 - d / M2_FALLOFF).max(0.0)
}

/// Projection-side signals for one candidate camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSignals {
    pub m1: f64,
    pub m2: f64,
    pub subject_visible: bool,
    pub hard_failure: Option<HardFailure>,
}

pub fn rule_signals(
    cam: &CameraState,
    scene: &SceneModel,
    subject: Option<&SceneObject>,
    placement: Option<Placement>,
    required_angle: Option<AnglePref>,
    thresholds: &FailureThresholds,
) -> RuleSignals {
    let hard_failure = hard_failure_check(cam, scene, subject, required_angle, thresholds);
    let invisible = matches!(
        hard_failure,
        Some(HardFailure::InvalidCamera | HardFailure::SubjectMissing | HardFailure::ExtremeOcclusion)
    );
    let Some(subject) = subject.filter(|_| !invisible) else {
        return RuleSignals {
            m1: 0.0,
            m2: 0.0,
            subject_visible: false,
            hard_failure,
        };
    };
    let center_in_frame = matches!(project_point(cam, &subject.center()), Ok(Some(p)) if p.in_frame());
    let m1 = if hard_failure.is_some() || !center_in_frame {
        0.0
    } else {
        rule_m1(cam, subject, placement)
    };
    RuleSignals {
        m1,
        m2: rule_m2(cam, subject, placement),
        subject_visible: center_in_frame,
        hard_failure,
    }
}
