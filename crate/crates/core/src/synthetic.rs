//! Seeded generator for a benchmark suite of box scenes and missions,
//! balanced across the three mission categories.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::blueprint::{
    registry_to_string, Bootstrap, EvaluationSpec, MissionCategory, MissionSpec, ScalePref,
};
use crate::camera::{AnglePref, AspectRatio, Placement};
use crate::geometry::{Aabb, Vec3};
use crate::scene::{save_scene, SceneModel, SceneObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Village,
    Tower,
    Street,
    Plaza,
}

const LAYOUTS: [Layout; 4] = [Layout::Village, Layout::Tower, Layout::Street, Layout::Plaza];

/// One generated benchmark item.
#[derive(Debug, Clone)]
pub struct SuiteItem {
    pub scene: SceneModel,
    pub mission: MissionSpec,
}

fn place(
    rng: &mut ChaCha8Rng,
    placed: &[SceneObject],
    id: &str,
    label: &str,
    size: Vec3,
    area: (f64, f64, f64, f64),
) -> Option<SceneObject> {
    for _ in 0..200 {
        let x = rng.random_range(area.0..area.1);
        let y = rng.random_range(area.2..area.3);
        let min = Vec3::new(x - size.x / 2.0, y - size.y / 2.0, 0.0);
        let b = Aabb::new(min, min + size);
        let padded = Aabb::new(b.min - Vec3::new(0.3, 0.3, 0.0), b.max + Vec3::new(0.3, 0.3, 0.0));
        if placed.iter().all(|o| !padded.overlaps(&o.aabb())) {
            return Some(SceneObject::new(id, label, b.min, b.max));
        }
    }
    None
}

fn jitter(rng: &mut ChaCha8Rng, v: f64) -> f64 {
    v * rng.random_range(0.8..1.25)
}

fn build_scene(layout: Layout, rng: &mut ChaCha8Rng) -> (SceneModel, String) {
    let mut objs: Vec<SceneObject> = Vec::new();
    let add = |objs: &mut Vec<SceneObject>, rng: &mut ChaCha8Rng, id: &str, label: &str, size: Vec3, area| {
        if let Some(o) = place(rng, objs, id, label, size, area) {
            objs.push(o);
        }
    };
    let subject = match layout {
        Layout::Village => {
            let s = Vec3::new(jitter(rng, 4.0), jitter(rng, 3.0), jitter(rng, 3.0));
            add(&mut objs, rng, "cabin", "cabin", s, (-1.0, 1.0, -1.0, 1.0));
            for i in 0..rng.random_range(3..6) {
                let t = Vec3::new(1.2, 1.2, jitter(rng, 5.0));
                add(&mut objs, rng, &format!("tree_{i}"), "tree", t, (-12.0, 12.0, -12.0, 12.0));
            }
            for i in 0..2 {
                let r = Vec3::new(jitter(rng, 1.0), jitter(rng, 0.8), jitter(rng, 0.6));
                add(&mut objs, rng, &format!("rock_{i}"), "rock", r, (-8.0, 8.0, -8.0, 8.0));
            }
            "cabin"
        }
        Layout::Tower => {
            let s = Vec3::new(jitter(rng, 2.5), jitter(rng, 2.5), jitter(rng, 16.0));
            add(&mut objs, rng, "tower", "lighthouse", s, (-0.5, 0.5, -0.5, 0.5));
            for i in 0..rng.random_range(2..4) {
                let b = Vec3::new(jitter(rng, 3.0), jitter(rng, 2.5), jitter(rng, 2.5));
                add(&mut objs, rng, &format!("shed_{i}"), "shed", b, (-9.0, 9.0, -9.0, 9.0));
            }
            "tower"
        }
        Layout::Street => {
            let n = rng.random_range(5..8);
            for i in 0..n {
                let b = Vec3::new(jitter(rng, 3.5), jitter(rng, 3.0), jitter(rng, 4.5));
                let x0 = -20.0 + i as f64 * 40.0 / n as f64;
                add(&mut objs, rng, &format!("house_{i}"), "house", b, (x0, x0 + 1.5, -0.5, 0.5));
            }
            let k = Vec3::new(1.5, 1.5, 2.0);
            add(&mut objs, rng, "kiosk", "kiosk", k, (-6.0, 6.0, -8.0, -5.0));
            "kiosk"
        }
        Layout::Plaza => {
            let f = Vec3::new(jitter(rng, 3.0), jitter(rng, 3.0), jitter(rng, 2.0));
            add(&mut objs, rng, "fountain", "fountain", f, (-0.5, 0.5, -0.5, 0.5));
            for i in 0..4 {
                let b = Vec3::new(jitter(rng, 4.0), jitter(rng, 4.0), jitter(rng, 6.0));
                let a = i as f64 * std::f64::consts::FRAC_PI_2 + 0.4;
                let (x, y) = (11.0 * a.cos(), 11.0 * a.sin());
                add(&mut objs, rng, &format!("hall_{i}"), "hall", b, (x - 1.0, x + 1.0, y - 1.0, y + 1.0));
            }
            let s = Vec3::new(0.8, 0.8, 3.0);
            add(&mut objs, rng, "statue", "statue", s, (-6.0, 6.0, -6.0, 6.0));
            "fountain"
        }
    };
    (SceneModel::new(objs).expect("generator places at least the subject"), subject.to_string())
}

const ASPECT_SETS: [&[AspectRatio]; 4] = [
    &[AspectRatio::WIDE, AspectRatio::SQUARE],
    &[AspectRatio::CLASSIC, AspectRatio::PORTRAIT, AspectRatio::WIDE],
    &[AspectRatio::WIDE],
    &[AspectRatio::SQUARE, AspectRatio::WIDE, AspectRatio::PORTRAIT],
];

fn placement_phrase(p: Placement) -> &'static str {
    match p {
        Placement::ThirdsLeft => "on the left third",
        Placement::ThirdsRight => "on the right third",
        Placement::ThirdsBottomLeft => "on the lower-left third point",
        _ => "in the center",
    }
}

fn mission_for(
    idx: usize,
    category: MissionCategory,
    scene: &SceneModel,
    subject: &str,
    rng: &mut ChaCha8Rng,
) -> MissionSpec {
    let label = scene.object(subject).map(|o| o.label.clone()).unwrap_or_default();
    let other = scene
        .objects()
        .iter()
        .find(|o| o.id != subject)
        .map(|o| o.label.clone())
        .unwrap_or_else(|| "surroundings".into());
    let (instruction, eval) = match category {
        MissionCategory::SubjectPlacement => {
            let p = *[
                Placement::ThirdsLeft,
                Placement::ThirdsRight,
                Placement::Center,
                Placement::ThirdsBottomLeft,
            ]
            .choose(rng)
            .expect("non-empty");
            let scale = *[ScalePref::Medium, ScalePref::Large].choose(rng).expect("non-empty");
            (
                format!("Frame the {label} {}, clearly readable, avoid clipping it.", placement_phrase(p)),
                EvaluationSpec {
                    primary_subject: Some(subject.into()),
                    placement_pref: Some(p),
                    scale_pref: Some(scale),
                    angle_pref: Some(AnglePref::Eye),
                    ..Default::default()
                },
            )
        }
        MissionCategory::RelationalComposition => {
            let angle = *[AnglePref::Eye, AnglePref::High].choose(rng).expect("non-empty");
            (
                format!(
                    "Show the {label} in relation to the {other}, with the {other} visible behind it, from {}.",
                    if angle == AnglePref::High { "a high vantage point" } else { "eye level" }
                ),
                EvaluationSpec {
                    primary_subject: Some(subject.into()),
                    placement_pref: Some(Placement::ThirdsRight),
                    scale_pref: Some(ScalePref::Medium),
                    angle_pref: Some(angle),
                    depth_emphasis: Some(true),
                    ..Default::default()
                },
            )
        }
        MissionCategory::AtmosphereStyle => {
            let vibe = *["lonely cinematic", "calm serene", "vast panoramic", "moody dramatic"]
                .choose(rng)
                .expect("non-empty");
            (
                format!("A {vibe} shot of the {label}, small in a wide environment, no clutter."),
                EvaluationSpec {
                    primary_subject: Some(subject.into()),
                    scale_pref: Some(ScalePref::Small),
                    angle_pref: Some(AnglePref::Eye),
                    ..Default::default()
                },
            )
        }
    };
    MissionSpec {
        mission_id: format!("m{idx:03}"),
        category,
        scene_ref: format!("scenes/scene_{idx:03}.json"),
        instruction,
        bootstrap: Bootstrap::default(),
        aspect_set: ASPECT_SETS[idx % ASPECT_SETS.len()].to_vec(),
        eval_spec: eval,
    }
}

/// `n` missions, categories assigned round-robin, each on its own scene.
pub fn generate_suite(n: usize, seed: u64) -> Vec<SuiteItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let category = MissionCategory::ALL[i % 3];
            let layout = LAYOUTS[(i / 3 + i) % LAYOUTS.len()];
            let (scene, subject) = build_scene(layout, &mut rng);
            let mission = mission_for(i, category, &scene, &subject, &mut rng);
            SuiteItem { scene, mission }
        })
        .collect()
}

/// Writes `missions.json` and `scenes/scene_NNN.json` under `dir`.
pub fn write_suite(items: &[SuiteItem], dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("scenes"))?;
    for it in items {
        save_scene(&it.scene, dir.join(&it.mission.scene_ref))?;
    }
    let missions: Vec<MissionSpec> = items.iter().map(|i| i.mission.clone()).collect();
    std::fs::write(dir.join("missions.json"), registry_to_string(&missions))
}
