//! Acceptance suite. Runs every top-level criterion and prints one
//! `[PASS]`/`[FAIL]` line per criterion; exits nonzero on any failure.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use camsearch::advisors::{
    compare_pairwise, propose, reflect_round, review_image, Advisor, AdvisorError, CompareRequest, PairwiseVerdict,
    ProposeRequest, ReflectRequest, ReviewRequest, Role, SeedOrigin, StubAdvisor, EXPLORE_RATIO_RANGE,
    MAX_FAILURE_TAGS, MAX_REVIEWER_ZONES, MAX_SEED_CANDIDATES, STEP_SCALE_RANGE,
};
use camsearch::anchors::{Anchor, AnchorSource};
use camsearch::camera::{
    m2_from_distance, project_point, rule_m2, screen_distance, AspectRatio, CameraState, Placement,
};
use camsearch::eval::{quality_composite, run_baseline, BaselinePolicy, ExternalScores, SyntheticScorer};
use camsearch::geometry::Vec3;
use camsearch::memory::{
    inside_any, ForbiddenZone, RegionKey, RegionLabel, RegionMemory, ReflectorThresholds, ZoneOrigin,
};
use camsearch::render::BoxRasterizer;
use camsearch::scene::SceneObject;
use camsearch::search::{
    internal_score, pick_high_explore, run_search, zones_registered, RunLog, SearchConfig, SearchError,
    SCORE_WEIGHTS,
};
use camsearch::synthetic::{generate_suite, SuiteItem};

const SUITE_SEED: u64 = 0;
const SUITE_SIZE: usize = 20;
const RUN_SEEDS: u64 = 5;
const SUITE_TIME_LIMIT: Duration = Duration::from_secs(600);

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// shared suite runs

struct Run {
    mission_id: String,
    seed: u64,
    log: RunLog,
    completed: bool,
    m_qs: f64,
}

struct SuiteRuns {
    by_method: BTreeMap<&'static str, Vec<Run>>,
    elapsed: Duration,
}

const METHODS: [&str; 5] = ["full", "no_high_explore", "no_region_memory", "random_search", "single_step"];

fn run_method(method: &str, item: &SuiteItem, seed: u64) -> Run {
    let scene = Arc::new(item.scene.clone());
    let advisor = StubAdvisor::new(scene.clone());
    let mut config = SearchConfig {
        seed,
        ..Default::default()
    };
    let result = match method {
        "full" => run_search(item.mission.clone(), scene, config, &advisor, &BoxRasterizer, None),
        "no_high_explore" => {
            config.high_explore = false;
            run_search(item.mission.clone(), scene, config, &advisor, &BoxRasterizer, None)
        }
        "no_region_memory" => {
            config.region_memory = false;
            run_search(item.mission.clone(), scene, config, &advisor, &BoxRasterizer, None)
        }
        other => {
            let policy: BaselinePolicy = other.parse().expect("known baseline");
            run_baseline(policy, item.mission.clone(), scene, config, &advisor, &BoxRasterizer, None)
        }
    };
    let (log, completed) = match result {
        Ok(f) => (f.log, true),
        Err(SearchError::MissionFailed { log, .. }) => (*log, false),
        Err(e) => panic!("{method} {} seed {seed}: {e}", item.mission.mission_id),
    };
    let m_qs = log
        .final_result
        .as_ref()
        .map(|f| quality_composite(&SyntheticScorer::from_signals(&f.reference.m).expect("reference in range")))
        .unwrap_or(0.0);
    Run {
        mission_id: item.mission.mission_id.clone(),
        seed,
        log,
        completed,
        m_qs,
    }
}

fn suite_runs() -> SuiteRuns {
    let suite = generate_suite(SUITE_SIZE, SUITE_SEED);
    let start = Instant::now();
    let mut by_method = BTreeMap::new();
    for method in METHODS {
        let mut runs = Vec::with_capacity(suite.len() * RUN_SEEDS as usize);
        for seed in 0..RUN_SEEDS {
            for item in &suite {
                runs.push(run_method(method, item, seed));
            }
        }
        by_method.insert(method, runs);
    }
    SuiteRuns {
        by_method,
        elapsed: start.elapsed(),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

// ---------------------------------------------------------------------------
// internal score

fn internal_score_regression() -> Check {
    let one = internal_score(&[1.0; 6]).map_err(|e| e.to_string())?;
    let half = internal_score(&[0.5; 6]).map_err(|e| e.to_string())?;
    let sum: f64 = SCORE_WEIGHTS.iter().sum();
    ensure(one == 1.0, || format!("unit vector gave {one:.17}"))?;
    ensure(half == 0.5, || format!("all-0.5 gave {half:.17}"))?;
    ensure((sum - 1.0).abs() <= 1e-12, || format!("weights sum to {sum:.17}"))?;
    ensure(internal_score(&[1.1, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err(), || "out-of-range input accepted".into())?;
    Ok(format!("J(1)={one}, J(0.5)={half}, sum(w)={sum}"))
}

// ---------------------------------------------------------------------------
// high-explore oracle

fn oracle_key(p: &Vec3, h: f64) -> RegionKey {
    RegionKey((p.x / h).floor() as i64, (p.y / h).floor() as i64, (p.z / h).floor() as i64)
}

fn oracle_in_zone(z: &ForbiddenZone, p: &Vec3) -> bool {
    (0..3).all(|i| p[i] >= z.center[i] - z.half_extent[i] && p[i] <= z.center[i] + z.half_extent[i])
}

fn oracle_pick(bank: &[Anchor], incumbent: &Vec3, mem: &RegionMemory, zones: &[ForbiddenZone], h: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in bank.iter().enumerate() {
        if zones.iter().any(|z| oracle_in_zone(z, &a.position)) {
            continue;
        }
        let rec = mem.record_at(&oracle_key(&a.position, h));
        let label = rec.label();
        if label == RegionLabel::Dead {
            continue;
        }
        let u = if label == RegionLabel::Unknown { 1.2 } else { 0.25 };
        let dist = ((a.position - incumbent).norm() / (2.0 * h)).min(2.0);
        let promising = if label == RegionLabel::Promising { 0.40 } else { 0.0 };
        let s = a.prior + u + dist - 0.35 * rec.visits as f64 - promising;
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

fn rand_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn high_explore_oracle() -> Check {
    const FIXTURES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let priors = [0.4, 0.55, 0.7, 0.85];
    let (mut none_cases, mut dead_seen, mut zoned_seen, mut tied) = (0, 0, 0, 0);
    for f in 0..FIXTURES {
        let h = rng.random_range(0.9..3.0);
        let n = rng.random_range(1..=20);
        let mut bank: Vec<Anchor> = Vec::with_capacity(n);
        for _ in 0..n {
            let (position, prior) = if !bank.is_empty() && rng.random_bool(0.25) {
                let src: &Anchor = bank.choose(&mut rng).expect("non-empty");
                (src.position, src.prior)
            } else {
                let prior = if rng.random_bool(0.6) {
                    *priors.choose(&mut rng).expect("non-empty")
                } else {
                    rng.random_range(0.0..1.0)
                };
                (rand_vec(&mut rng, 12.0), prior)
            };
            bank.push(Anchor {
                position,
                look_at: Vec3::zeros(),
                focal_hint: 35.0,
                aspect_hint: None,
                prior,
                source: AnchorSource::Visibility,
                region_key: RegionKey::of(&position, h),
            });
        }
        let mut mem = RegionMemory::new(h, ReflectorThresholds::default(), true);
        for _ in 0..rng.random_range(0..40) {
            let p = if rng.random_bool(0.8) {
                bank.choose(&mut rng).expect("non-empty").position
            } else {
                rand_vec(&mut rng, 12.0)
            };
            mem.record_candidate(
                &p,
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-0.1..0.1),
                rng.random_bool(0.15),
            );
        }
        let mut zones = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let center = if rng.random_bool(0.6) {
                bank.choose(&mut rng).expect("non-empty").position + rand_vec(&mut rng, 0.3 * h)
            } else {
                rand_vec(&mut rng, 12.0)
            };
            zones.push(ForbiddenZone {
                center,
                half_extent: Vec3::new(
                    rng.random_range(0.05..2.0) * h,
                    rng.random_range(0.05..2.0) * h,
                    rng.random_range(0.05..2.0) * h,
                ),
                origin: if rng.random_bool(0.5) { ZoneOrigin::Reviewer } else { ZoneOrigin::ReflectorDead },
            });
        }
        let incumbent = rand_vec(&mut rng, 12.0);
        let got = pick_high_explore(&bank, &incumbent, &mem, &zones);
        let want = oracle_pick(&bank, &incumbent, &mem, &zones, h);
        if got != want {
            return Err(format!("fixture {f}: engine picked {got:?}, oracle {want:?}"));
        }
        none_cases += usize::from(want.is_none());
        dead_seen += usize::from(bank.iter().any(|a| mem.record_at(&oracle_key(&a.position, h)).label() == RegionLabel::Dead));
        zoned_seen += usize::from(bank.iter().any(|a| zones.iter().any(|z| oracle_in_zone(z, &a.position))));
        if let Some(w) = want {
            tied += usize::from(bank[w + 1..].iter().any(|a| a.position == bank[w].position && a.prior == bank[w].prior));
        }
    }
    Ok(format!(
        "{FIXTURES}/{FIXTURES} agree (fixtures with dead anchors {dead_seen}, zoned {zoned_seen}, \
         exact ties at the winner {tied}, no eligible anchor {none_cases})"
    ))
}

// ---------------------------------------------------------------------------
// published composites

fn published_composites() -> Check {
    let rows = [
        ("single-step", 0.447, 0.470, 0.603, 0.514),
        ("anchor best-of-N", 0.464, 0.481, 0.593, 0.519),
        ("random search", 0.483, 0.492, 0.589, 0.527),
        ("single-chain", 0.530, 0.545, 0.616, 0.567),
        ("full system", 0.550, 0.564, 0.614, 0.578),
    ];
    let mut worst: f64 = 0.0;
    for (name, iaa, iqa, ista, published) in rows {
        let s = ExternalScores::new(iaa, iqa, ista, "table").map_err(|e| e.to_string())?;
        let got = quality_composite(&s);
        let err = (got - published).abs();
        ensure(err <= 0.0015, || format!("{name}: composite {got:.4} vs published {published}"))?;
        worst = worst.max(err);
    }
    Ok(format!("5/5 rows within 0.0015 (max error {worst:.4})"))
}

// ---------------------------------------------------------------------------
// m2

fn oracle_target(p: Option<Placement>) -> (f64, f64) {
    let third = 1.0 / 3.0;
    let two = 2.0 / 3.0;
    match p {
        Some(Placement::ThirdsLeft) => (third, 0.5),
        Some(Placement::ThirdsRight) => (two, 0.5),
        Some(Placement::ThirdsTop) => (0.5, third),
        Some(Placement::ThirdsBottom) => (0.5, two),
        Some(Placement::ThirdsTopLeft) => (third, third),
        Some(Placement::ThirdsTopRight) => (two, third),
        Some(Placement::ThirdsBottomLeft) => (third, two),
        Some(Placement::ThirdsBottomRight) => (two, two),
        _ => (0.5, 0.5),
    }
}

/// Screen coordinates of `world`, or `None` behind the near plane.
fn oracle_project(cam: &CameraState, world: &Vec3) -> Option<(f64, f64)> {
    let f = (cam.look_at - cam.position).normalize();
    let up_world = Vec3::new(0.0, 0.0, 1.0);
    let side = f.cross(&up_world);
    let right = if side.norm() < 1e-9 { Vec3::new(1.0, 0.0, 0.0) } else { side.normalize() };
    let up = right.cross(&f);
    let tan_h = 36.0 / (2.0 * cam.focal_mm);
    let tan_v = tan_h / (cam.aspect.w as f64 / cam.aspect.h as f64);
    let rel = world - cam.position;
    let depth = rel.dot(&f);
    if depth <= 1e-6 {
        return None;
    }
    let x = rel.dot(&right) / (depth * tan_h);
    let y = rel.dot(&up) / (depth * tan_v);
    Some((0.5 + 0.5 * x, 0.5 - 0.5 * y))
}

fn m2_formula() -> Check {
    const PAIRS: usize = 10_000;
    let placements = [
        None,
        Some(Placement::Center),
        Some(Placement::Left),
        Some(Placement::Right),
        Some(Placement::Top),
        Some(Placement::Bottom),
        Some(Placement::ThirdsLeft),
        Some(Placement::ThirdsRight),
        Some(Placement::ThirdsTop),
        Some(Placement::ThirdsBottom),
        Some(Placement::ThirdsTopLeft),
        Some(Placement::ThirdsTopRight),
        Some(Placement::ThirdsBottomLeft),
        Some(Placement::ThirdsBottomRight),
    ];
    let aspects = [
        AspectRatio::WIDE,
        AspectRatio::SQUARE,
        AspectRatio::CLASSIC,
        AspectRatio::PORTRAIT,
        AspectRatio::new(21, 9).expect("valid"),
        AspectRatio::new(9, 16).expect("valid"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d32);
    let (mut in_frame, mut positive, mut worst) = (0, 0, 0.0f64);
    for i in 0..PAIRS {
        let center = rand_vec(&mut rng, 20.0);
        let half = Vec3::new(rng.random_range(0.05..2.5), rng.random_range(0.05..2.5), rng.random_range(0.05..2.5));
        let subject = SceneObject::new("s", "subject", center - half, center + half);
        let dir = rand_vec(&mut rng, 1.0);
        if dir.norm() < 1e-3 {
            continue;
        }
        let dist = rng.random_range(2.0..60.0);
        let position = center + dir.normalize() * dist;
        let look_at = center + rand_vec(&mut rng, 1.0) * (dist * rng.random_range(0.0..0.6));
        if (look_at - position).norm() < 1e-3 {
            continue;
        }
        let cam = CameraState::new(
            position,
            look_at,
            rng.random_range(10.0..150.0),
            5.6,
            *aspects.choose(&mut rng).expect("non-empty"),
        );
        cam.validate().map_err(|e| format!("pair {i}: generated invalid camera: {e}"))?;
        let placement = *placements.choose(&mut rng).expect("non-empty");
        let got = rule_m2(&cam, &subject, placement);

        let target = oracle_target(placement);
        let expected = match oracle_project(&cam, &center) {
            Some((u, v)) if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) => {
                let d = ((u - target.0).powi(2) + (v - target.1).powi(2)).sqrt();
                in_frame += 1;
                let pp = project_point(&cam, &center)
                    .map_err(|e| e.to_string())?
                    .ok_or_else(|| format!("pair {i}: project_point lost an in-front point"))?;
                ensure((pp.u - u).abs() <= 1e-9 && (pp.v - v).abs() <= 1e-9, || {
                    format!("pair {i}: project_point ({}, {}) vs oracle ({u}, {v})", pp.u, pp.v)
                })?;
                let d_engine = screen_distance(&pp, target);
                ensure((d_engine - d).abs() <= 1e-9, || format!("pair {i}: d {d_engine} vs {d}"))?;
                ensure((m2_from_distance(d_engine) - got).abs() <= 1e-9, || {
                    format!("pair {i}: rule_m2 {got} vs max(0, 1 - d/0.45) from project_point")
                })?;
                (1.0 - d / 0.45).max(0.0)
            }
            _ => 0.0,
        };
        positive += usize::from(expected > 0.0);
        let err = (got - expected).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, || format!("pair {i}: rule_m2 {got} vs oracle {expected}"))?;
    }
    Ok(format!(
        "{PAIRS} pairs, max error {worst:.1e} ({in_frame} in frame, {positive} with m2 > 0)"
    ))
}

// ---------------------------------------------------------------------------
// region state machine

#[derive(Debug, Default, Clone, Copy)]
struct OracleCell {
    visits: u32,
    best: f64,
    best_sem: f64,
    poor: u32,
    promising: u32,
    improvement: u32,
    stagnation: u32,
    dead: bool,
}

impl OracleCell {
    fn hit(&mut self, j: f64, sem: f64, delta: f64, hard: bool) {
        self.visits += 1;
        self.best = self.best.max(j);
        self.best_sem = self.best_sem.max(sem);
        let promising = j >= 0.68 || sem >= 0.70;
        if j < 0.40 || hard {
            self.poor += 1;
        }
        if promising {
            self.promising += 1;
        }
        if delta > 0.02 {
            self.improvement += 1;
        }
        if delta.abs() <= 0.02 && !promising {
            self.stagnation += 1;
        }
        if (self.poor >= 2 && self.best < 0.45) || (self.stagnation >= 3 && self.improvement == 0) {
            self.dead = true;
        }
    }

    fn label(&self) -> RegionLabel {
        if self.dead {
            RegionLabel::Dead
        } else if self.promising > 0 {
            RegionLabel::Promising
        } else {
            RegionLabel::Unknown
        }
    }
}

fn pick_biased(rng: &mut ChaCha8Rng, edges: &[f64], lo: f64, hi: f64) -> f64 {
    if rng.random_bool(0.5) {
        let e = *edges.choose(rng).expect("non-empty");
        match rng.random_range(0..3) {
            0 => e,
            1 => e - 1e-12,
            _ => e + 1e-12,
        }
        .clamp(lo, hi)
    } else {
        rng.random_range(lo..hi)
    }
}

fn region_state_machine() -> Check {
    const SEQUENCES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e61);
    let (mut hits, mut died, mut promising) = (0usize, 0usize, 0usize);
    for s in 0..SEQUENCES {
        let h = rng.random_range(0.9..3.0);
        let mut mem = RegionMemory::new(h, ReflectorThresholds::default(), true);
        let p = rand_vec(&mut rng, 10.0);
        let key = mem.key(&p);
        let mut oracle = OracleCell::default();
        let len = rng.random_range(1..=24);
        let mut was_dead = false;
        for step in 0..len {
            let j = pick_biased(&mut rng, &[0.40, 0.45, 0.68, 0.0, 1.0], 0.0, 1.0);
            let sem = pick_biased(&mut rng, &[0.70, 0.0, 1.0], 0.0, 1.0);
            let delta = pick_biased(&mut rng, &[0.02, -0.02, 0.0], -0.1, 0.1);
            let hard = rng.random_bool(0.1);
            mem.record_candidate(&p, j, sem, delta, hard);
            oracle.hit(j, sem, delta, hard);
            hits += 1;
            let r = mem.record_at(&key);
            let ok = r.visits == oracle.visits
                && r.best_score == oracle.best
                && r.best_semantic == oracle.best_sem
                && r.poor_hits == oracle.poor
                && r.promising_hits == oracle.promising
                && r.improvement_hits == oracle.improvement
                && r.stagnation_hits == oracle.stagnation
                && r.label() == oracle.label();
            ensure(ok, || {
                format!("sequence {s} step {step} (J={j}, sem={sem}, delta={delta}, hard={hard}): engine {r:?}, oracle {oracle:?}")
            })?;
            ensure(!was_dead || r.label() == RegionLabel::Dead, || {
                format!("sequence {s} step {step}: dead cell relabeled {:?}", r.label())
            })?;
            was_dead = r.label() == RegionLabel::Dead;
        }
        died += usize::from(oracle.dead);
        promising += usize::from(oracle.label() == RegionLabel::Promising);
    }
    Ok(format!(
        "{SEQUENCES} sequences, {hits} hits agree ({died} ended dead, {promising} ended promising)"
    ))
}

// ---------------------------------------------------------------------------
// budget and suppression

fn check_log_invariants(run: &Run, budget: usize) -> Result<(), String> {
    let log = &run.log;
    let tag = || format!("{} seed {}", run.mission_id, run.seed);
    ensure(log.budget.preview_requests <= budget, || {
        format!("{}: {} preview requests > {budget}", tag(), log.budget.preview_requests)
    })?;
    for (registered, zone) in zones_registered(log) {
        for r in log.rounds.iter().filter(|r| r.round > registered) {
            let positions = r
                .seeds
                .iter()
                .map(|s| ("seed", s.camera.position))
                .chain(r.proposals.iter().map(|p| ("proposal", p.camera.position)))
                .chain(r.candidates.iter().map(|c| ("candidate", c.camera.position)));
            for (kind, p) in positions {
                ensure(!oracle_in_zone(&zone, &p), || {
                    format!("{}: round {} {kind} at {p:?} inside zone from round {registered}", tag(), r.round)
                })?;
            }
        }
    }
    let mut last = f64::NEG_INFINITY;
    for r in &log.rounds {
        let before = r.incumbent_before.as_ref().map(|i| i.score()).unwrap_or(f64::NEG_INFINITY);
        let after = r.incumbent_after.as_ref().map(|i| i.score()).unwrap_or(f64::NEG_INFINITY);
        ensure(after >= before && after >= last, || {
            format!("{}: incumbent J fell to {after} in round {} (was {})", tag(), r.round, before.max(last))
        })?;
        last = after;
        let he: Vec<_> = r.seeds.iter().filter(|s| s.origin == SeedOrigin::HighExplore).collect();
        match r.high_explore_anchor {
            Some(a) => ensure(he.len() == 1 && he[0].anchor_index == Some(a), || {
                format!("{}: round {} high-explore anchor {a} but seeds {:?}", tag(), r.round, he)
            })?,
            None => ensure(he.is_empty(), || format!("{}: round {} stray high-explore seed", tag(), r.round))?,
        }
    }
    if let Some(f) = &log.final_result {
        ensure(f.incumbent_score == last, || format!("{}: final J {} vs last incumbent {last}", tag(), f.incumbent_score))?;
    }
    Ok(())
}

fn budget_and_suppression(runs: &SuiteRuns) -> Check {
    let full = &runs.by_method["full"];
    ensure(full.len() == 100, || format!("expected 100 runs, got {}", full.len()))?;
    let mut zones = 0;
    let mut max_previews = 0;
    for run in full {
        let cfg = &run.log.config;
        ensure(cfg.rounds == 6 && cfg.candidates == 4, || format!("unexpected config {cfg:?}"))?;
        check_log_invariants(run, 24)?;
        zones += zones_registered(&run.log).len();
        max_previews = max_previews.max(run.log.budget.preview_requests);
    }
    Ok(format!(
        "100 runs: max preview requests {max_previews} <= 24, {zones} zones registered, no candidate inside an active zone, incumbent J monotone"
    ))
}

// ---------------------------------------------------------------------------
// closed-loop value

fn closed_loop_value(runs: &SuiteRuns) -> Check {
    let means: BTreeMap<&str, f64> = ["full", "random_search", "single_step"]
        .into_iter()
        .map(|m| (m, mean(runs.by_method[m].iter().map(|r| r.m_qs))))
        .collect();
    let incomplete: usize = ["full", "random_search", "single_step"]
        .iter()
        .map(|m| runs.by_method[m].iter().filter(|r| !r.completed).count())
        .sum();
    let per_seed = |m: &str| -> Vec<String> {
        (0..RUN_SEEDS)
            .map(|s| format!("{:.3}", mean(runs.by_method[m].iter().filter(|r| r.seed == s).map(|r| r.m_qs))))
            .collect()
    };
    let detail = format!(
        "mean M_qs full {:.4} (per seed {:?}), random_search {:.4}, single_step {:.4}; {incomplete} incomplete runs; \
         all {} runs took {:.1}s",
        means["full"],
        per_seed("full"),
        means["random_search"],
        means["single_step"],
        runs.by_method.values().map(Vec::len).sum::<usize>(),
        runs.elapsed.as_secs_f64()
    );
    ensure(means["full"] > means["random_search"] && means["full"] > means["single_step"], || detail.clone())?;
    ensure(runs.elapsed < SUITE_TIME_LIMIT, || format!("too slow: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// clamp fuzzing

const FUZZ_KEYS: [&str; 24] = [
    "candidates",
    "seed_candidates",
    "camera",
    "rationale",
    "seed_origin",
    "step_scale",
    "explore_ratio_next",
    "failure_tags",
    "forbidden_zones",
    "center",
    "half_extent",
    "verdict",
    "per_dimension",
    "m1",
    "m2",
    "m3",
    "m4",
    "reasoning",
    "preferred_motion",
    "position",
    "look_at",
    "focal_mm",
    "aperture",
    "aspect",
];

const VERDICT_STRINGS: [&str; 9] = [
    "keep_incumbent",
    "take_challenger",
    "KeepIncumbent",
    "TakeChallenger",
    "take_challenger ",
    "TAKE_CHALLENGER",
    "challenger",
    "",
    "keep",
];

/// Advisor that answers every role with malformed or hostile documents.
/// Remembers, for the last compare call, which verdict a correct parser
/// must return (or `None` when the response carries no valid verdict).
struct FuzzAdvisor {
    rng: Mutex<ChaCha8Rng>,
    scene_radius: f64,
    aspect_set: Vec<AspectRatio>,
    last_verdict: Mutex<Option<Option<PairwiseVerdict>>>,
}

fn wild_number(rng: &mut ChaCha8Rng) -> Value {
    match rng.random_range(0..12) {
        0 => json!(-1e300),
        1 => json!(1e300),
        2 => json!(-0.0),
        3 => json!(0),
        4 => json!(i64::MIN),
        5 => json!(u64::MAX),
        6 => json!(rng.random_range(-5.0..5.0)),
        7 => json!(rng.random_range(0.0..1.0)),
        8 => json!(f64::NAN),
        9 => json!(rng.random_range(-1e6..1e6)),
        10 => json!("0.5"),
        _ => json!(rng.random_range(0.3..2.0)),
    }
}

fn junk(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..7) {
        0 => Value::Null,
        1 => Value::Bool(rng.random_bool(0.5)),
        2 => wild_number(rng),
        3 => {
            let s = *["", "16:9", "keep_incumbent", "nan", "orbit_left", "{", "null"].choose(rng).expect("non-empty");
            if rng.random_bool(0.2) {
                Value::from(s.repeat(300))
            } else {
                Value::from(s)
            }
        }
        4 if depth < 3 => Value::Array((0..rng.random_range(0..8)).map(|_| junk(rng, depth + 1)).collect()),
        5 if depth < 3 => {
            let mut m = Map::new();
            for _ in 0..rng.random_range(0..6) {
                m.insert(FUZZ_KEYS.choose(rng).expect("non-empty").to_string(), junk(rng, depth + 1));
            }
            Value::Object(m)
        }
        _ => wild_number(rng),
    }
}

impl FuzzAdvisor {
    fn new(seed: u64, scene_radius: f64, aspect_set: Vec<AspectRatio>) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            scene_radius,
            aspect_set,
            last_verdict: Mutex::new(None),
        }
    }

    fn vec3(&self, rng: &mut ChaCha8Rng) -> Value {
        match rng.random_range(0..6) {
            0 => json!([wild_number(rng), wild_number(rng), wild_number(rng)]),
            1 => json!([1.0, 2.0]),
            2 => junk(rng, 2),
            _ => {
                let r = self.scene_radius * 2.0;
                json!([rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(0.0..r)])
            }
        }
    }

    fn camera(&self, rng: &mut ChaCha8Rng) -> Value {
        if rng.random_bool(0.15) {
            return junk(rng, 1);
        }
        let aspect = if rng.random_bool(0.6) {
            Value::from(self.aspect_set.choose(rng).expect("non-empty").to_string())
        } else {
            Value::from(*["16:9", "1:1", "4:5", "21:9", "0:0", "wide", "3:2"].choose(rng).expect("non-empty"))
        };
        let focal = if rng.random_bool(0.7) { json!(rng.random_range(12.0..120.0)) } else { wild_number(rng) };
        let aperture = if rng.random_bool(0.7) { json!(5.6) } else { wild_number(rng) };
        let mut m = Map::new();
        for (k, v) in [
            ("position", self.vec3(rng)),
            ("look_at", self.vec3(rng)),
            ("focal_mm", focal),
            ("aperture", aperture),
            ("aspect", aspect),
        ] {
            if rng.random_bool(0.95) {
                m.insert(k.into(), v);
            }
        }
        Value::Object(m)
    }

    fn propose_doc(&self, rng: &mut ChaCha8Rng) -> Value {
        if rng.random_bool(0.2) {
            return junk(rng, 0);
        }
        let items: Vec<Value> = (0..rng.random_range(0..12))
            .map(|_| {
                if rng.random_bool(0.1) {
                    return junk(rng, 1);
                }
                let origin = if rng.random_bool(0.5) {
                    Value::from(*["anchor", "probe", "high_explore", "Incumbent", "teleport"].choose(rng).expect("non-empty"))
                } else {
                    junk(rng, 2)
                };
                json!({"camera": self.camera(rng), "rationale": junk(rng, 2), "seed_origin": origin})
            })
            .collect();
        json!({ "candidates": items })
    }

    fn review_doc(&self, rng: &mut ChaCha8Rng) -> Value {
        if rng.random_bool(0.2) {
            return junk(rng, 0);
        }
        let mut m = Map::new();
        for k in ["m1", "m2", "m3", "m4"] {
            if rng.random_bool(0.95) {
                m.insert(k.into(), wild_number(rng));
            }
        }
        m.insert("reasoning".into(), junk(rng, 2));
        Value::Object(m)
    }

    fn reflect_doc(&self, rng: &mut ChaCha8Rng) -> Value {
        if rng.random_bool(0.15) {
            return junk(rng, 0);
        }
        let tags: Vec<Value> = (0..rng.random_range(0..20))
            .map(|i| if rng.random_bool(0.8) { Value::from(format!("tag{i}").repeat(rng.random_range(1..40))) } else { junk(rng, 2) })
            .collect();
        let zones: Vec<Value> = (0..rng.random_range(0..7))
            .map(|_| {
                if rng.random_bool(0.15) {
                    junk(rng, 1)
                } else {
                    json!({"center": self.vec3(rng), "half_extent": [wild_number(rng), wild_number(rng), wild_number(rng)]})
                }
            })
            .collect();
        let cams: Vec<Value> = (0..rng.random_range(0..12)).map(|_| self.camera(rng)).collect();
        let mut m = Map::new();
        for (k, v) in [
            ("step_scale", wild_number(rng)),
            ("explore_ratio_next", wild_number(rng)),
            ("failure_tags", Value::Array(tags)),
            ("forbidden_zones", Value::Array(zones)),
            (if rng.random_bool(0.5) { "candidates" } else { "seed_candidates" }, Value::Array(cams)),
            ("preferred_motion", junk(rng, 2)),
            ("round_review", junk(rng, 2)),
        ] {
            if rng.random_bool(0.9) {
                m.insert(k.into(), v);
            }
        }
        Value::Object(m)
    }

    fn compare_doc(&self, rng: &mut ChaCha8Rng) -> (Value, Option<PairwiseVerdict>) {
        if rng.random_bool(0.2) {
            let doc = junk(rng, 0);
            let expected = doc.get("verdict").and_then(|v| match v.as_str() {
                Some("keep_incumbent") => Some(PairwiseVerdict::KeepIncumbent),
                Some("take_challenger") => Some(PairwiseVerdict::TakeChallenger),
                _ => None,
            });
            return (doc, expected);
        }
        let verdict = if rng.random_bool(0.8) {
            Value::from(*VERDICT_STRINGS.choose(rng).expect("non-empty"))
        } else {
            junk(rng, 2)
        };
        let expected = match verdict.as_str() {
            Some("keep_incumbent") => Some(PairwiseVerdict::KeepIncumbent),
            Some("take_challenger") => Some(PairwiseVerdict::TakeChallenger),
            _ => None,
        };
        (json!({"verdict": verdict, "per_dimension": junk(rng, 1)}), expected)
    }
}

impl Advisor for FuzzAdvisor {
    fn name(&self) -> &str {
        "fuzz"
    }

    fn call(&self, role: Role, _payload: &Value) -> Result<Value, AdvisorError> {
        let mut rng = self.rng.lock().expect("fuzz rng");
        let transport_error = rng.random_bool(0.08);
        let doc = match role {
            Role::Propose => self.propose_doc(&mut rng),
            Role::Review => self.review_doc(&mut rng),
            Role::Reflect => self.reflect_doc(&mut rng),
            Role::Compare => {
                let (doc, expected) = self.compare_doc(&mut rng);
                *self.last_verdict.lock().expect("verdict slot") = Some(if transport_error { None } else { expected });
                doc
            }
            Role::Blueprint | Role::FinalRatio => junk(&mut rng, 0),
        };
        if transport_error {
            Err(AdvisorError::Transport("fuzzed outage".into()))
        } else {
            Ok(doc)
        }
    }
}

fn clamp_violations(fb: &camsearch::advisors::RoundFeedback, h: f64, aspect_set: &[AspectRatio]) -> Option<String> {
    if !(STEP_SCALE_RANGE.0..=STEP_SCALE_RANGE.1).contains(&fb.step_scale) {
        return Some(format!("step_scale {}", fb.step_scale));
    }
    if !(EXPLORE_RATIO_RANGE.0..=EXPLORE_RATIO_RANGE.1).contains(&fb.explore_ratio_next) {
        return Some(format!("explore_ratio {}", fb.explore_ratio_next));
    }
    if fb.failure_tags.len() > MAX_FAILURE_TAGS || fb.failure_tags.iter().any(|t| t.chars().count() > 64) {
        return Some(format!("tags {:?}", fb.failure_tags));
    }
    if fb.forbidden_zones.len() > MAX_REVIEWER_ZONES {
        return Some(format!("{} zones", fb.forbidden_zones.len()));
    }
    for z in &fb.forbidden_zones {
        if !z.center.iter().all(|c| c.is_finite()) || !z.half_extent.iter().all(|c| *c >= 1e-3 * h && *c <= 2.0 * h) {
            return Some(format!("zone {z:?}"));
        }
    }
    if fb.seed_candidates.len() > MAX_SEED_CANDIDATES {
        return Some(format!("{} seeds", fb.seed_candidates.len()));
    }
    if let Some(c) = fb.seed_candidates.iter().find(|c| c.validate_in(aspect_set).is_err()) {
        return Some(format!("invalid seed {c:?}"));
    }
    None
}

fn clamp_fuzzing() -> Check {
    const RESPONSES: usize = 10_000;
    let item = generate_suite(1, SUITE_SEED).swap_remove(0);
    let scene = Arc::new(item.scene.clone());
    let stub = StubAdvisor::new(scene.clone());
    let base = run_search(item.mission.clone(), scene.clone(), SearchConfig::default(), &stub, &BoxRasterizer, None)
        .map_err(|e| format!("reference run failed: {e}"))?
        .log;
    let h = base.cell_size;
    let aspect_set = item.mission.aspect_set.clone();
    let digests: Vec<_> = base.rounds.iter().flat_map(|r| r.candidates.iter().filter_map(|c| c.digest())).collect();
    ensure(digests.len() >= 2, || "reference run rendered fewer than two candidates".into())?;
    let seed_sets: Vec<_> = base.rounds.iter().map(|r| r.seeds.clone()).filter(|s| !s.is_empty()).collect();
    let radius = scene.objects().iter().map(|o| o.center().norm()).fold(5.0, f64::max);
    let adv = FuzzAdvisor::new(0xf022, radius, aspect_set.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0xf023);

    let (mut proposal_fallbacks, mut verdicts_parsed, mut verdicts_kept, mut neutral_feedback) = (0, 0, 0, 0);
    for i in 0..RESPONSES {
        match i % 4 {
            0 => {
                let seeds = seed_sets.choose(&mut rng).expect("non-empty").clone();
                let mut zones: Vec<ForbiddenZone> = (0..rng.random_range(0..4))
                    .map(|_| ForbiddenZone {
                        center: rand_vec(&mut rng, radius * 2.0),
                        half_extent: Vec3::repeat(rng.random_range(0.5..2.0) * h),
                        origin: ZoneOrigin::Reviewer,
                    })
                    .collect();
                zones.retain(|z| !seeds.iter().any(|s| z.contains(&s.camera.position)));
                let k = rng.random_range(1..=4);
                let req = ProposeRequest {
                    round: 1 + i % 6,
                    k,
                    seeds,
                    blueprint: base.blueprint.clone(),
                    last_feedback: None,
                    aspect_set: aspect_set.clone(),
                    forbidden_zones: zones.clone(),
                    cell_size: h,
                    step_scale: rng.random_range(0.4..1.8),
                };
                let batch = propose(&adv, &req, Some(&scene), &mut rng);
                ensure(batch.proposals.len() == k, || format!("response {i}: {} proposals for k={k}", batch.proposals.len()))?;
                for p in &batch.proposals {
                    p.camera
                        .validate_in(&aspect_set)
                        .map_err(|e| format!("response {i}: invalid proposal {:?}: {e}", p.camera))?;
                    ensure(!inside_any(&zones, &p.camera.position), || {
                        format!("response {i}: proposal inside a forbidden zone")
                    })?;
                    ensure(p.rationale.chars().count() <= 500, || format!("response {i}: rationale too long"))?;
                }
                proposal_fallbacks += batch.fallback_count;
            }
            1 => {
                let d = digests.choose(&mut rng).expect("non-empty");
                let req = ReviewRequest {
                    camera: d.camera,
                    image_path: None,
                    width: 640,
                    height: 360,
                    instruction: item.mission.instruction.clone(),
                    eval_spec: item.mission.eval_spec.clone(),
                    blueprint: base.blueprint.clone(),
                    scale_band: base.scale_band,
                };
                let r = review_image(&adv, &req);
                for v in [r.m3, r.m4, r.m5, r.m6] {
                    ensure((0.0..=1.0).contains(&v), || format!("response {i}: review score {v}"))?;
                }
            }
            2 => {
                let n = rng.random_range(1..=digests.len().min(4));
                let req = ReflectRequest {
                    round: 1 + i % 6,
                    candidates: digests.choose_multiple(&mut rng, n).cloned().collect(),
                    incumbent: digests.choose(&mut rng).cloned(),
                    blueprint: base.blueprint.clone(),
                    scale_band: base.scale_band,
                    cell_size: h,
                    aspect_set: aspect_set.clone(),
                };
                let fb = reflect_round(&adv, &req);
                if let Some(v) = clamp_violations(&fb, h, &aspect_set) {
                    return Err(format!("response {i}: {v}"));
                }
                neutral_feedback += usize::from(fb.step_scale == 1.0 && fb.explore_ratio_next == 0.35);
            }
            _ => {
                let pair: Vec<_> = digests.choose_multiple(&mut rng, 2).cloned().collect();
                let req = CompareRequest {
                    incumbent: pair[0].clone(),
                    challenger: pair[1].clone(),
                };
                let d = compare_pairwise(&adv, &req);
                let expected = adv.last_verdict.lock().expect("verdict slot").take().expect("compare was called");
                match expected {
                    Some(v) => {
                        ensure(d.verdict == v && !d.fallback_used, || format!("response {i}: valid {v:?} parsed as {d:?}"))?;
                        verdicts_parsed += 1;
                    }
                    None => {
                        ensure(d.verdict == PairwiseVerdict::KeepIncumbent && d.fallback_used, || {
                            format!("response {i}: unparseable verdict gave {d:?}")
                        })?;
                        verdicts_kept += 1;
                    }
                }
            }
        }
    }

    let mut e2e = 0;
    for (idx, it) in generate_suite(6, SUITE_SEED + 1).into_iter().enumerate() {
        let scene = Arc::new(it.scene.clone());
        let adv = FuzzAdvisor::new(idx as u64, radius, it.mission.aspect_set.clone());
        let cfg = SearchConfig {
            seed: idx as u64,
            ..Default::default()
        };
        let log = match run_search(it.mission.clone(), scene, cfg, &adv, &BoxRasterizer, None) {
            Ok(f) => f.log,
            Err(SearchError::MissionFailed { log, .. }) => *log,
            Err(e) => return Err(format!("fuzzed run {idx}: {e}")),
        };
        ensure(log.budget.preview_requests <= 24, || format!("fuzzed run {idx}: {} previews", log.budget.preview_requests))?;
        for r in &log.rounds {
            if let Some(v) = clamp_violations(&r.feedback, log.cell_size, &it.mission.aspect_set) {
                return Err(format!("fuzzed run {idx} round {}: {v}", r.round));
            }
            for c in &r.candidates {
                c.camera
                    .validate_in(&it.mission.aspect_set)
                    .map_err(|e| format!("fuzzed run {idx}: invalid candidate: {e}"))?;
            }
        }
        for (registered, zone) in zones_registered(&log) {
            for r in log.rounds.iter().filter(|r| r.round > registered) {
                ensure(!r.candidates.iter().any(|c| oracle_in_zone(&zone, &c.camera.position)), || {
                    format!("fuzzed run {idx}: candidate inside a zone in round {}", r.round)
                })?;
            }
        }
        e2e += 1;
    }
    Ok(format!(
        "{RESPONSES} fuzzed responses, 0 violations ({proposal_fallbacks} fallback proposals, {neutral_feedback} neutral feedbacks, \
         {verdicts_parsed} valid verdicts honored, {verdicts_kept} unparseable kept the incumbent); {e2e} fuzzed end-to-end runs within budget"
    ))
}

// ---------------------------------------------------------------------------
// determinism

fn dir_contents(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let item = generate_suite(SUITE_SIZE, SUITE_SEED).swap_remove(4);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut contents = Vec::new();
    for tag in ["a", "b"] {
        let out = tmp.path().join(tag);
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let scene = Arc::new(item.scene.clone());
        let adv = StubAdvisor::new(scene.clone());
        let cfg = SearchConfig {
            seed: 17,
            ..Default::default()
        };
        run_search(item.mission.clone(), scene, cfg, &adv, &BoxRasterizer, Some(&out)).map_err(|e| e.to_string())?;
        contents.push(dir_contents(&out).map_err(|e| e.to_string())?);
    }
    let (a, b) = (&contents[0], &contents[1]);
    ensure(a.contains_key("run_log.json") && a.contains_key("final.png"), || {
        format!("missing artifacts: {:?}", a.keys().collect::<Vec<_>>())
    })?;
    ensure(a.keys().eq(b.keys()), || "runs wrote different file sets".into())?;
    for (name, bytes) in a {
        ensure(bytes == &b[name], || format!("{name} differs between runs"))?;
    }
    let total: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} files ({total} bytes) byte-identical, including run_log.json and final.png", a.len()))
}

// ---------------------------------------------------------------------------
// ablations

fn ablations(runs: &SuiteRuns) -> Check {
    let mut parts = Vec::new();
    for m in ["no_region_memory", "no_high_explore"] {
        let rs = &runs.by_method[m];
        let done = rs.iter().filter(|r| r.completed).count();
        ensure(rs.len() == 100 && done == rs.len(), || format!("{m}: {done}/{} runs completed", rs.len()))?;
        for r in rs {
            check_log_invariants(r, 24).map_err(|e| format!("{m}: {e}"))?;
        }
        parts.push(format!("{m} completed {done}/{}", rs.len()));
    }
    let diag = |m: &str| {
        let rs = &runs.by_method[m];
        let ds: Vec<_> = rs.iter().filter_map(|r| r.log.diagnostics).collect();
        (mean(ds.iter().map(|d| d.coverage)), mean(ds.iter().map(|d| d.revisit)), ds.len())
    };
    let (fc, fr, fn_) = diag("full");
    let (nc, nr, nn) = diag("no_high_explore");
    let detail = format!(
        "{}; coverage full {fc:.3} vs no_high_explore {nc:.3}, revisit {fr:.3} vs {nr:.3} (n={fn_}/{nn})",
        parts.join(", ")
    );
    ensure(fn_ == 100 && nn == 100, || format!("missing diagnostics: {detail}"))?;
    ensure(nc < fc && nr > fr, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn main() {
    let mut results: Vec<(&str, Result<String, String>)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match &r {
            Ok(d) => println!("[PASS] {name}: {d}"),
            Err(d) => println!("[FAIL] {name}: {d}"),
        }
        results.push((name, r));
    };

    record("internal score regression", &mut internal_score_regression);
    record("high-explore oracle", &mut high_explore_oracle);
    record("published composite consistency", &mut published_composites);
    record("m2 formula", &mut m2_formula);
    record("region state machine", &mut region_state_machine);

    let runs = catch_unwind(suite_runs).map_err(|_| "suite runs panicked".to_string());
    let with_runs = |f: fn(&SuiteRuns) -> Check| -> Check {
        match &runs {
            Ok(r) => f(r),
            Err(e) => Err(e.clone()),
        }
    };
    record("budget and suppression", &mut || with_runs(budget_and_suppression));
    record("closed-loop value", &mut || with_runs(closed_loop_value));
    record("clamp fuzzing", &mut clamp_fuzzing);
    record("determinism", &mut determinism);
    record("ablation runnability", &mut || with_runs(ablations));

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
