//! Region memory: cubic cells over camera-position space with visit and
//! score statistics, unknown/promising/dead labels, and forbidden zones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("scene scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("diagnostics need at least one candidate")]
    EmptyRun,
}

/// Cell side length `max(0.12 * scene_scale, 0.9)`.
pub fn cell_size(scene_scale: f64) -> Result<f64, MemoryError> {
    if !(scene_scale > 0.0) {
        return Err(MemoryError::NonPositiveScale(scene_scale));
    }
    Ok((0.12 * scene_scale).max(0.9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionKey(pub i64, pub i64, pub i64);

impl RegionKey {
    pub fn of(position: &Vec3, h: f64) -> RegionKey {
        RegionKey(
            (position.x / h).floor() as i64,
            (position.y / h).floor() as i64,
            (position.z / h).floor() as i64,
        )
    }

    pub fn bounds(&self, h: f64) -> Aabb {
        let min = Vec3::new(self.0 as f64, self.1 as f64, self.2 as f64) * h;
        Aabb::new(min, min + Vec3::repeat(h))
    }

    pub fn center(&self, h: f64) -> Vec3 {
        self.bounds(h).center()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLabel {
    #[default]
    Unknown,
    Promising,
    Dead,
}

/// Numeric triggers for hit classification and labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectorThresholds {
    pub poor_score: f64,
    pub promising_score: f64,
    pub promising_semantic: f64,
    pub improvement_delta: f64,
    pub dead_poor_hits: u32,
    pub dead_best_guard: f64,
    pub dead_stagnation_hits: u32,
}

impl Default for ReflectorThresholds {
    fn default() -> Self {
        Self {
            poor_score: 0.40,
            promising_score: 0.68,
            promising_semantic: 0.70,
            improvement_delta: 0.02,
            dead_poor_hits: 2,
            dead_best_guard: 0.45,
            dead_stagnation_hits: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionRecord {
    pub visits: u32,
    pub best_score: f64,
    pub best_semantic: f64,
    pub poor_hits: u32,
    pub promising_hits: u32,
    pub improvement_hits: u32,
    pub stagnation_hits: u32,
    label: RegionLabel,
}

impl RegionRecord {
    pub fn label(&self) -> RegionLabel {
        self.label
    }

    /// Applies one rendered candidate and relabels.
    fn record(&mut self, score: f64, semantic: f64, round_delta: f64, hard_failed: bool, t: &ReflectorThresholds) {
        self.visits += 1;
        self.best_score = self.best_score.max(score);
        self.best_semantic = self.best_semantic.max(semantic);
        if score < t.poor_score || hard_failed {
            self.poor_hits += 1;
        }
        let promising = score >= t.promising_score || semantic >= t.promising_semantic;
        if promising {
            self.promising_hits += 1;
        }
        if round_delta > t.improvement_delta {
            self.improvement_hits += 1;
        }
        if round_delta.abs() <= t.improvement_delta && !promising {
            self.stagnation_hits += 1;
        }
        self.label = relabel(self, t);
    }
}

/// Label implied by a record's statistics. Dead is absorbing.
pub fn relabel(r: &RegionRecord, t: &ReflectorThresholds) -> RegionLabel {
    if r.label == RegionLabel::Dead {
        return RegionLabel::Dead;
    }
    let poor_dead = r.poor_hits >= t.dead_poor_hits && r.best_score < t.dead_best_guard;
    let stale_dead = r.stagnation_hits >= t.dead_stagnation_hits && r.improvement_hits == 0;
    if poor_dead || stale_dead {
        RegionLabel::Dead
    } else if r.promising_hits > 0 || r.best_score >= t.promising_score || r.best_semantic >= t.promising_semantic {
        RegionLabel::Promising
    } else {
        RegionLabel::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneOrigin {
    ReflectorDead,
    Reviewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenZone {
    pub center: Vec3,
    pub half_extent: Vec3,
    pub origin: ZoneOrigin,
}

impl ForbiddenZone {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_half(self.center, self.half_extent)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.aabb().contains(p)
    }
}

pub fn inside_any(zones: &[ForbiddenZone], p: &Vec3) -> bool {
    zones.iter().any(|z| z.contains(p))
}

/// Serialized snapshot entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSnapshot {
    pub key: RegionKey,
    pub record: RegionRecord,
}

/// Spatial memory over camera positions. Disabled memory behaves as if every
/// cell were unknown with zero statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMemory {
    h: f64,
    enabled: bool,
    thresholds: ReflectorThresholds,
    cells: BTreeMap<RegionKey, RegionRecord>,
}

impl RegionMemory {
    pub fn new(h: f64, thresholds: ReflectorThresholds, enabled: bool) -> Self {
        Self {
            h,
            enabled,
            thresholds,
            cells: BTreeMap::new(),
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.h
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn thresholds(&self) -> &ReflectorThresholds {
        &self.thresholds
    }

    pub fn key(&self, p: &Vec3) -> RegionKey {
        RegionKey::of(p, self.h)
    }

    pub fn record_at(&self, key: &RegionKey) -> RegionRecord {
        self.cells.get(key).copied().unwrap_or_default()
    }

    pub fn label_at(&self, p: &Vec3) -> RegionLabel {
        self.record_at(&self.key(p)).label
    }

    pub fn record_candidate(&mut self, position: &Vec3, score: f64, semantic: f64, round_delta: f64, hard_failed: bool) {
        if !self.enabled {
            return;
        }
        let key = self.key(position);
        let t = self.thresholds;
        self.cells
            .entry(key)
            .or_default()
            .record(score, semantic, round_delta, hard_failed, &t);
    }

    pub fn cells_with(&self, label: RegionLabel) -> impl Iterator<Item = (&RegionKey, &RegionRecord)> {
        self.cells.iter().filter(move |(_, r)| r.label == label)
    }

    pub fn snapshot(&self) -> Vec<CellSnapshot> {
        self.cells
            .iter()
            .map(|(k, r)| CellSnapshot { key: *k, record: *r })
            .collect()
    }

    /// Zones for every dead cell followed by `reviewer_zones`, dropping any
    /// zone that overlaps an earlier one by at least 90% of the smaller volume.
    pub fn forbidden_zones(&self, reviewer_zones: &[ForbiddenZone]) -> Vec<ForbiddenZone> {
        let dead = self.cells_with(RegionLabel::Dead).map(|(k, _)| ForbiddenZone {
            center: k.center(self.h),
            half_extent: Vec3::repeat(self.h * 0.5),
            origin: ZoneOrigin::ReflectorDead,
        });
        dedup_zones(dead.chain(reviewer_zones.iter().copied()))
    }
}

pub fn dedup_zones(zones: impl IntoIterator<Item = ForbiddenZone>) -> Vec<ForbiddenZone> {
    let mut out: Vec<ForbiddenZone> = Vec::new();
    for z in zones {
        let zb = z.aabb();
        let dup = out.iter().any(|o| {
            let ob = o.aabb();
            let smaller = zb.volume().min(ob.volume());
            smaller > 0.0 && zb.intersection_volume(&ob) >= 0.9 * smaller
        });
        if !dup {
            out.push(z);
        }
    }
    out
}

/// Log-derived search diagnostics. Definitions are artifact-specific:
/// coverage = distinct cells / candidates, revisit = 1 - coverage, collapse =
/// share of multi-candidate rounds whose candidates all fall in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub coverage: f64,
    pub collapse: f64,
    pub revisit: f64,
    pub candidates: usize,
    pub distinct_cells: usize,
}

pub fn search_diagnostics(rounds: &[Vec<RegionKey>]) -> Result<SearchDiagnostics, MemoryError> {
    let total: usize = rounds.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(MemoryError::EmptyRun);
    }
    let distinct: BTreeSet<&RegionKey> = rounds.iter().flatten().collect();
    let coverage = distinct.len() as f64 / total as f64;
    let multi: Vec<&Vec<RegionKey>> = rounds.iter().filter(|r| r.len() >= 2).collect();
    let collapsed = multi.iter().filter(|r| r.iter().all(|k| *k == r[0])).count();
    let collapse = if multi.is_empty() {
        0.0
    } else {
        collapsed as f64 / multi.len() as f64
    };
    Ok(SearchDiagnostics {
        coverage,
        collapse,
        revisit: 1.0 - coverage,
        candidates: total,
        distinct_cells: distinct.len(),
    })
}
