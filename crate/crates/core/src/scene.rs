//! Box-decomposed scenes and the scouting summaries derived from them.
//!
//! A scene is a list of named axis-aligned boxes. Everything downstream
//! (projection, anchors, rendering) works from these boxes only. The scene
//! file is JSON with a `format_version` field; see [`SceneFile`].

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Occupancy grid resolution used to find open regions.
pub const OPEN_GRID: [usize; 3] = [8, 8, 4];

/// Maximum number of open-region centers reported.
const MAX_OPEN_REGIONS: usize = 4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("object `{object}` is missing field `{field}`")]
    MissingField { object: String, field: &'static str },
    #[error("object `{object}` is invalid: {reason}")]
    InvalidObject { object: String, reason: String },
    #[error("duplicate object id `{0}`")]
    DuplicateId(String),
    #[error("scene has no objects")]
    Empty,
    #[error("unsupported scene format_version {0} (expected {SCENE_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("scene bounding box is degenerate (scene_scale = 0)")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub label: String,
    pub aabb_min: Vec3,
    pub aabb_max: Vec3,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, label: impl Into<String>, min: Vec3, max: Vec3) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            aabb_min: min,
            aabb_max: max,
            tags: BTreeSet::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.aabb_min, self.aabb_max)
    }

    pub fn center(&self) -> Vec3 {
        self.aabb().center()
    }
}

/// Immutable scene with derived bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    objects: Vec<SceneObject>,
    scene_aabb: Aabb,
    scene_scale: f64,
}

/// On-disk form of a scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub format_version: u32,
    pub objects: Vec<SceneObject>,
}

#[derive(Deserialize)]
struct RawScene {
    format_version: Option<u32>,
    objects: Option<Vec<RawObject>>,
}

#[derive(Deserialize)]
struct RawObject {
    id: Option<String>,
    label: Option<String>,
    aabb_min: Option<[f64; 3]>,
    aabb_max: Option<[f64; 3]>,
    tags: Option<Vec<String>>,
}

impl SceneModel {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        if objects.is_empty() {
            return Err(SceneError::Empty);
        }
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id.as_str()) {
                return Err(SceneError::DuplicateId(o.id.clone()));
            }
            if o.id.is_empty() {
                return Err(SceneError::InvalidObject {
                    object: o.id.clone(),
                    reason: "empty id".into(),
                });
            }
            if !crate::geometry::is_finite(&o.aabb_min) || !crate::geometry::is_finite(&o.aabb_max) {
                return Err(SceneError::InvalidObject {
                    object: o.id.clone(),
                    reason: "non-finite coordinates".into(),
                });
            }
            if (0..3).any(|i| o.aabb_min[i] > o.aabb_max[i]) {
                return Err(SceneError::InvalidObject {
                    object: o.id.clone(),
                    reason: "aabb_min exceeds aabb_max".into(),
                });
            }
        }
        let scene_aabb = objects
            .iter()
            .skip(1)
            .fold(objects[0].aabb(), |acc, o| acc.union(&o.aabb()));
        let scene_scale = scene_aabb.max_edge();
        if scene_scale <= 0.0 {
            return Err(SceneError::Degenerate);
        }
        Ok(Self {
            objects,
            scene_aabb,
            scene_scale,
        })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn scene_aabb(&self) -> Aabb {
        self.scene_aabb
    }

    pub fn scene_scale(&self) -> f64 {
        self.scene_scale
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Mean of object centers.
    pub fn centroid(&self) -> Vec3 {
        let sum = self.objects.iter().fold(Vec3::zeros(), |a, o| a + o.center());
        sum / self.objects.len() as f64
    }

    /// True when `p` lies strictly inside any object box.
    pub fn point_inside_any(&self, p: &Vec3) -> bool {
        self.objects.iter().any(|o| o.aabb().contains_strict(p))
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            format_version: SCENE_FORMAT_VERSION,
            objects: self.objects.clone(),
        }
    }

    /// Canonical serialized form (pretty JSON, file order preserved).
    pub fn to_canonical_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scene serializes")
    }
}

pub fn parse_scene(text: &str) -> Result<SceneModel, SceneError> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let version = raw.format_version.ok_or(SceneError::MissingField {
        object: "<scene>".into(),
        field: "format_version",
    })?;
    if version != SCENE_FORMAT_VERSION {
        return Err(SceneError::UnsupportedVersion(version));
    }
    let raw_objects = raw.objects.ok_or(SceneError::MissingField {
        object: "<scene>".into(),
        field: "objects",
    })?;
    let mut objects = Vec::with_capacity(raw_objects.len());
    for (idx, r) in raw_objects.into_iter().enumerate() {
        let id = r.id.ok_or_else(|| SceneError::MissingField {
            object: format!("#{idx}"),
            field: "id",
        })?;
        let missing = |field| SceneError::MissingField {
            object: id.clone(),
            field,
        };
        let min = r.aabb_min.ok_or_else(|| missing("aabb_min"))?;
        let max = r.aabb_max.ok_or_else(|| missing("aabb_max"))?;
        objects.push(SceneObject {
            label: r.label.unwrap_or_else(|| id.clone()),
            aabb_min: Vec3::from(min),
            aabb_max: Vec3::from(max),
            tags: r.tags.unwrap_or_default().into_iter().collect(),
            id,
        });
    }
    SceneModel::new(objects)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneModel, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scene(&text)
}

pub fn save_scene(scene: &SceneModel, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, scene.to_canonical_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub id: String,
    pub label: String,
    pub center: Vec3,
    pub extent: Vec3,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricSummary {
    pub objects: Vec<ObjectSummary>,
    pub scene_min: Vec3,
    pub scene_max: Vec3,
    pub scene_scale: f64,
}

/// Per-object centers, extents and volumes ordered by id.
pub fn geometric_summary(scene: &SceneModel) -> GeometricSummary {
    let mut objects: Vec<ObjectSummary> = scene
        .objects
        .iter()
        .map(|o| {
            let b = o.aabb();
            ObjectSummary {
                id: o.id.clone(),
                label: o.label.clone(),
                center: b.center(),
                extent: b.extent(),
                volume: b.volume(),
            }
        })
        .collect();
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    GeometricSummary {
        objects,
        scene_min: scene.scene_aabb.min,
        scene_max: scene.scene_aabb.max,
        scene_scale: scene.scene_scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerticalStructure {
    Flat,
    Layered,
    Tower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    /// All object ids ranked by volume, largest first.
    pub dominant_objects: Vec<String>,
    pub foreground_ids: Vec<String>,
    pub background_ids: Vec<String>,
    pub vertical_structure: VerticalStructure,
    /// Centroids of connected open regions, largest region first.
    pub open_regions: Vec<Vec3>,
}

pub fn topology_summary(scene: &SceneModel) -> TopologySummary {
    let mut dominant: Vec<&SceneObject> = scene.objects.iter().collect();
    dominant.sort_by(|a, b| {
        b.aabb()
            .volume()
            .total_cmp(&a.aabb().volume())
            .then_with(|| a.id.cmp(&b.id))
    });

    let centroid = scene.centroid();
    let mut dists: Vec<(f64, &SceneObject)> = scene
        .objects
        .iter()
        .map(|o| ((o.center() - centroid).norm(), o))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    // lower median; ties at the median go to the foreground
    let median = dists[(dists.len() - 1) / 2].0;
    let (fg, bg): (Vec<_>, Vec<_>) = dists.iter().partition(|(d, _)| *d <= median + 1e-12);

    TopologySummary {
        dominant_objects: dominant.iter().map(|o| o.id.clone()).collect(),
        foreground_ids: fg.iter().map(|(_, o)| o.id.clone()).collect(),
        background_ids: bg.iter().map(|(_, o)| o.id.clone()).collect(),
        vertical_structure: vertical_structure(scene),
        open_regions: open_regions(scene),
    }
}

fn vertical_structure(scene: &SceneModel) -> VerticalStructure {
    let bounds = scene.scene_aabb;
    let height = bounds.extent().z;
    if height <= 0.0 {
        return VerticalStructure::Flat;
    }
    let tower = scene.objects.iter().any(|o| {
        let e = o.aabb().extent();
        e.z > 3.0 * e.x.max(e.y) && e.z > 0.5 * height
    });
    if tower {
        return VerticalStructure::Tower;
    }
    let zs: Vec<f64> = scene.objects.iter().map(|o| o.center().z).collect();
    let lo = zs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bands: BTreeSet<usize> = zs
        .iter()
        .map(|z| (((z - bounds.min.z) / (height / 4.0)).floor() as usize).min(3))
        .collect();
    if hi - lo > 0.5 * height && bands.len() >= 3 {
        VerticalStructure::Layered
    } else {
        VerticalStructure::Flat
    }
}

fn axis_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
    if a1 - a0 <= 0.0 || b1 - b0 <= 0.0 {
        a0 <= b1 && b0 <= a1
    } else {
        a0 < b1 && b0 < a1
    }
}

/// Centroids of the connected components of unoccupied grid cells.
fn open_regions(scene: &SceneModel) -> Vec<Vec3> {
    let bounds = scene.scene_aabb;
    let [nx, ny, nz] = OPEN_GRID;
    let ext = bounds.extent();
    let cell = Vec3::new(ext.x / nx as f64, ext.y / ny as f64, ext.z / nz as f64);
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;

    let mut open = vec![false; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let lo = bounds.min + Vec3::new(i as f64 * cell.x, j as f64 * cell.y, k as f64 * cell.z);
                let hi = lo + cell;
                let hit = scene.objects.iter().any(|o| {
                    (0..3).all(|a| axis_overlap(lo[a], hi[a], o.aabb_min[a], o.aabb_max[a]))
                });
                open[idx(i, j, k)] = !hit;
            }
        }
    }

    let mut seen = vec![false; open.len()];
    let mut components: Vec<(usize, usize, Vec3)> = Vec::new();
    for start in 0..open.len() {
        if !open[start] || seen[start] {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut sum = Vec3::zeros();
        let mut count = 0usize;
        while let Some(c) = queue.pop_front() {
            let (i, j, k) = (c % nx, (c / nx) % ny, c / (nx * ny));
            sum += bounds.min
                + Vec3::new(
                    (i as f64 + 0.5) * cell.x,
                    (j as f64 + 0.5) * cell.y,
                    (k as f64 + 0.5) * cell.z,
                );
            count += 1;
            let mut push = |ii: usize, jj: usize, kk: usize| {
                let n = idx(ii, jj, kk);
                if open[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                push(i - 1, j, k);
            }
            if i + 1 < nx {
                push(i + 1, j, k);
            }
            if j > 0 {
                push(i, j - 1, k);
            }
            if j + 1 < ny {
                push(i, j + 1, k);
            }
            if k > 0 {
                push(i, j, k - 1);
            }
            if k + 1 < nz {
                push(i, j, k + 1);
            }
        }
        components.push((count, start, sum / count as f64));
    }
    components.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    components
        .into_iter()
        .take(MAX_OPEN_REGIONS)
        .map(|(_, _, c)| c)
        .collect()
}
