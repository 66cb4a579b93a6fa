//! Post-hoc evaluation: the external quality composite, success rate,
//! common-completed filtering, baseline policies and aggregate reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisors::{Advisor, CandidateProposal, RoundFeedback, SeedOrigin};
use crate::blueprint::{default_aspect, MissionCategory, MissionSpec};
use crate::camera::{CameraState, FOCAL_RANGE};
use crate::geometry::Vec3;
use crate::memory::SearchDiagnostics;
use crate::render::RenderBackend;
use crate::scene::SceneModel;
use crate::search::{
    anchors_by_prior, run_session, CandidateRecord, FinalResult, IncumbentRecord, RoundRecord, RunLog, SearchConfig,
    SearchError, Session,
};

/// Weights on (aesthetic, quality, structure).
pub const QS_WEIGHTS: [f64; 3] = [0.40, 0.20, 0.40];
pub const SUCCESS_THRESHOLD: f64 = 0.55;
pub const RANDOM_SEARCH_BUDGET: usize = 24;
/// Random-search positions are drawn from the scene box scaled by this.
pub const RANDOM_BOX_SCALE: f64 = 1.5;
const RANDOM_FOCAL: (f64, f64) = (24.0, 70.0);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score {field} = {value} is outside [0, 1]")]
    InvalidScore { field: &'static str, value: f64 },
    #[error("no completed results to evaluate")]
    EmptyResults,
    #[error("common-completed filtering needs at least 2 methods, got {0}")]
    TooFewMethods(usize),
    #[error("unknown baseline policy {0:?}")]
    UnknownPolicy(String),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub iaa: f64,
    pub iqa: f64,
    pub ista: f64,
    pub source: String,
}

impl ExternalScores {
    pub fn new(iaa: f64, iqa: f64, ista: f64, source: impl Into<String>) -> Result<Self, EvalError> {
        let s = Self {
            iaa,
            iqa,
            ista,
            source: source.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (field, value) in [("iaa", self.iaa), ("iqa", self.iqa), ("ista", self.ista)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvalError::InvalidScore { field, value });
            }
        }
        Ok(())
    }
}

pub fn quality_composite(s: &ExternalScores) -> f64 {
    QS_WEIGHTS[0] * s.iaa + QS_WEIGHTS[1] * s.iqa + QS_WEIGHTS[2] * s.ista
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub mission_id: String,
    pub category: Option<MissionCategory>,
    pub method: String,
    pub completed: bool,
    pub failure_category: Option<String>,
    pub scores: Option<ExternalScores>,
    pub diagnostics: Option<SearchDiagnostics>,
}

impl TaskResult {
    pub fn m_qs(&self) -> Option<f64> {
        self.scores.as_ref().filter(|_| self.completed).map(quality_composite)
    }

    pub fn failed(mission_id: &str, method: &str, category: Option<MissionCategory>, why: &str) -> Self {
        Self {
            mission_id: mission_id.into(),
            category,
            method: method.into(),
            completed: false,
            failure_category: Some(why.into()),
            scores: None,
            diagnostics: None,
        }
    }
}

/// Fraction of completed results with composite at or above `threshold`.
pub fn success_at(results: &[TaskResult], threshold: f64) -> Result<f64, EvalError> {
    let qs: Vec<f64> = results.iter().filter_map(TaskResult::m_qs).collect();
    if qs.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    Ok(qs.iter().filter(|&&q| q >= threshold).count() as f64 / qs.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: Vec<String>,
    /// mission id to (method to failure category) for every excluded mission.
    pub excluded: BTreeMap<String, BTreeMap<String, String>>,
    /// Retained missions per category.
    pub category_balance: BTreeMap<String, usize>,
}

/// Keeps the missions every method completed. Missions absent from a
/// method's results count as failed for that method.
pub fn common_completed_filter(by_method: &BTreeMap<String, Vec<TaskResult>>) -> Result<FilterReport, EvalError> {
    if by_method.len() < 2 {
        return Err(EvalError::TooFewMethods(by_method.len()));
    }
    Ok(filter_unchecked(by_method))
}

fn filter_unchecked(by_method: &BTreeMap<String, Vec<TaskResult>>) -> FilterReport {
    let mut categories: BTreeMap<&str, MissionCategory> = BTreeMap::new();
    let mut all: BTreeSet<&str> = BTreeSet::new();
    for r in by_method.values().flatten() {
        all.insert(&r.mission_id);
        if let Some(c) = r.category {
            categories.entry(&r.mission_id).or_insert(c);
        }
    }
    let mut report = FilterReport::default();
    for c in MissionCategory::ALL {
        report.category_balance.insert(c.name().into(), 0);
    }
    for id in all {
        let mut failures = BTreeMap::new();
        for (method, results) in by_method {
            match results.iter().find(|r| r.mission_id == id) {
                Some(r) if r.m_qs().is_some() => {}
                Some(r) => {
                    failures.insert(method.clone(), r.failure_category.clone().unwrap_or_else(|| "unscored".into()));
                }
                None => {
                    failures.insert(method.clone(), "missing".into());
                }
            }
        }
        if failures.is_empty() {
            report.retained.push(id.to_string());
            if let Some(c) = categories.get(id) {
                *report.category_balance.entry(c.name().into()).or_default() += 1;
            }
        } else {
            report.excluded.insert(id.to_string(), failures);
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    SingleStep,
    SingleChain,
    AnchorBestOfN,
    RandomSearch,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 4] = [
        BaselinePolicy::SingleStep,
        BaselinePolicy::SingleChain,
        BaselinePolicy::AnchorBestOfN,
        BaselinePolicy::RandomSearch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselinePolicy::SingleStep => "single_step",
            BaselinePolicy::SingleChain => "single_chain",
            BaselinePolicy::AnchorBestOfN => "anchor_best_of_n",
            BaselinePolicy::RandomSearch => "random_search",
        }
    }
}

impl FromStr for BaselinePolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anchor_bon" => Ok(BaselinePolicy::AnchorBestOfN),
            "random" => Ok(BaselinePolicy::RandomSearch),
            _ => Self::ALL
                .into_iter()
                .find(|p| p.name() == s)
                .ok_or_else(|| EvalError::UnknownPolicy(s.into())),
        }
    }
}

fn random_cameras(session: &Session<'_>, n: usize, seed: u64) -> Vec<CameraState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = &session.scene;
    let b = scene.scene_aabb();
    let c = b.center();
    let half = b.extent() * (RANDOM_BOX_SCALE / 2.0);
    let lo = c - half;
    let hi = c + half;
    // nothing sits below the floor of the box scenes
    let floor = b.min.z.max(lo.z);
    let aspect = default_aspect(&session.mission);
    let focal = (RANDOM_FOCAL.0.max(FOCAL_RANGE.0), RANDOM_FOCAL.1.min(FOCAL_RANGE.1));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Vec3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(floor..=hi.z),
        );
        let target = scene.objects()[rng.random_range(0..scene.objects().len())].center();
        let f = rng.random_range(focal.0..=focal.1);
        if scene.point_inside_any(&p) || (p - target).norm() < 1e-3 {
            continue;
        }
        out.push(CameraState::new(p, target, f, 5.6, aspect));
    }
    out
}

/// One-shot policies: render a fixed candidate list once, keep the best J.
fn run_one_shot(session: &Session<'_>, policy: BaselinePolicy) -> Result<FinalResult, SearchError> {
    let aspect = default_aspect(&session.mission);
    let (cams, origin): (Vec<CameraState>, SeedOrigin) = match policy {
        BaselinePolicy::SingleStep => {
            let top = anchors_by_prior(&session.bank)[0];
            (vec![session.bank[top].camera(aspect)], SeedOrigin::Anchor)
        }
        BaselinePolicy::AnchorBestOfN => (session.bank.iter().map(|a| a.camera(aspect)).collect(), SeedOrigin::Anchor),
        BaselinePolicy::RandomSearch => (
            random_cameras(session, RANDOM_SEARCH_BUDGET, session.config.seed),
            SeedOrigin::Probe,
        ),
        BaselinePolicy::SingleChain => unreachable!("single_chain runs the round loop"),
    };
    let proposals: Vec<CandidateProposal> = cams
        .into_iter()
        .map(|camera| CandidateProposal {
            camera,
            rationale: policy.name().into(),
            seed_origin: origin,
        })
        .collect();
    let mut log = session.new_log(policy.name(), proposals.len());
    let candidates = session.evaluate(1, &proposals, &mut log.budget);
    let best = candidates
        .iter()
        .filter(|c| c.rendered())
        .fold(None::<&CandidateRecord>, |acc, c| match acc {
            Some(a) if a.score >= c.score => Some(a),
            _ => Some(c),
        });
    let incumbent = best.map(|c| IncumbentRecord {
        round: 1,
        candidate: c.clone(),
    });
    log.rounds.push(RoundRecord {
        round: 1,
        explore_ratio: 0.0,
        step_scale: 0.0,
        seeds: Vec::new(),
        high_explore_anchor: None,
        seed_fallback: false,
        proposals,
        proposal_fallbacks: 0,
        proposal_fallback_reason: None,
        candidates,
        incumbent_before: None,
        incumbent_after: incumbent.clone(),
        verdict: None,
        feedback: RoundFeedback::neutral(),
        memory: Vec::new(),
        forbidden_zones: Vec::new(),
    });
    session.finalize(incumbent.as_ref(), log)
}

/// Runs a baseline on the same scene, bank and reviewer machinery as the
/// full search. `single_chain` is the round loop with one candidate per
/// round and both exploration lanes off.
pub fn run_baseline(
    policy: BaselinePolicy,
    mission: MissionSpec,
    scene: Arc<SceneModel>,
    mut config: SearchConfig,
    advisor: &dyn Advisor,
    backend: &dyn RenderBackend,
    out_dir: Option<&Path>,
) -> Result<FinalResult, SearchError> {
    if policy == BaselinePolicy::SingleChain {
        config.candidates = 1;
        config.high_explore = false;
        config.region_memory = false;
    }
    let session = Session::new(mission, scene, config, advisor, backend, out_dir)?;
    match policy {
        BaselinePolicy::SingleChain => run_session(&session, policy.name()),
        _ => run_one_shot(&session, policy),
    }
}

/// Maps a finished run to external scores.
pub trait ExternalScorer: Send + Sync {
    fn name(&self) -> &str;

    /// `run_dir` is the directory holding `run_log.json`.
    fn score(&self, run_dir: &Path, log: &RunLog) -> Result<ExternalScores, EvalError>;
}

/// Deterministic stand-in scorer computed from the reference signals the
/// run log stores for the final camera.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticScorer;

impl SyntheticScorer {
    pub fn from_signals(m: &[f64; 6]) -> Result<ExternalScores, EvalError> {
        ExternalScores::new(
            0.5 * m[2] + 0.5 * m[4],
            m[3],
            0.5 * m[5] + 0.25 * m[0] + 0.25 * m[1],
            "synthetic",
        )
    }
}

impl ExternalScorer for SyntheticScorer {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn score(&self, _run_dir: &Path, log: &RunLog) -> Result<ExternalScores, EvalError> {
        let fin = log
            .final_result
            .as_ref()
            .ok_or_else(|| EvalError::Scorer("run has no final result".into()))?;
        Self::from_signals(&fin.reference.m)
    }
}

/// Runs `program args.. <image>` and reads `{"iaa":..,"iqa":..,"ista":..}`
/// from its stdout.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandScorer {
    /// Splits a command line on whitespace.
    pub fn parse(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts.next()?.into();
        Some(Self {
            program,
            args: parts.map(String::from).collect(),
        })
    }
}

#[derive(Deserialize)]
struct ScorerOutput {
    iaa: f64,
    iqa: f64,
    ista: f64,
}

impl ExternalScorer for CommandScorer {
    fn name(&self) -> &str {
        "command"
    }

    fn score(&self, run_dir: &Path, log: &RunLog) -> Result<ExternalScores, EvalError> {
        let image = log
            .final_result
            .as_ref()
            .and_then(|f| f.image_path.as_ref())
            .ok_or_else(|| EvalError::Scorer("run has no final image".into()))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(run_dir.join(image))
            .stdin(Stdio::null())
            .stderr(Stdio::null())
            .output()
            .map_err(|e| EvalError::Scorer(format!("spawn failed: {e}")))?;
        if !out.status.success() {
            return Err(EvalError::Scorer(format!("scorer exited with {}", out.status)));
        }
        let s: ScorerOutput = serde_json::from_slice(&out.stdout)
            .map_err(|e| EvalError::Scorer(format!("unreadable scorer output: {e}")))?;
        ExternalScores::new(s.iaa, s.iqa, s.ista, self.program.display().to_string())
    }
}

/// Scores one run log; runs without a final image, or whose scorer fails,
/// are reported as not completed.
pub fn task_result(method: &str, run_dir: &Path, log: &RunLog, scorer: &dyn ExternalScorer) -> TaskResult {
    let category = Some(log.category);
    if log.final_result.is_none() {
        let why = log.failure.clone().unwrap_or_else(|| "no_final_image".into());
        return TaskResult {
            diagnostics: log.diagnostics.clone(),
            ..TaskResult::failed(&log.mission_id, method, category, &why)
        };
    }
    match scorer.score(run_dir, log) {
        Ok(scores) => TaskResult {
            mission_id: log.mission_id.clone(),
            category,
            method: method.into(),
            completed: true,
            failure_category: None,
            scores: Some(scores),
            diagnostics: log.diagnostics.clone(),
        },
        Err(_) => TaskResult {
            diagnostics: log.diagnostics.clone(),
            ..TaskResult::failed(&log.mission_id, method, category, "scoring_failed")
        },
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Reads `<runs>/<method>/<mission>/run_log.json` and scores every run.
pub fn load_results(runs: &Path, scorer: &dyn ExternalScorer) -> Result<BTreeMap<String, Vec<TaskResult>>, EvalError> {
    let mut by_method = BTreeMap::new();
    for method_dir in sorted_dirs(runs)? {
        let method = method_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let missions = sorted_dirs(&method_dir)?;
        let results: Vec<TaskResult> = missions
            .par_iter()
            .map(|dir| {
                let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let log: Option<RunLog> = std::fs::read_to_string(dir.join("run_log.json"))
                    .ok()
                    .and_then(|s| serde_json::from_str(&s).ok());
                match log {
                    Some(log) => task_result(&method, dir, &log, scorer),
                    None => TaskResult::failed(&id, &method, None, "missing_log"),
                }
            })
            .collect();
        by_method.insert(method, results);
    }
    Ok(by_method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub n: usize,
    pub mean_qs: f64,
    pub success: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticMeans {
    pub coverage: f64,
    pub collapse: f64,
    pub revisit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub mean_qs: Option<f64>,
    /// Sample standard deviation; zero for a single task.
    pub std_qs: Option<f64>,
    pub success: Option<f64>,
    pub iaa: Option<f64>,
    pub iqa: Option<f64>,
    pub ista: Option<f64>,
    pub per_category: BTreeMap<String, CategorySummary>,
    pub diagnostics: Option<DiagnosticMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseWins {
    pub a: String,
    pub b: String,
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub threshold: f64,
    pub filter: FilterReport,
    pub methods: Vec<MethodSummary>,
    pub wins: Vec<PairwiseWins>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

fn summarize(method: &str, results: &[&TaskResult], threshold: f64) -> MethodSummary {
    let qs: Vec<f64> = results.iter().filter_map(|r| r.m_qs()).collect();
    let col = |f: fn(&ExternalScores) -> f64| {
        mean(&results.iter().filter_map(|r| r.scores.as_ref().map(f)).collect::<Vec<_>>())
    };
    let mut per_category = BTreeMap::new();
    for c in MissionCategory::ALL {
        let sub: Vec<f64> = results
            .iter()
            .filter(|r| r.category == Some(c))
            .filter_map(|r| r.m_qs())
            .collect();
        if let Some(m) = mean(&sub) {
            per_category.insert(
                c.name().to_string(),
                CategorySummary {
                    n: sub.len(),
                    mean_qs: m,
                    success: sub.iter().filter(|&&q| q >= threshold).count() as f64 / sub.len() as f64,
                },
            );
        }
    }
    let diags: Vec<&SearchDiagnostics> = results.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
    let diagnostics = (!diags.is_empty()).then(|| {
        let n = diags.len() as f64;
        DiagnosticMeans {
            coverage: diags.iter().map(|d| d.coverage).sum::<f64>() / n,
            collapse: diags.iter().map(|d| d.collapse).sum::<f64>() / n,
            revisit: diags.iter().map(|d| d.revisit).sum::<f64>() / n,
        }
    });
    let owned: Vec<TaskResult> = results.iter().map(|r| (*r).clone()).collect();
    MethodSummary {
        method: method.into(),
        n: qs.len(),
        mean_qs: mean(&qs),
        std_qs: sample_std(&qs),
        success: success_at(&owned, threshold).ok(),
        iaa: col(|s| s.iaa),
        iqa: col(|s| s.iqa),
        ista: col(|s| s.ista),
        per_category,
        diagnostics,
    }
}

/// Aggregates over the common-completed set. Pairwise wins count strict
/// composite inequality only; a single method gets no win table.
pub fn aggregate_report(by_method: &BTreeMap<String, Vec<TaskResult>>, threshold: f64) -> Report {
    let filter = filter_unchecked(by_method);
    let keep: BTreeSet<&str> = filter.retained.iter().map(String::as_str).collect();
    let retained = |m: &str| -> Vec<&TaskResult> {
        by_method[m]
            .iter()
            .filter(|r| keep.contains(r.mission_id.as_str()))
            .collect()
    };
    let methods: Vec<MethodSummary> = by_method
        .keys()
        .map(|m| summarize(m, &retained(m), threshold))
        .collect();
    let names: Vec<&String> = by_method.keys().collect();
    let mut wins = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let qa: BTreeMap<&str, f64> = retained(a).iter().filter_map(|r| Some((r.mission_id.as_str(), r.m_qs()?))).collect();
            let mut w = PairwiseWins {
                a: (*a).clone(),
                b: (*b).clone(),
                a_wins: 0,
                b_wins: 0,
                ties: 0,
            };
            for r in retained(b) {
                let (Some(x), Some(y)) = (qa.get(r.mission_id.as_str()), r.m_qs()) else {
                    continue;
                };
                match x.total_cmp(&y) {
                    std::cmp::Ordering::Greater => w.a_wins += 1,
                    std::cmp::Ordering::Less => w.b_wins += 1,
                    std::cmp::Ordering::Equal => w.ties += 1,
                }
            }
            wins.push(w);
        }
    }
    Report {
        threshold,
        filter,
        methods,
        wins,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let total = self.filter.retained.len() + self.filter.excluded.len();
        let _ = writeln!(s, "retained {}/{} missions", self.filter.retained.len(), total);
        let balance: Vec<String> = self.filter.category_balance.iter().map(|(c, n)| format!("{c}={n}")).collect();
        let _ = writeln!(s, "balance  {}", balance.join(" "));
        for (id, why) in &self.filter.excluded {
            let parts: Vec<String> = why.iter().map(|(m, c)| format!("{m}:{c}")).collect();
            let _ = writeln!(s, "excluded {id} ({})", parts.join(", "));
        }
        let _ = writeln!(s);
        let succ = format!("Succ@{}", self.threshold);
        let _ = writeln!(
            s,
            "{:<20} {:>4} {:>7} {:>7} {:>9} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8}",
            "method", "n", "IAA", "IQA", "ISTA", "M_qs", "std", succ, "coverage", "collapse", "revisit"
        );
        for m in &self.methods {
            let d = m.diagnostics;
            let _ = writeln!(
                s,
                "{:<20} {:>4} {:>7} {:>7} {:>9} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8}",
                m.method,
                m.n,
                opt(m.iaa),
                opt(m.iqa),
                opt(m.ista),
                opt(m.mean_qs),
                opt(m.std_qs),
                opt(m.success),
                opt(d.map(|d| d.coverage)),
                opt(d.map(|d| d.collapse)),
                opt(d.map(|d| d.revisit)),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20} {:<24} {:>4} {:>7} {:>7}", "method", "category", "n", "M_qs", succ);
        for m in &self.methods {
            for (c, cs) in &m.per_category {
                let _ = writeln!(
                    s,
                    "{:<20} {:<24} {:>4} {:>7.3} {:>7.3}",
                    m.method, c, cs.n, cs.mean_qs, cs.success
                );
            }
        }
        if !self.wins.is_empty() {
            let _ = writeln!(s);
            for w in &self.wins {
                let n = w.a_wins + w.b_wins + w.ties;
                let _ = writeln!(
                    s,
                    "{} vs {}: {} wins {}/{}, {} wins {}/{}, ties {}",
                    w.a, w.b, w.a, w.a_wins, n, w.b, w.b_wins, n, w.ties
                );
            }
        }
        s
    }
}
