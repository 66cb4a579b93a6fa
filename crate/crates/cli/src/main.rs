use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use camsearch::advisors::{Advisor, RemoteAdvisor, StubAdvisor};
use camsearch::blueprint::{load_missions, select_mission, MissionSpec};
use camsearch::eval::{
    aggregate_report, load_results, run_baseline, BaselinePolicy, CommandScorer, ExternalScorer, SyntheticScorer,
    SUCCESS_THRESHOLD,
};
use camsearch::render::{BoxRasterizer, RenderBackend, SubprocessBackend, SubprocessConfig};
use camsearch::scene::{load_scene, SceneModel};
use camsearch::search::{run_search, FinalResult, SearchConfig, SearchError};
use camsearch::synthetic::{generate_suite, write_suite};

#[derive(Parser)]
#[command(name = "camsearch", version, about = "Closed-loop camera search over box scenes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full search on one mission.
    Run(RunArgs),
    /// Run a baseline policy on one mission.
    Baseline {
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run several methods over every mission of a registry, writing
    /// `<out>/<method>/<mission>/`.
    Suite {
        #[arg(long)]
        missions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated: full, no_high_explore, no_region_memory or a baseline name.
        #[arg(long, default_value = "full,random_search,single_step")]
        methods: String,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Score runs and write an aggregate report.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        /// `synthetic` or a command that prints {"iaa","iqa","ista"} for an image path.
        #[arg(long, default_value = "synthetic")]
        scorer: String,
        #[arg(long, default_value_t = SUCCESS_THRESHOLD)]
        threshold: f64,
        /// JSON report path; a plain-text table is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a seeded synthetic benchmark suite.
    GenerateSuite {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SearchArgs {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_high_explore: bool,
    #[arg(long)]
    no_region_memory: bool,
    /// `stub` or an advisor endpoint URL.
    #[arg(long, default_value = "stub")]
    advisor: String,
    /// External renderer program; the built-in rasterizer is used when absent.
    #[arg(long)]
    renderer: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Mission document or registry.
    #[arg(long)]
    mission: PathBuf,
    /// Required when the mission file holds more than one mission.
    #[arg(long)]
    mission_id: Option<String>,
    /// Defaults to the mission's scene_ref, relative to the mission file.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        let mut c = SearchConfig::default();
        if let Some(v) = self.rounds {
            c.rounds = v;
        }
        if let Some(v) = self.candidates {
            c.candidates = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.high_explore = !self.no_high_explore;
        c.region_memory = !self.no_region_memory;
        c
    }

    fn advisor(&self, scene: &Arc<SceneModel>) -> Box<dyn Advisor> {
        if self.advisor == "stub" {
            Box::new(StubAdvisor::new(scene.clone()))
        } else {
            Box::new(RemoteAdvisor::new(self.advisor.clone()))
        }
    }

    fn backend(&self, scene_path: &Path, out: &Path) -> Box<dyn RenderBackend> {
        match &self.renderer {
            Some(program) => {
                let mut cfg = SubprocessConfig::new(program, scene_path);
                cfg.scratch_dir = out.to_path_buf();
                Box::new(SubprocessBackend::new(cfg))
            }
            None => Box::new(BoxRasterizer),
        }
    }
}

fn scene_path_for(mission_file: &Path, mission: &MissionSpec) -> PathBuf {
    mission_file.parent().unwrap_or(Path::new(".")).join(&mission.scene_ref)
}

enum Method {
    Full { high_explore: bool, region_memory: bool },
    Baseline(BaselinePolicy),
}

impl Method {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Method::Full {
                high_explore: true,
                region_memory: true,
            },
            "no_high_explore" => Method::Full {
                high_explore: false,
                region_memory: true,
            },
            "no_region_memory" => Method::Full {
                high_explore: true,
                region_memory: false,
            },
            other => Method::Baseline(other.parse()?),
        })
    }
}

fn execute(
    method: &Method,
    mission: MissionSpec,
    scene_path: &Path,
    out: &Path,
    args: &SearchArgs,
) -> Result<std::result::Result<FinalResult, SearchError>> {
    let scene = Arc::new(load_scene(scene_path).with_context(|| format!("loading {}", scene_path.display()))?);
    std::fs::create_dir_all(out)?;
    let advisor = args.advisor(&scene);
    let backend = args.backend(scene_path, out);
    let mut config = args.config();
    Ok(match method {
        Method::Full {
            high_explore,
            region_memory,
        } => {
            config.high_explore &= high_explore;
            config.region_memory &= region_memory;
            run_search(mission, scene, config, advisor.as_ref(), backend.as_ref(), Some(out))
        }
        Method::Baseline(p) => run_baseline(*p, mission, scene, config, advisor.as_ref(), backend.as_ref(), Some(out)),
    })
}

fn report_outcome(id: &str, out: &Path, r: std::result::Result<FinalResult, SearchError>) -> Result<bool> {
    match r {
        Ok(f) => {
            let score = f.log.final_result.as_ref().map(|x| x.incumbent_score).unwrap_or(0.0);
            println!(
                "{id}: ratio {} J {score:.4} previews {} -> {}",
                f.ratio,
                f.log.budget.previews_rendered,
                out.join("final.png").display()
            );
            Ok(true)
        }
        Err(SearchError::MissionFailed { category, .. }) => {
            eprintln!("{id}: failed ({category}); log at {}", out.join("run_log.json").display());
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn run_one(method: Method, run: &RunArgs) -> Result<bool> {
    let missions = load_missions(&run.mission)?;
    let mission = select_mission(missions, run.mission_id.as_deref())?;
    let scene_path = run.scene.clone().unwrap_or_else(|| scene_path_for(&run.mission, &mission));
    let id = mission.mission_id.clone();
    let r = execute(&method, mission, &scene_path, &run.out, &run.search)?;
    report_outcome(&id, &run.out, r)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Cmd::Run(run) => run_one(Method::parse("full")?, &run),
        Cmd::Baseline { policy, run } => run_one(Method::Baseline(policy.parse()?), &run),
        Cmd::Suite {
            missions,
            out,
            methods,
            search,
        } => {
            let registry = load_missions(&missions)?;
            let methods: Vec<&str> = methods.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if methods.is_empty() {
                bail!("no methods given");
            }
            let mut all_ok = true;
            for name in methods {
                let method = Method::parse(name)?;
                for m in &registry {
                    let dir = out.join(name).join(&m.mission_id);
                    let r = execute(&method, m.clone(), &scene_path_for(&missions, m), &dir, &search)?;
                    all_ok &= report_outcome(&format!("{name}/{}", m.mission_id), &dir, r)?;
                }
            }
            Ok(all_ok)
        }
        Cmd::Eval {
            runs,
            scorer,
            threshold,
            report,
        } => {
            let scorer: Box<dyn ExternalScorer> = if scorer == "synthetic" {
                Box::new(SyntheticScorer)
            } else {
                Box::new(CommandScorer::parse(&scorer).context("empty scorer command")?)
            };
            let by_method: BTreeMap<_, _> = load_results(&runs, scorer.as_ref())?;
            if by_method.is_empty() {
                bail!("no method directories under {}", runs.display());
            }
            let rep = aggregate_report(&by_method, threshold);
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&report, rep.to_json())?;
            let text = rep.to_text();
            std::fs::write(report.with_extension("txt"), &text)?;
            print!("{text}");
            Ok(true)
        }
        Cmd::GenerateSuite { n, seed, out } => {
            let suite = generate_suite(n, seed);
            write_suite(&suite, &out)?;
            println!("wrote {n} missions to {}", out.join("missions.json").display());
            Ok(true)
        }
    }
}
