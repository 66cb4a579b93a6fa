//! External renderer driven as a child process.
//!
//! Invocation:
//!
//! ```text
//! <program> [args..] --scene <path> --camera px py pz lx ly lz f d rw rh sensor
//!           --width <w> --height <h> --samples <n> --quality <preview|final> --out <png>
//! ```
//!
//! Exit code 0 means success and requires a PNG at `--out`. The renderer may
//! write a JSON sidecar `<out>.stats` holding `backend`, `samples` and
//! `render_time`.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{Quality, RenderBackend, RenderError, RenderFailure, RenderRequest, RenderResult, RenderStats};
use crate::camera::{CameraState, SENSOR_WIDTH_MM};
use crate::scene::SceneModel;

#[derive(Debug, Clone)]
pub struct SubprocessConfig {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Scene file handed to the renderer; the in-memory model is only used
    /// for the inside-geometry warning.
    pub scene_path: PathBuf,
    pub preview_timeout: Duration,
    pub final_timeout: Duration,
    /// Where outputs go for requests without an `out_path`.
    pub scratch_dir: PathBuf,
}

impl SubprocessConfig {
    pub fn new(program: impl Into<PathBuf>, scene_path: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            scene_path: scene_path.into(),
            preview_timeout: Duration::from_secs(300),
            final_timeout: Duration::from_secs(3600),
            scratch_dir: std::env::temp_dir(),
        }
    }
}

pub struct SubprocessBackend {
    config: SubprocessConfig,
    counter: AtomicU64,
}

/// The 11 numbers passed after `--camera`: position, look-at, focal length,
/// aperture, aspect numerator and denominator, sensor width.
pub fn camera_tuple(cam: &CameraState) -> [f64; 11] {
    [
        cam.position.x,
        cam.position.y,
        cam.position.z,
        cam.look_at.x,
        cam.look_at.y,
        cam.look_at.z,
        cam.focal_mm,
        cam.aperture,
        cam.aspect.w as f64,
        cam.aspect.h as f64,
        SENSOR_WIDTH_MM,
    ]
}

#[derive(Deserialize)]
struct Sidecar {
    backend: Option<String>,
    samples: Option<u32>,
    render_time: Option<f64>,
}

impl SubprocessBackend {
    pub fn new(config: SubprocessConfig) -> Self {
        Self {
            config,
            counter: AtomicU64::new(0),
        }
    }

    pub fn args_for(&self, request: &RenderRequest, out: &Path) -> Vec<String> {
        let mut args = self.config.args.clone();
        args.push("--scene".into());
        args.push(self.config.scene_path.display().to_string());
        args.push("--camera".into());
        args.extend(camera_tuple(&request.camera).iter().map(|x| format!("{x}")));
        args.extend([
            "--width".into(),
            request.width.to_string(),
            "--height".into(),
            request.height.to_string(),
            "--samples".into(),
            request.samples.to_string(),
            "--quality".into(),
            match request.quality {
                Quality::Preview => "preview".into(),
                Quality::Final => "final".into(),
            },
            "--out".into(),
            out.display().to_string(),
        ]);
        args
    }

    fn scratch_path(&self) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        self.config
            .scratch_dir
            .join(format!("camsearch-{}-{n}.png", std::process::id()))
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".stats");
    PathBuf::from(s)
}

impl RenderBackend for SubprocessBackend {
    fn name(&self) -> &str {
        "subprocess"
    }

    fn render(&self, scene: &SceneModel, request: &RenderRequest) -> Result<RenderResult, RenderError> {
        let q = request.quality;
        let out = request.out_path.clone().unwrap_or_else(|| self.scratch_path());
        let _ = std::fs::remove_file(&out);
        let timeout = match q {
            Quality::Preview => self.config.preview_timeout,
            Quality::Final => self.config.final_timeout,
        };
        let start = Instant::now();
        let mut child = Command::new(&self.config.program)
            .args(self.args_for(request, &out))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| RenderError::new(RenderFailure::BackendCrash, q, format!("spawn failed: {e}")))?;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    let failure = match q {
                        Quality::Preview => RenderFailure::TimeoutNoFirstImage,
                        Quality::Final => RenderFailure::NoFinalImage,
                    };
                    return Err(RenderError::new(failure, q, format!("timed out after {timeout:?}")));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(RenderError::new(RenderFailure::BackendCrash, q, e.to_string())),
            }
        };
        let render_time = start.elapsed().as_secs_f64();
        if !status.success() {
            return Err(RenderError::new(RenderFailure::BackendCrash, q, format!("renderer exited with {status}")));
        }
        if !out.exists() {
            return Err(RenderError::new(RenderFailure::NoFinalImage, q, "renderer exited 0 without an image"));
        }
        let image = image::open(&out)
            .map_err(|e| RenderError::new(RenderFailure::BackendCrash, q, format!("unreadable image: {e}")))?
            .to_rgb8();
        if image.dimensions() != (request.width, request.height) {
            return Err(RenderError::new(
                RenderFailure::BackendCrash,
                q,
                format!(
                    "image is {}x{}, requested {}x{}",
                    image.width(),
                    image.height(),
                    request.width,
                    request.height
                ),
            ));
        }
        let sidecar: Option<Sidecar> = std::fs::read_to_string(sidecar_path(&out))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let stats = RenderStats {
            backend: sidecar
                .as_ref()
                .and_then(|s| s.backend.clone())
                .unwrap_or_else(|| self.name().to_string()),
            samples: sidecar.as_ref().and_then(|s| s.samples).unwrap_or(request.samples),
            render_time: sidecar.as_ref().and_then(|s| s.render_time).unwrap_or(render_time),
        };
        let path = request.out_path.clone();
        if path.is_none() {
            let _ = std::fs::remove_file(&out);
            let _ = std::fs::remove_file(sidecar_path(&out));
        }
        Ok(RenderResult {
            image,
            path,
            stats,
            camera_inside_geometry: scene.point_inside_any(&request.camera.position),
        })
    }
}
