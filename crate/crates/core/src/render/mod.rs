//! Preview/final rendering behind a backend trait.
//!
//! The built-in [`BoxRasterizer`] draws object boxes with the painter's
//! algorithm; [`SubprocessBackend`] drives an external renderer through a
//! fixed command-line contract.

mod raster;
mod subprocess;

pub use raster::{face_color, object_color, rasterize, BoxRasterizer};
pub use subprocess::{camera_tuple, SubprocessBackend, SubprocessConfig};

use std::path::PathBuf;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{AspectRatio, CameraState};
use crate::scene::SceneModel;

pub const PREVIEW_WIDTH: u32 = 640;
/// Final renders are this many times the preview resolution on each axis.
pub const FINAL_SCALE: u32 = 4;
pub const PREVIEW_SAMPLE_CAP: u32 = 64;
pub const DEFAULT_FINAL_SAMPLES: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Preview,
    Final,
}

/// Failure taxonomy shared by every backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderFailure {
    TimeoutNoFirstImage,
    NoFinalImage,
    BackendCrash,
}

impl RenderFailure {
    pub fn tag(&self) -> &'static str {
        match self {
            RenderFailure::TimeoutNoFirstImage => "timeout_no_first_image",
            RenderFailure::NoFinalImage => "no_final_image",
            RenderFailure::BackendCrash => "backend_crash",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{} render failed ({}): {detail}", self.quality_name(), failure.tag())]
pub struct RenderError {
    pub failure: RenderFailure,
    pub quality: Quality,
    pub detail: String,
}

impl RenderError {
    pub fn new(failure: RenderFailure, quality: Quality, detail: impl Into<String>) -> Self {
        Self {
            failure,
            quality,
            detail: detail.into(),
        }
    }

    fn quality_name(&self) -> &'static str {
        match self.quality {
            Quality::Preview => "preview",
            Quality::Final => "final",
        }
    }
}

/// Preview width 640 (final 2560); height is `round(width / r)`, made even
/// by dropping one pixel when odd.
pub fn resolution_for(ratio: AspectRatio, quality: Quality) -> (u32, u32) {
    let w = match quality {
        Quality::Preview => PREVIEW_WIDTH,
        Quality::Final => PREVIEW_WIDTH * FINAL_SCALE,
    };
    let h = (w as f64 / ratio.value()).round() as u32;
    (w, h - h % 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub camera: CameraState,
    pub quality: Quality,
    pub width: u32,
    pub height: u32,
    pub samples: u32,
    pub out_path: Option<PathBuf>,
}

impl RenderRequest {
    /// Preview request; `samples` is capped at [`PREVIEW_SAMPLE_CAP`].
    pub fn preview(camera: CameraState, samples: u32, out_path: Option<PathBuf>) -> Self {
        let (width, height) = resolution_for(camera.aspect, Quality::Preview);
        Self {
            camera,
            quality: Quality::Preview,
            width,
            height,
            samples: samples.min(PREVIEW_SAMPLE_CAP),
            out_path,
        }
    }

    pub fn final_render(camera: CameraState, samples: u32, out_path: Option<PathBuf>) -> Self {
        let (width, height) = resolution_for(camera.aspect, Quality::Final);
        Self {
            camera,
            quality: Quality::Final,
            width,
            height,
            samples,
            out_path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    pub backend: String,
    pub samples: u32,
    /// Wall-clock seconds. Not part of any deterministic artifact.
    pub render_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub image: RgbImage,
    pub path: Option<PathBuf>,
    pub stats: RenderStats,
    /// Set when the camera sits inside scene geometry.
    pub camera_inside_geometry: bool,
}

pub trait RenderBackend: Send + Sync {
    fn name(&self) -> &str;

    fn render(&self, scene: &SceneModel, request: &RenderRequest) -> Result<RenderResult, RenderError>;
}

/// Renders a batch on up to `workers` threads. Results keep request order
/// and each request fails on its own.
pub fn render_parallel(
    backend: &dyn RenderBackend,
    scene: &SceneModel,
    requests: &[RenderRequest],
    workers: usize,
) -> Vec<Result<RenderResult, RenderError>> {
    let workers = workers.max(1);
    if workers == 1 || requests.len() <= 1 {
        return requests.iter().map(|r| backend.render(scene, r)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| requests.par_iter().map(|r| backend.render(scene, r)).collect()),
        // no threads available: serial fallback
        Err(_) => requests.iter().map(|r| backend.render(scene, r)).collect(),
    }
}
