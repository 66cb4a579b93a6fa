//! Render-budgeted camera search over parametric box scenes.
//!
//! A search run proposes candidate cameras, renders cheap previews, scores
//! them with projection rules plus advisor image scores, and carries region
//! memory and reflector feedback between rounds.

pub mod advisors;
pub mod anchors;
pub mod blueprint;
pub mod camera;
pub mod eval;
pub mod geometry;
pub mod memory;
pub mod render;
pub mod search;
pub mod scene;
pub mod synthetic;
