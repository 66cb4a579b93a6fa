//! Painter's-algorithm box rasterizer.
//!
//! Back faces are culled, front faces are clipped against a near plane,
//! projected, and filled far to near by face-centroid depth. Pixel centers
//! are sampled at `(x + 0.5, y + 0.5)`. Interpenetrating boxes can sort
//! wrongly; convex disjoint boxes cannot.

use std::time::Instant;

use image::{Rgb, RgbImage};

use super::{RenderBackend, RenderError, RenderFailure, RenderRequest, RenderResult, RenderStats};
use crate::camera::{CameraState, Projector};
use crate::geometry::Vec3;
use crate::scene::SceneModel;

const NEAR_CLIP: f64 = 1e-4;
const SKY_HORIZON: [f64; 3] = [226.0, 232.0, 238.0];
const SKY_ZENITH: [f64; 3] = [92.0, 138.0, 196.0];
const GROUND_HORIZON: [f64; 3] = [170.0, 160.0, 146.0];
const GROUND_NADIR: [f64; 3] = [84.0, 76.0, 68.0];

#[derive(Debug, Clone, Copy, Default)]
pub struct BoxRasterizer;

impl RenderBackend for BoxRasterizer {
    fn name(&self) -> &str {
        "box_rasterizer"
    }

    fn render(&self, scene: &SceneModel, request: &RenderRequest) -> Result<RenderResult, RenderError> {
        let start = Instant::now();
        let image = rasterize(scene, &request.camera, request.width, request.height)
            .map_err(|e| RenderError::new(RenderFailure::BackendCrash, request.quality, e))?;
        if let Some(path) = &request.out_path {
            image
                .save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| RenderError::new(RenderFailure::BackendCrash, request.quality, e.to_string()))?;
        }
        Ok(RenderResult {
            image,
            path: request.out_path.clone(),
            stats: RenderStats {
                backend: self.name().to_string(),
                samples: request.samples,
                render_time: start.elapsed().as_secs_f64(),
            },
            camera_inside_geometry: scene.point_inside_any(&request.camera.position),
        })
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Flat base color for an object, hashed from its id.
pub fn object_color(id: &str) -> [u8; 3] {
    let h = fnv1a(id);
    let hue = (h % 360) as f64;
    let sat = 0.45 + ((h >> 16) % 30) as f64 / 100.0;
    let val = 0.70 + ((h >> 32) % 20) as f64 / 100.0;
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Object color shaded by a fixed light for the face with outward `normal`.
pub fn face_color(id: &str, normal: &Vec3) -> [u8; 3] {
    let light = Vec3::new(0.35, 0.25, 0.9).normalize();
    let shade = 0.55 + 0.45 * normal.dot(&light).max(0.0);
    object_color(id).map(|c| (c as f64 * shade).round().clamp(0.0, 255.0) as u8)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([0, 1, 2].map(|i| (a[i] + (b[i] - a[i]) * t).round() as u8))
}

fn background(proj: &Projector, u: f64, v: f64) -> Rgb<u8> {
    let z = proj.ray_dir(u, v).z;
    if z >= 0.0 {
        lerp3(SKY_HORIZON, SKY_ZENITH, z.sqrt())
    } else {
        lerp3(GROUND_HORIZON, GROUND_NADIR, (-z).sqrt())
    }
}

struct Face {
    depth: f64,
    color: Rgb<u8>,
    poly: Vec<(f64, f64)>,
}

/// Sutherland-Hodgman against `depth >= NEAR_CLIP`.
fn clip_near(proj: &Projector, quad: &[Vec3; 4]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(6);
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let (da, db) = (proj.depth(&a), proj.depth(&b));
        if da >= NEAR_CLIP {
            out.push(a);
        }
        if (da >= NEAR_CLIP) != (db >= NEAR_CLIP) {
            let t = (NEAR_CLIP - da) / (db - da);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn to_pixels(proj: &Projector, p: &Vec3, w: u32, h: u32) -> (f64, f64) {
    let rel = p - proj.origin;
    let depth = rel.dot(&proj.forward);
    let x = rel.dot(&proj.right) / (depth * proj.tan_h);
    let y = rel.dot(&proj.up) / (depth * proj.tan_v);
    ((0.5 + 0.5 * x) * w as f64, (0.5 - 0.5 * y) * h as f64)
}

/// Fills a convex polygon: a pixel is covered when its center lies in the
/// half-open horizontal span between the polygon's edge crossings.
fn fill_convex(img: &mut RgbImage, poly: &[(f64, f64)], color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let y_lo = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_hi = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_start = (y_lo - 0.5).ceil().max(0.0) as i64;
    let row_end = ((y_hi - 0.5).floor() as i64).min(h as i64 - 1);
    for row in row_start..=row_end {
        let yc = row as f64 + 0.5;
        let mut xl = f64::INFINITY;
        let mut xr = f64::NEG_INFINITY;
        for i in 0..poly.len() {
            let (x0, y0) = poly[i];
            let (x1, y1) = poly[(i + 1) % poly.len()];
            if (y0 <= yc && yc <= y1) || (y1 <= yc && yc <= y0) {
                let x = if (y1 - y0).abs() < 1e-12 {
                    xl = xl.min(x0.min(x1));
                    x0.max(x1)
                } else {
                    x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
                };
                xl = xl.min(x);
                xr = xr.max(x);
            }
        }
        if xl > xr {
            continue;
        }
        let c0 = (xl - 0.5).ceil().max(0.0) as i64;
        let c1 = ((xr - 0.5).ceil() as i64 - 1).min(w as i64 - 1);
        for col in c0..=c1 {
            img.put_pixel(col as u32, row as u32, color);
        }
    }
}

/// Renders `scene` from `camera` into a `width × height` RGB8 image.
pub fn rasterize(scene: &SceneModel, camera: &CameraState, width: u32, height: u32) -> Result<RgbImage, String> {
    if width == 0 || height == 0 {
        return Err(format!("empty resolution {width}x{height}"));
    }
    let proj = camera.projector().map_err(|e| e.to_string())?;
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        background(&proj, (x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)
    });

    let mut faces = Vec::new();
    for obj in scene.objects() {
        for (normal, quad) in obj.aabb().faces() {
            let centroid = quad.iter().sum::<Vec3>() / 4.0;
            // back face, or seen exactly edge-on
            if normal.dot(&(centroid - proj.origin)) >= 0.0 {
                continue;
            }
            let clipped = clip_near(&proj, &quad);
            if clipped.len() < 3 {
                continue;
            }
            let c = face_color(&obj.id, &normal);
            faces.push(Face {
                depth: proj.depth(&centroid),
                color: Rgb(c),
                poly: clipped.iter().map(|p| to_pixels(&proj, p, width, height)).collect(),
            });
        }
    }
    // stable: equal depths keep scene order
    faces.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for f in &faces {
        fill_convex(&mut img, &f.poly, f.color);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_box, AspectRatio};
    use crate::scene::SceneObject;

    fn one_box() -> SceneModel {
        SceneModel::new(vec![SceneObject::new(
            "crate",
            "crate",
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 2.0),
        )])
        .unwrap()
    }

    fn palette(id: &str) -> Vec<[u8; 3]> {
        [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()]
            .iter()
            .map(|n| face_color(id, n))
            .collect()
    }

    #[test]
    fn deterministic() {
        let s = one_box();
        let cam = CameraState::new(Vec3::new(6.0, -4.0, 3.0), Vec3::new(0.0, 0.0, 1.0), 35.0, 5.6, AspectRatio::WIDE);
        let a = rasterize(&s, &cam, 320, 180).unwrap();
        let b = rasterize(&s, &cam, 320, 180).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn looking_away_is_background_only() {
        let s = one_box();
        let cam = CameraState::new(Vec3::new(6.0, 0.0, 1.0), Vec3::new(12.0, 0.0, 1.0), 35.0, 5.6, AspectRatio::WIDE);
        let img = rasterize(&s, &cam, 160, 90).unwrap();
        let proj = cam.projector().unwrap();
        for (x, y, px) in img.enumerate_pixels() {
            assert_eq!(*px, background(&proj, (x as f64 + 0.5) / 160.0, (y as f64 + 0.5) / 90.0));
        }
    }

    #[test]
    fn centered_box_fills_image_center() {
        let s = one_box();
        let cam = CameraState::new(Vec3::new(8.0, 3.0, 2.5), Vec3::new(0.0, 0.0, 1.0), 50.0, 5.6, AspectRatio::WIDE);
        let img = rasterize(&s, &cam, 640, 360).unwrap();
        assert!(palette("crate").contains(&img.get_pixel(320, 180).0));
    }

    #[test]
    fn pixel_rect_matches_projection() {
        let s = one_box();
        let cam = CameraState::new(Vec3::new(7.0, -5.0, 4.0), Vec3::new(0.0, 0.0, 1.0), 40.0, 5.6, AspectRatio::CLASSIC);
        let (w, h) = (640u32, 426u32);
        let img = rasterize(&s, &cam, w, h).unwrap();
        let pal = palette("crate");
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, px) in img.enumerate_pixels() {
            if pal.contains(&px.0) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        let b = project_box(&cam, &s.objects()[0]).unwrap();
        assert!(b.fully_inside);
        let tol = 2.0;
        assert!((x0 as f64 - b.u_min * w as f64).abs() <= tol);
        assert!((x1 as f64 - b.u_max * w as f64).abs() <= tol);
        assert!((y0 as f64 - b.v_min * h as f64).abs() <= tol);
        assert!((y1 as f64 - b.v_max * h as f64).abs() <= tol);
    }

    #[test]
    fn nearer_box_paints_over() {
        let s = SceneModel::new(vec![
            SceneObject::new("far", "far", Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 2.0)),
            SceneObject::new("near", "near", Vec3::new(3.0, -0.5, 0.5), Vec3::new(3.5, 0.5, 1.5)),
        ])
        .unwrap();
        let cam = CameraState::new(Vec3::new(10.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 35.0, 5.6, AspectRatio::WIDE);
        let img = rasterize(&s, &cam, 320, 180).unwrap();
        assert!(palette("near").contains(&img.get_pixel(160, 90).0));
    }

    #[test]
    fn camera_inside_box_renders_with_warning() {
        let s = one_box();
        let cam = CameraState::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(5.0, 0.0, 1.0), 35.0, 5.6, AspectRatio::WIDE);
        let req = RenderRequest::preview(cam, 16, None);
        let r = BoxRasterizer.render(&s, &req).unwrap();
        assert!(r.camera_inside_geometry);
        assert_eq!(r.image.dimensions(), (640, 360));
    }
}
