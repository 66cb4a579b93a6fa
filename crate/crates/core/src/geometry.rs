//! Small geometric helpers shared by the scene, projection and rendering code.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// World up axis. Scenes are always Z-up.
pub const UP: Vec3 = Vector3::new(0.0, 0.0, 1.0);

/// Axis-aligned box given by its two extreme corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn half_extent(&self) -> Vec3 {
        self.extent() * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Largest edge length.
    pub fn max_edge(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    /// Radius of the bounding sphere.
    pub fn radius(&self) -> f64 {
        self.extent().norm() * 0.5
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Open containment test: the point is strictly inside the box.
    pub fn contains_strict(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Intersection with positive volume on every axis.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    /// Box scaled about its own center.
    pub fn scaled(&self, factor: f64) -> Aabb {
        Aabb::from_center_half(self.center(), self.half_extent() * factor)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Corner index pairs forming the 12 edges of [`Aabb::corners`].
    pub const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];

    /// The six faces as (outward normal, four corners in winding order).
    pub fn faces(&self) -> [(Vec3, [Vec3; 4]); 6] {
        let c = self.corners();
        [
            (-Vec3::x(), [c[0], c[2], c[6], c[4]]),
            (Vec3::x(), [c[1], c[5], c[7], c[3]]),
            (-Vec3::y(), [c[0], c[4], c[5], c[1]]),
            (Vec3::y(), [c[2], c[3], c[7], c[6]]),
            (-Vec3::z(), [c[0], c[1], c[3], c[2]]),
            (Vec3::z(), [c[4], c[6], c[7], c[5]]),
        ]
    }

    /// Slab test. Returns the entry/exit parameters of `origin + t * dir`
    /// clipped to `[t_min, t_max]`, or `None` when the ray misses.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut lo = t_min;
        let mut hi = t_max;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}
