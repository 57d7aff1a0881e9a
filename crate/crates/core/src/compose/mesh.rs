//! Triangle meshes, surface materials and the triangle BVH.

use serde::{Deserialize, Serialize};

use crate::bvh::{Aabb, Bvh};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::ray::Ray;

/// Barycentric slack so that rays through a shared edge hit at least one
/// of the two triangles.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    Diffuse,
    Mirror,
    Glass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub kind: MaterialKind,
    /// Diffuse reflectance, or the reflectance tint of a mirror.
    pub albedo: Vec3,
    /// Index of refraction (glass only).
    pub ior: f64,
    /// Transmission tint (glass only).
    pub tint: Vec3,
}

impl Material {
    pub fn diffuse(albedo: Vec3) -> Self {
        Self { kind: MaterialKind::Diffuse, albedo, ior: 1.0, tint: Vec3::ONE }
    }

    pub fn mirror() -> Self {
        Self { kind: MaterialKind::Mirror, albedo: Vec3::ONE, ior: 1.0, tint: Vec3::ONE }
    }

    pub fn glass(ior: f64, tint: Vec3) -> Self {
        Self { kind: MaterialKind::Glass, albedo: Vec3::ONE, ior, tint }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: Vec3| v.to_array().iter().all(|c| (0.0..=1.0).contains(c));
        if !unit(self.albedo) || !unit(self.tint) {
            return Err(Error::InvalidInput("material albedo and tint must lie in [0, 1]".into()));
        }
        if self.kind == MaterialKind::Glass && !(self.ior > 1.0 && self.ior.is_finite()) {
            return Err(Error::InvalidInput(format!("glass ior must be > 1, got {}", self.ior)));
        }
        Ok(())
    }
}

/// Intersection of a ray with one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    /// Weights of `(v0, v1, v2)`.
    pub barycentric: Vec3,
    /// Unit normal `(v1 − v0) × (v2 − v0)`, not oriented towards the ray.
    pub normal: Vec3,
}

/// Möller–Trumbore. Returns the hit at `t > 0`, or `None` for misses and
/// rays parallel to the triangle's plane.
pub fn intersect_triangle(ray: &Ray, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<TriangleHit> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    let scale = e1.norm() * e2.norm() * ray.direction.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - v0;
    let u = s.dot(p) * inv;
    if u < -EDGE_EPS || u > 1.0 + EDGE_EPS {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(q) * inv;
    if !(t > 0.0) {
        return None;
    }
    Some(TriangleHit { t, barycentric: Vec3::new(1.0 - u - v, u, v), normal: e1.cross(e2).normalized() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub material: Material,
}

impl Mesh {
    /// Validates indices, triangle areas and the material.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, material: Material) -> Result<Self> {
        material.validate()?;
        if let Some(v) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("vertex {v} is not finite")));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= vertices.len()) {
                return Err(Error::InvalidInput(format!(
                    "triangle {i} references a vertex outside 0..{}",
                    vertices.len()
                )));
            }
            let [a, b, c] = t.map(|k| vertices[k as usize]);
            if (b - a).cross(c - a).norm() <= 0.0 {
                return Err(Error::InvalidInput(format!("triangle {i} is degenerate")));
            }
        }
        Ok(Self { vertices, triangles, material })
    }

    /// Two-triangle quad with corners in order around its boundary.
    pub fn quad(corners: [Vec3; 4], material: Material) -> Result<Self> {
        Self::new(corners.to_vec(), vec![[0, 1, 2], [0, 2, 3]], material)
    }

    /// Closed latitude–longitude sphere.
    pub fn uv_sphere(center: Vec3, radius: f64, segments: usize, rings: usize, material: Material) -> Result<Self> {
        if !(radius > 0.0) || segments < 3 || rings < 2 {
            return Err(Error::InvalidInput("sphere needs radius > 0, ≥3 segments, ≥2 rings".into()));
        }
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = std::f64::consts::TAU * s as f64 / segments as f64;
                let dir = Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
                vertices.push(center + dir * radius);
            }
        }
        vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |r: usize, s: usize| (1 + r * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(0, s + 1), ring(0, s)]);
            triangles.push([bottom, ring(rings - 2, s), ring(rings - 2, s + 1)]);
        }
        for r in 0..rings - 2 {
            for s in 0..segments {
                triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
                triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
            }
        }
        Self::new(vertices, triangles, material)
    }
}

/// A surface hit against the whole mesh set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub mesh: usize,
    pub triangle: usize,
    pub hit: TriangleHit,
}

/// All triangles of all meshes under one BVH.
#[derive(Debug, Clone)]
pub struct MeshAccel {
    pub meshes: Vec<Mesh>,
    tris: Vec<(usize, usize)>,
    bvh: Bvh,
}

impl MeshAccel {
    pub fn new(meshes: Vec<Mesh>) -> Self {
        let tris: Vec<(usize, usize)> = meshes
            .iter()
            .enumerate()
            .flat_map(|(m, mesh)| (0..mesh.triangles.len()).map(move |t| (m, t)))
            .collect();
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|&(m, t)| {
                let mesh = &meshes[m];
                Aabb::from_points(mesh.triangles[t].iter().map(|&k| mesh.vertices[k as usize])).unwrap()
            })
            .collect();
        Self { bvh: Bvh::build(&boxes), tris, meshes }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn corners(&self, i: usize) -> (Vec3, Vec3, Vec3) {
        let (m, t) = self.tris[i];
        let mesh = &self.meshes[m];
        let [a, b, c] = mesh.triangles[t].map(|k| mesh.vertices[k as usize]);
        (a, b, c)
    }

    /// Nearest surface hit with `t > t_min`.
    pub fn nearest(&self, ray: &Ray, t_min: f64) -> Option<SurfaceHit> {
        let (i, _) = self.bvh.nearest_after(ray, t_min, |i| {
            let (a, b, c) = self.corners(i);
            intersect_triangle(ray, a, b, c).map(|h| h.t)
        })?;
        let (a, b, c) = self.corners(i);
        let hit = intersect_triangle(ray, a, b, c)?;
        let (mesh, triangle) = self.tris[i];
        Some(SurfaceHit { mesh, triangle, hit })
    }

    /// Every surface hit with `t` in `(t_lo, t_hi)`, unordered.
    pub fn hits_between(&self, ray: &Ray, t_lo: f64, t_hi: f64, mut visit: impl FnMut(SurfaceHit)) {
        self.bvh.for_each_candidate(ray, t_lo, t_hi, |i| {
            let (a, b, c) = self.corners(i);
            if let Some(hit) = intersect_triangle(ray, a, b, c) {
                if hit.t > t_lo && hit.t < t_hi {
                    let (mesh, triangle) = self.tris[i];
                    visit(SurfaceHit { mesh, triangle, hit });
                }
            }
        });
    }
}
