//! Inference-time composition of a Gaussian scene with triangle meshes:
//! recursive Whitted-style tracing with point-light shadows, mirrors and
//! glass.
//!
//! Along every ray the Gaussians in front of the nearest surface are
//! blended exactly as in [`crate::render`]; the surface response then
//! enters the blend weighted by the remaining transmittance. Gaussians are
//! emissive and never lit; they only attenuate shadow rays.

pub mod mesh;
pub mod obj;
pub mod scene_file;

use serde::{Deserialize, Serialize};

use crate::bvh::{collect_hits, Hit, SortedHitCursor};
use crate::config::RenderConfig;
use crate::exec::{map_indexed, Execution};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::ray::Ray;
use crate::render::{blend_hits, max_response_alpha_prepared, Camera, Clipped, SceneAccel};

pub use mesh::{intersect_triangle, Material, MaterialKind, Mesh, MeshAccel, SurfaceHit, TriangleHit};
pub use obj::{load_obj, parse_obj};
pub use scene_file::{load_scene_file, ComposeSpec};

pub const DEFAULT_MAX_DEPTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: Vec3,
    pub intensity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeConfig {
    pub render: RenderConfig,
    /// Deepest recursion level that is still traced; deeper branches
    /// return the background.
    pub max_depth: usize,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self { render: RenderConfig::default(), max_depth: DEFAULT_MAX_DEPTH }
    }
}

/// Mirror direction of `d` about the plane with normal `n` (unit).
pub fn reflect(d: Vec3, n: Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

/// Refracts unit `d` through a surface with unit normal `n` facing against
/// `d`, with `eta = n_incident / n_transmitted`. `None` on total internal
/// reflection.
pub fn refract(d: Vec3, n: Vec3, eta: f64) -> Option<Vec3> {
    let cos_i = -d.dot(n);
    let k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if k < 0.0 {
        return None;
    }
    Some(d * eta + n * (eta * cos_i - k.sqrt()))
}

/// Schlick's Fresnel reflectance; `cos` is the cosine on the optically
/// thinner side.
pub fn schlick(cos: f64, ior: f64) -> f64 {
    let r0 = ((1.0 - ior) / (1.0 + ior)).powi(2);
    r0 + (1.0 - r0) * (1.0 - cos.clamp(0.0, 1.0)).powi(5)
}

fn offset_eps(p: Vec3) -> f64 {
    1e-7 * (1.0 + p.x.abs().max(p.y.abs()).max(p.z.abs()))
}

/// Gaussians, meshes and lights ready for tracing.
pub struct Composer<'a> {
    pub gaussians: &'a SceneAccel,
    pub meshes: MeshAccel,
    pub lights: Vec<PointLight>,
    pub cfg: ComposeConfig,
}

impl<'a> Composer<'a> {
    pub fn new(gaussians: &'a SceneAccel, meshes: Vec<Mesh>, lights: Vec<PointLight>, cfg: ComposeConfig) -> Self {
        Self { gaussians, meshes: MeshAccel::new(meshes), lights, cfg }
    }

    /// Per-channel transmission from `point` to `light`: zero behind an
    /// opaque surface, the product of tints across glass surfaces, times
    /// `∏(1 − αᵢ)` over the Gaussians entered on the segment.
    pub fn shadow_factor(&self, point: Vec3, light: &PointLight) -> Vec3 {
        let ray = Ray::new(point, light.position - point);
        let mut glass = Vec::new();
        let mut opaque = false;
        self.meshes.hits_between(&ray, 0.0, 1.0, |h| match self.meshes.meshes[h.mesh].material.kind {
            MaterialKind::Glass => glass.push((h.hit.t, h.mesh)),
            _ => opaque = true,
        });
        if opaque {
            return Vec3::ZERO;
        }
        // A segment through an edge shared by two triangles reports the same
        // surface crossing twice; count it once.
        glass.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        glass.dedup_by(|b, a| a.1 == b.1 && (b.0 - a.0).abs() <= 1e-9 * (1.0 + a.0.abs()));
        let factor = glass.iter().fold(Vec3::ONE, |f, &(_, m)| f.mul_elem(self.meshes.meshes[m].material.tint));
        let g = self.gaussians;
        let mut hits = Vec::new();
        collect_hits(&g.bvh, &g.gaussians, &ray, g.q, &mut hits);
        let t: f64 = hits
            .iter()
            .filter(|h| h.t_entry < 1.0)
            .map(|h| 1.0 - max_response_alpha_prepared(&ray, &g.gaussians[h.gaussian_index]))
            .product();
        factor * t
    }

    /// Radiance along `ray` at recursion level `depth`.
    pub fn compose_ray(&self, ray: &Ray, depth: usize) -> Vec3 {
        self.compose_with_scratch(ray, depth, &mut Vec::new())
    }

    fn compose_with_scratch(&self, ray: &Ray, depth: usize, scratch: &mut Vec<Hit>) -> Vec3 {
        let bg = self.cfg.render.background_color;
        if depth > self.cfg.max_depth {
            return bg;
        }
        let g = self.gaussians;
        collect_hits(&g.bvh, &g.gaussians, ray, g.q, scratch);
        let surface = if self.meshes.is_empty() { None } else { self.meshes.nearest(ray, 0.0) };
        let t_max = surface.map_or(f64::INFINITY, |s| s.hit.t);
        let mut source = Clipped { inner: SortedHitCursor::new(scratch), t_max };
        let p = blend_hits(&mut source, &g.gaussians, ray, &self.cfg.render);
        match surface {
            None => p.color + bg * p.transmittance,
            Some(_) if p.second_phase => p.color,
            Some(s) => p.color + self.shade(ray, &s, depth, scratch) * p.transmittance,
        }
    }

    fn shade(&self, ray: &Ray, s: &SurfaceHit, depth: usize, scratch: &mut Vec<Hit>) -> Vec3 {
        let m = &self.meshes.meshes[s.mesh].material;
        let p = ray.at(s.hit.t);
        let d = ray.direction.normalized();
        let entering = d.dot(s.hit.normal) < 0.0;
        let n = if entering { s.hit.normal } else { -s.hit.normal };
        let eps = offset_eps(p);
        let above = p + n * eps;
        match m.kind {
            MaterialKind::Diffuse => {
                let mut sum = Vec3::ZERO;
                for light in &self.lights {
                    let l = light.position - p;
                    let cos = n.dot(l.normalized());
                    if cos > 0.0 {
                        sum += light.intensity.mul_elem(self.shadow_factor(above, light)) * cos;
                    }
                }
                m.albedo.mul_elem(sum)
            }
            MaterialKind::Mirror => {
                let r = Ray::new(above, reflect(d, n));
                m.albedo.mul_elem(self.compose_with_scratch(&r, depth + 1, scratch))
            }
            MaterialKind::Glass => {
                let eta = if entering { 1.0 / m.ior } else { m.ior };
                let reflected = self.compose_with_scratch(&Ray::new(above, reflect(d, n)), depth + 1, scratch);
                let Some(t_dir) = refract(d, n, eta) else {
                    return m.tint.mul_elem(reflected);
                };
                let cos_i = -d.dot(n);
                let cos = if entering { cos_i } else { -t_dir.dot(n) };
                let f = schlick(cos, m.ior);
                let refracted = self.compose_with_scratch(&Ray::new(p - n * eps, t_dir), depth + 1, scratch);
                m.tint.mul_elem(reflected * f + refracted * (1.0 - f))
            }
        }
    }

    pub fn render(&self, camera: &Camera, exec: Execution) -> Image {
        let rows = map_indexed(exec, camera.height, |y| {
            let mut scratch = Vec::new();
            (0..camera.width)
                .map(|x| {
                    let ray = camera.ray_through(x as f64 + 0.5, y as f64 + 0.5);
                    self.compose_with_scratch(&ray, 0, &mut scratch)
                })
                .collect::<Vec<_>>()
        });
        Image { width: camera.width, height: camera.height, pixels: rows.into_iter().flatten().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_an_involution() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalized();
        let v = Vec3::new(1.0, 2.0, -0.7);
        assert!((reflect(reflect(v, n), n) - v).norm() < 1e-12);
    }

    #[test]
    fn refraction_reciprocity() {
        let n = Vec3::Z;
        let d = Vec3::new(0.4, 0.1, -1.0).normalized();
        let t = refract(d, n, 1.0 / 1.5).unwrap();
        let back = refract(-t, -n, 1.5).unwrap();
        assert!((back + d).norm() < 1e-9);
        assert!(refract(Vec3::new(0.9, 0.0, -0.1).normalized(), n, 1.5).is_none());
    }

    #[test]
    fn schlick_limits() {
        assert!((schlick(1.0, 1.5) - 0.04).abs() < 1e-15);
        assert_eq!(schlick(0.0, 1.5), 1.0);
    }
}
