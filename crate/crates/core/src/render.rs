//! Forward pass: maximum-response opacity, per-ray two-phase color
//! aggregation with the index buffer, and the pinhole camera.

use serde::{Deserialize, Serialize};

use crate::bvh::{collect_hits, next_hit, Bvh, Hit, SortedHitCursor};
use crate::config::RenderConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::image::Image;
use crate::linalg::{Mat3, Vec3};
use crate::ray::{prepare_scene, PreparedGaussian, Ray};
use crate::scene::{Gaussian, GaussianScene};

/// Index-buffer terminator.
pub const SENTINEL: i32 = -1;

/// Per-ray state of the forward pass, replayed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPayload {
    /// Final pixel color, background included.
    pub color: Vec3,
    /// Product of `1 − α` over the color-contributing hits.
    pub transmittance: f64,
    pub second_phase: bool,
    /// Product of `1 − α` over hits recorded after the phase switch.
    pub transmittance2: f64,
    /// Hit Gaussian indices in ray order, optionally terminated by
    /// [`SENTINEL`]. Never longer than the configured capacity.
    pub indices: Vec<i32>,
    pub hit_count: usize,
    /// Number of leading entries of `indices` that contributed color.
    pub phase1_count: usize,
}

impl RayPayload {
    fn new() -> Self {
        Self {
            color: Vec3::ZERO,
            transmittance: 1.0,
            second_phase: false,
            transmittance2: 1.0,
            indices: Vec::new(),
            hit_count: 0,
            phase1_count: 0,
        }
    }

    /// Recorded Gaussian indices up to the sentinel.
    pub fn hits(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().take_while(|&&i| i != SENTINEL).map(|&i| i as usize)
    }

    pub fn has_sentinel(&self) -> bool {
        self.indices.last() == Some(&SENTINEL)
    }
}

/// Source of successive ray hits with strictly increasing `t`.
pub trait HitSource {
    fn next_after(&mut self, t_min: f64) -> Option<Hit>;
}

impl HitSource for SortedHitCursor<'_> {
    fn next_after(&mut self, t_min: f64) -> Option<Hit> {
        SortedHitCursor::next_after(self, t_min)
    }
}

/// Queries the BVH afresh for every hit.
pub struct BvhHitSource<'a> {
    pub bvh: &'a Bvh,
    pub gaussians: &'a [PreparedGaussian],
    pub ray: Ray,
    pub q: f64,
}

impl HitSource for BvhHitSource<'_> {
    fn next_after(&mut self, t_min: f64) -> Option<Hit> {
        next_hit(self.bvh, self.gaussians, &self.ray, t_min, self.q)
    }
}

/// Restricts another source to hits with `t < t_max`.
pub struct Clipped<S> {
    pub inner: S,
    pub t_max: f64,
}

impl<S: HitSource> HitSource for Clipped<S> {
    fn next_after(&mut self, t_min: f64) -> Option<Hit> {
        self.inner.next_after(t_min).filter(|h| h.t_entry < self.t_max)
    }
}

/// `α̂ · exp(−½ D²)` with `D` the whitened distance from the mean to the ray's
/// line.
#[inline]
pub fn max_response_alpha_prepared(ray: &Ray, g: &PreparedGaussian) -> f64 {
    let (d2, _, _) = g.whiten(ray).line_distance_squared();
    g.opacity * (-0.5 * d2).exp()
}

pub fn max_response_alpha(ray: &Ray, g: &Gaussian) -> Result<f64> {
    Ok(max_response_alpha_prepared(ray, &PreparedGaussian::new(g)?))
}

/// Runs the two-phase aggregation without adding the background. The
/// returned payload's `color` holds the Gaussian contribution only.
pub fn blend_hits<S: HitSource>(
    source: &mut S,
    gaussians: &[PreparedGaussian],
    ray: &Ray,
    cfg: &RenderConfig,
) -> RayPayload {
    let mut p = RayPayload::new();
    let mut t_min = 0.0;
    while p.hit_count < cfg.max_hits {
        let Some(hit) = source.next_after(t_min) else {
            if p.indices.len() < cfg.max_hits {
                p.indices.push(SENTINEL);
            }
            break;
        };
        p.indices.push(hit.gaussian_index as i32);
        p.hit_count += 1;
        let g = &gaussians[hit.gaussian_index];
        let alpha = max_response_alpha_prepared(ray, g);
        if !p.second_phase {
            p.color += g.color * (alpha * p.transmittance);
            p.transmittance *= 1.0 - alpha;
            p.phase1_count += 1;
            if p.transmittance < cfg.epsilon1 {
                p.second_phase = true;
            }
        } else {
            p.transmittance2 *= 1.0 - alpha;
            if p.transmittance2 < cfg.epsilon2 {
                if p.indices.len() < cfg.max_hits {
                    p.indices.push(SENTINEL);
                }
                break;
            }
        }
        t_min = hit.t_entry + cfg.t_advance_delta;
    }
    p
}

/// Gaussians of a scene together with their BVH for one ellipsoid level.
#[derive(Debug, Clone)]
pub struct SceneAccel {
    pub gaussians: Vec<PreparedGaussian>,
    pub bvh: Bvh,
    pub q: f64,
}

impl SceneAccel {
    pub fn new(scene: &GaussianScene, q: f64) -> Result<Self> {
        let gaussians = prepare_scene(scene)?;
        let bvh = Bvh::for_gaussians(&gaussians, q);
        Ok(Self { gaussians, bvh, q })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Traces with a caller-provided scratch buffer for the hit list.
    pub fn trace_with_scratch(&self, ray: &Ray, cfg: &RenderConfig, scratch: &mut Vec<Hit>) -> RayPayload {
        collect_hits(&self.bvh, &self.gaussians, ray, self.q, scratch);
        let mut cursor = SortedHitCursor::new(scratch);
        let mut p = blend_hits(&mut cursor, &self.gaussians, ray, cfg);
        p.color += cfg.background_color * p.transmittance;
        p
    }

    pub fn trace(&self, ray: &Ray, cfg: &RenderConfig) -> RayPayload {
        self.trace_with_scratch(ray, cfg, &mut Vec::new())
    }
}

/// Color of one ray and its payload. Uses `cfg.q` for the ellipsoid level.
pub fn trace_ray(bvh: &Bvh, gaussians: &[PreparedGaussian], ray: &Ray, cfg: &RenderConfig) -> (Vec3, RayPayload) {
    let mut scratch = Vec::new();
    collect_hits(bvh, gaussians, ray, cfg.q, &mut scratch);
    let mut cursor = SortedHitCursor::new(&scratch);
    let mut p = blend_hits(&mut cursor, gaussians, ray, cfg);
    p.color += cfg.background_color * p.transmittance;
    (p.color, p)
}

/// Pinhole camera. `rotation` maps camera to world coordinates; the camera
/// looks along its +z axis with +x right and +y down in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: Mat3,
    pub position: Vec3,
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `position` looking at `target`, with `up` defining the
    /// image's upward direction.
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, fov_x: f64, width: usize, height: usize) -> Self {
        let forward = (target - position).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Self { rotation: Mat3::from_cols(right, down, forward), position, fov_x, width, height }
    }

    fn tan_half(&self) -> (f64, f64) {
        let tx = (0.5 * self.fov_x).tan();
        (tx, tx * self.height as f64 / self.width as f64)
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.col(2)
    }

    /// Ray through the center of pixel `(x, y)`; direction not normalized.
    pub fn generate_ray(&self, x: usize, y: usize) -> Result<Ray> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidInput(format!(
                "pixel ({x}, {y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(x as f64 + 0.5, y as f64 + 0.5))
    }

    /// Ray through continuous image coordinates `(u, v)` in pixels.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let (tx, ty) = self.tan_half();
        let cx = (u / self.width as f64 * 2.0 - 1.0) * tx;
        let cy = (v / self.height as f64 * 2.0 - 1.0) * ty;
        Ray::new(self.position, self.rotation.mul_vec(Vec3::new(cx, cy, 1.0)))
    }

    /// Image coordinates of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let c = self.rotation.transpose_mul_vec(p - self.position);
        if c.z <= 0.0 {
            return None;
        }
        let (tx, ty) = self.tan_half();
        let u = (c.x / c.z / tx + 1.0) * 0.5 * self.width as f64;
        let v = (c.y / c.z / ty + 1.0) * 0.5 * self.height as f64;
        Some((u, v))
    }
}

/// Rendered image plus the per-pixel payloads (row-major).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub payloads: Vec<RayPayload>,
}

/// Renders every pixel center through [`SceneAccel::trace`].
pub fn render(accel: &SceneAccel, camera: &Camera, cfg: &RenderConfig, exec: Execution) -> RenderOutput {
    let rows = map_indexed(exec, camera.height, |y| {
        let mut scratch = Vec::new();
        (0..camera.width)
            .map(|x| {
                let ray = camera.ray_through(x as f64 + 0.5, y as f64 + 0.5);
                accel.trace_with_scratch(&ray, cfg, &mut scratch)
            })
            .collect::<Vec<_>>()
    });
    let payloads: Vec<RayPayload> = rows.into_iter().flatten().collect();
    let image = Image {
        width: camera.width,
        height: camera.height,
        pixels: payloads.iter().map(|p| p.color).collect(),
    };
    RenderOutput { image, payloads }
}

/// Convenience wrapper building the acceleration structure first.
pub fn render_scene(scene: &GaussianScene, camera: &Camera, cfg: &RenderConfig, exec: Execution) -> Result<RenderOutput> {
    let accel = SceneAccel::new(scene, cfg.q)?;
    Ok(render(&accel, camera, cfg, exec))
}
