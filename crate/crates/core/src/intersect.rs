//! Ray / confidence-ellipsoid intersection.
//!
//! The level-`Q` ellipsoid `(x − m)ᵀΣ⁻¹(x − m) = Q` becomes the sphere of
//! radius `√Q` after whitening, so the problem reduces to a ray-sphere test.
//! The discriminant is evaluated through the perpendicular distance of the
//! sphere center to the line, and the root that would suffer cancellation is
//! recovered from the product of roots (Viète) instead of the textbook
//! formula.

use crate::bvh::Aabb;
use crate::error::Result;
use crate::ray::{PreparedGaussian, Ray, WhitenedRay};
use crate::scene::Gaussian;

/// Both roots `(t_near, t_far)` of `‖o′ + t d′‖² = Q`, or `None` when the
/// line misses the sphere.
#[inline]
pub fn sphere_roots(w: &WhitenedRay, q: f64) -> Option<(f64, f64)> {
    let (perp2, od, dd) = w.line_distance_squared();
    let slack = q - perp2;
    if !(slack >= 0.0) {
        return None;
    }
    let sq = (dd * slack).sqrt();
    // sgn(0) taken as +1, so `t_star` is always the root farther from the
    // vertex in the direction away from the origin's projection.
    let t_star = if od >= 0.0 { (-od - sq) / dd } else { (-od + sq) / dd };
    let c = w.origin.norm_squared() - q;
    let t_other = if t_star != 0.0 { c / (dd * t_star) } else { -2.0 * od / dd };
    if t_star <= t_other {
        Some((t_star, t_other))
    } else {
        Some((t_other, t_star))
    }
}

/// Smallest positive intersection parameter of a whitened ray with the
/// sphere of radius `√q`.
#[inline]
pub fn intersect_whitened(w: &WhitenedRay, q: f64) -> Option<f64> {
    let (near, far) = sphere_roots(w, q)?;
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

/// `t₁` of the first ray/ellipsoid intersection at `t > 0`, if any.
pub fn intersect_ellipsoid(ray: &Ray, g: &Gaussian, q: f64) -> Result<Option<f64>> {
    let p = PreparedGaussian::new(g)?;
    Ok(intersect_prepared(ray, &p, q))
}

#[inline]
pub fn intersect_prepared(ray: &Ray, g: &PreparedGaussian, q: f64) -> Option<f64> {
    intersect_whitened(&g.whiten(ray), q)
}

/// Tight axis-aligned box of the level-`q` ellipsoid: `m ± √q·rownorm(R·S)`.
pub fn ellipsoid_aabb(g: &PreparedGaussian, q: f64) -> Aabb {
    let r = &g.rotation;
    let half = crate::linalg::Vec3::new(
        (0..3).map(|k| (r.get(0, k) * g.scale[k]).powi(2)).sum::<f64>().sqrt(),
        (0..3).map(|k| (r.get(1, k) * g.scale[k]).powi(2)).sum::<f64>().sqrt(),
        (0..3).map(|k| (r.get(2, k) * g.scale[k]).powi(2)).sum::<f64>().sqrt(),
    ) * q.sqrt();
    Aabb::new(g.mean - half, g.mean + half)
}
