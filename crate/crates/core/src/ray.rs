//! Rays and the per-Gaussian whitening transform `x ↦ S⁻¹Rᵀ(x − m)`.

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scene::{sigmoid, Gaussian, GaussianScene};

/// `r(t) = origin + t·direction`. The direction need not be unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// A ray expressed in the frame where one Gaussian is the unit isotropic
/// Gaussian centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhitenedRay {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl WhitenedRay {
    /// Squared distance from the whitened origin (the Gaussian mean) to the
    /// line, together with `⟨o′,d′⟩` and `⟨d′,d′⟩`.
    #[inline]
    pub fn line_distance_squared(&self) -> (f64, f64, f64) {
        let od = self.origin.dot(self.direction);
        let dd = self.direction.norm_squared();
        let perp = self.origin - self.direction * (od / dd);
        (perp.norm_squared(), od, dd)
    }
}

/// Gaussian with its rotation matrix and activations evaluated once, so the
/// per-ray kernels do not re-derive them.
#[derive(Debug, Clone, Copy)]
pub struct PreparedGaussian {
    pub mean: Vec3,
    pub rotation: Mat3,
    pub scale: Vec3,
    pub inv_scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
}

impl PreparedGaussian {
    pub fn new(g: &Gaussian) -> Result<Self> {
        let scale = g.scale();
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(Error::InvalidInput(format!("non-positive scale {scale:?}")));
        }
        Ok(Self {
            mean: g.mean,
            rotation: g.rotation_matrix()?,
            scale,
            inv_scale: scale.map(|s| 1.0 / s),
            opacity: sigmoid(g.opacity_logit),
            color: g.color,
        })
    }

    #[inline]
    pub fn whiten(&self, ray: &Ray) -> WhitenedRay {
        let o = self.rotation.transpose_mul_vec(ray.origin - self.mean);
        let d = self.rotation.transpose_mul_vec(ray.direction);
        WhitenedRay { origin: o.mul_elem(self.inv_scale), direction: d.mul_elem(self.inv_scale) }
    }

    /// Whitened coordinates of a point.
    #[inline]
    pub fn whiten_point(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose_mul_vec(p - self.mean).mul_elem(self.inv_scale)
    }
}

/// Per-scene cache of prepared Gaussians, indexed like the scene.
pub fn prepare_scene(scene: &GaussianScene) -> Result<Vec<PreparedGaussian>> {
    scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            PreparedGaussian::new(g).map_err(|e| Error::InvalidInput(format!("gaussian {i}: {e}")))
        })
        .collect()
}

/// `o′ = S⁻¹Rᵀ(o − m)`, `d′ = S⁻¹Rᵀd`.
pub fn whiten(ray: &Ray, g: &Gaussian) -> Result<WhitenedRay> {
    Ok(PreparedGaussian::new(g)?.whiten(ray))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Quaternion;
    use crate::scene::inverse_sigmoid;

    #[test]
    fn identity_gaussian_whitening_is_identity() {
        // scale activation 1 is unreachable through the sigmoid, so use a
        // prepared Gaussian directly.
        let g = PreparedGaussian {
            mean: Vec3::ZERO,
            rotation: Mat3::IDENTITY,
            scale: Vec3::ONE,
            inv_scale: Vec3::ONE,
            opacity: 1.0,
            color: Vec3::ZERO,
        };
        let ray = Ray::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0));
        let w = g.whiten(&ray);
        assert_eq!(w.origin, ray.origin);
        assert_eq!(w.direction, ray.direction);
    }

    #[test]
    fn anisotropic_whitening() {
        let g = PreparedGaussian {
            mean: Vec3::X,
            rotation: Mat3::IDENTITY,
            scale: Vec3::new(2.0, 1.0, 1.0),
            inv_scale: Vec3::new(0.5, 1.0, 1.0),
            opacity: 1.0,
            color: Vec3::ZERO,
        };
        let w = g.whiten(&Ray::new(Vec3::new(3.0, 0.0, 0.0), Vec3::X));
        assert_eq!(w.origin, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(w.direction, Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn whiten_rejects_zero_quaternion() {
        let g = Gaussian {
            mean: Vec3::ZERO,
            scale_logits: Vec3::splat(inverse_sigmoid(0.3)),
            rotation: Quaternion::new(0.0, 0.0, 0.0, 0.0),
            opacity_logit: 0.0,
            color: Vec3::ZERO,
        };
        assert!(whiten(&Ray::new(Vec3::ZERO, Vec3::X), &g).is_err());
    }
}
