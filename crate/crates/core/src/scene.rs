//! Trainable scene: Gaussian primitives stored in their raw (pre-activation)
//! parameter space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bvh::Aabb;
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Quaternion, Vec3};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d/dx sigmoid(x) = σ(x)(1 − σ(x)).
#[inline]
pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[inline]
pub fn inverse_sigmoid(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Number of scalar parameters per Gaussian: mean (3), scale logits (3),
/// rotation (4), opacity logit (1), color (3).
pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// One anisotropic Gaussian primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Pre-sigmoid per-axis scales; the activation lies in (0, 1).
    pub scale_logits: Vec3,
    pub rotation: Quaternion,
    pub opacity_logit: f64,
    /// Raw RGB, clamped only when written to an 8-bit image.
    pub color: Vec3,
}

impl Gaussian {
    /// A Gaussian with the given activations rather than logits.
    pub fn from_activations(
        mean: Vec3,
        scale: Vec3,
        rotation: Quaternion,
        opacity: f64,
        color: Vec3,
    ) -> Self {
        Self {
            mean,
            scale_logits: scale.map(inverse_sigmoid),
            rotation,
            opacity_logit: inverse_sigmoid(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.scale_logits.map(sigmoid)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Result<Mat3> {
        self.rotation.rotation_matrix()
    }

    /// Σ = R S Sᵀ Rᵀ.
    pub fn covariance(&self) -> Result<Mat3> {
        let r = self.rotation_matrix()?;
        let s = self.scale();
        let rs = r.mul_mat(&Mat3::from_diagonal(s));
        Ok(rs.mul_mat(&rs.transpose()))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mean.is_finite()
            && self.scale_logits.is_finite()
            && self.rotation.is_finite()
            && self.opacity_logit.is_finite()
            && self.color.is_finite();
        if !finite {
            return Err(Error::InvalidInput("non-finite Gaussian parameter".into()));
        }
        if self.rotation.norm_squared() <= 0.0 {
            return Err(Error::InvalidInput("zero rotation quaternion".into()));
        }
        Ok(())
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let q = self.rotation;
        [
            self.mean.x,
            self.mean.y,
            self.mean.z,
            self.scale_logits.x,
            self.scale_logits.y,
            self.scale_logits.z,
            q.r,
            q.i,
            q.j,
            q.k,
            self.opacity_logit,
            self.color.x,
            self.color.y,
            self.color.z,
        ]
    }

    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            mean: Vec3::new(p[0], p[1], p[2]),
            scale_logits: Vec3::new(p[3], p[4], p[5]),
            rotation: Quaternion::new(p[6], p[7], p[8], p[9]),
            opacity_logit: p[10],
            color: Vec3::new(p[11], p[12], p[13]),
        }
    }
}

/// Covariance of `g`; see [`Gaussian::covariance`].
pub fn covariance(g: &Gaussian) -> Result<Mat3> {
    g.covariance()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub background_color: Vec3,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self { gaussians, background_color: Vec3::ZERO }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::InvalidInput(format!("gaussian {i}: {e}")))?;
        }
        Ok(())
    }

    /// Bounding box of the Gaussian means.
    pub fn mean_bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.gaussians.iter().map(|g| g.mean))
    }

    /// Diagonal length of the mean bounding box, or 1 for degenerate scenes.
    pub fn extent(&self) -> f64 {
        match self.mean_bounds() {
            Some(b) if b.diagonal().norm() > 0.0 => b.diagonal().norm(),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Initial scale activation as a fraction of the box diagonal.
    pub scale_fraction: f64,
    pub opacity: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { scale_fraction: 0.02, opacity: 0.1 }
    }
}

/// `n` Gaussians with uniform means in `bounds`, random orientation, uniform
/// colors and opacity `opts.opacity`. Deterministic in `seed`.
pub fn init_random(n: usize, bounds: &Aabb, seed: u64, opts: &InitOptions) -> Result<GaussianScene> {
    if n == 0 {
        return Err(Error::InvalidInput("cannot initialize an empty scene".into()));
    }
    let size = bounds.diagonal();
    if !(size.x > 0.0 && size.y > 0.0 && size.z > 0.0) || !size.is_finite() {
        return Err(Error::InvalidInput(format!("degenerate bounding box {bounds:?}")));
    }
    let scale = (opts.scale_fraction * size.norm()).clamp(1e-4, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let mean = Vec3::new(
                rng.random_range(bounds.min.x..bounds.max.x),
                rng.random_range(bounds.min.y..bounds.max.y),
                rng.random_range(bounds.min.z..bounds.max.z),
            );
            let q = loop {
                let q = Quaternion::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                if q.norm_squared() > 1e-6 {
                    break q.normalized();
                }
            };
            let color = Vec3::new(rng.random(), rng.random(), rng.random());
            Gaussian::from_activations(mean, Vec3::splat(scale), q, opts.opacity, color)
        })
        .collect();
    Ok(GaussianScene::new(gaussians))
}
