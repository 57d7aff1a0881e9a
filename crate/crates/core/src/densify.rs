//! Clone / split / prune of Gaussians driven by the world-space gradient of
//! their means. Opacities are never reset.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::backward::GradientStore;
use crate::config::{DensifyConfig, DensifyCriterion};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::optim::AdamState;
use crate::scene::{inverse_sigmoid, GaussianScene};

/// Mean-gradient statistics per Gaussian since the last densification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanGradAccumulator {
    pub sum: Vec<Vec3>,
    pub norm_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl MeanGradAccumulator {
    pub fn new(n: usize) -> Self {
        Self { sum: vec![Vec3::ZERO; n], norm_sum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    /// Adds the mean gradient of every Gaussian that received a gradient in
    /// this iteration.
    pub fn accumulate(&mut self, store: &GradientStore) -> Result<()> {
        if store.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "gradient store for {} gaussians, accumulator for {}",
                store.len(),
                self.len()
            )));
        }
        for (i, g) in store.grads.iter().enumerate() {
            if g.to_array().iter().any(|&v| v != 0.0) {
                self.sum[i] += g.d_mean;
                self.norm_sum[i] += g.d_mean.norm();
                self.count[i] += 1;
            }
        }
        Ok(())
    }

    /// Average mean-gradient vector of Gaussian `i`.
    pub fn mean_vector(&self, i: usize) -> Vec3 {
        if self.count[i] == 0 {
            Vec3::ZERO
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn criterion(&self, i: usize, kind: DensifyCriterion) -> f64 {
        if self.count[i] == 0 {
            return 0.0;
        }
        match kind {
            DensifyCriterion::VectorMean => self.mean_vector(i).norm(),
            DensifyCriterion::MeanOfNorms => self.norm_sum[i] / self.count[i] as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Densifies and prunes in place, remapping the optimizer rows and
/// resetting the accumulator. `extent` scales the gradient and split
/// thresholds; `clone_step` is how far a clone moves against its averaged
/// mean gradient.
pub fn densify_and_prune(
    scene: &mut GaussianScene,
    acc: &mut MeanGradAccumulator,
    adam: &mut AdamState,
    cfg: &DensifyConfig,
    extent: f64,
    clone_step: f64,
    rng: &mut impl Rng,
) -> Result<DensifyReport> {
    let n = scene.len();
    if acc.len() != n || adam.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "scene has {n} gaussians, accumulator {}, optimizer rows {}",
            acc.len(),
            adam.rows()
        )));
    }
    let grad_threshold = cfg.grad_threshold * extent;
    let split_threshold = cfg.split_scale_threshold * extent;
    let mut report = DensifyReport::default();
    let mut kept = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    let mut appended = Vec::new();

    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.opacity() < cfg.prune_opacity_threshold {
            report.pruned += 1;
            continue;
        }
        if acc.criterion(i, cfg.criterion) <= grad_threshold {
            kept.push(*g);
            sources.push(Some(i));
            continue;
        }
        let scale = g.scale();
        if scale.max_component() > split_threshold {
            let r = g.rotation_matrix()?;
            let child_logits = (scale / cfg.split_scale_divisor).map(inverse_sigmoid);
            let child = |rng: &mut dyn rand::RngCore| {
                let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let mut c = *g;
                c.mean = g.mean + r.mul_vec(z.mul_elem(scale));
                c.scale_logits = child_logits;
                c
            };
            kept.push(child(rng));
            sources.push(None);
            appended.push(child(rng));
            report.split += 1;
        } else {
            kept.push(*g);
            sources.push(Some(i));
            let dir = acc.mean_vector(i);
            let mut c = *g;
            if dir.norm() > 0.0 {
                c.mean = g.mean - dir.normalized() * clone_step;
            }
            appended.push(c);
            report.cloned += 1;
        }
    }
    sources.extend(std::iter::repeat_n(None, appended.len()));
    kept.extend(appended);
    *adam = adam.remap_rows(&sources);
    scene.gaussians = kept;
    *acc = MeanGradAccumulator::new(scene.len());
    Ok(report)
}
