//! Finite-difference check of the analytic scene gradient, reported per
//! parameter group.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::backward::{backward_image, GradContext, Reduction};
use crate::config::{LossConfig, RenderConfig};
use crate::error::Result;
use crate::exec::{map_indexed, Execution};
use crate::image::Image;
use crate::linalg::{Quaternion, Vec3};
use crate::loss::total_loss_and_pixel_grad;
use crate::render::{render, Camera, SceneAccel};
use crate::scene::{Gaussian, GaussianScene, PARAMS_PER_GAUSSIAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Mean,
    ScaleLogits,
    Rotation,
    OpacityLogit,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Mean, ParamGroup::ScaleLogits, ParamGroup::Rotation, ParamGroup::OpacityLogit, ParamGroup::Color];

    /// Group of entry `k` of a parameter row.
    pub fn of(k: usize) -> Self {
        match k {
            0..=2 => ParamGroup::Mean,
            3..=5 => ParamGroup::ScaleLogits,
            6..=9 => ParamGroup::Rotation,
            10 => ParamGroup::OpacityLogit,
            _ => ParamGroup::Color,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Mean => "mean",
            ParamGroup::ScaleLogits => "scale_logits",
            ParamGroup::Rotation => "rotation",
            ParamGroup::OpacityLogit => "opacity_logit",
            ParamGroup::Color => "color",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Number of random scenes; scene `k` has a Gaussian count spread over
    /// `min_gaussians..=max_gaussians`.
    pub scenes: usize,
    pub min_gaussians: usize,
    pub max_gaussians: usize,
    pub width: usize,
    pub height: usize,
    /// Range of the per-axis scale activations of the fixture Gaussians.
    pub scale_range: (f64, f64),
    /// Half-width of the square the fixture means are drawn from; 1.1
    /// roughly fills the fixture camera's view.
    pub spread: f64,
    pub lambda: f64,
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute tolerance used when both sides are below `tiny`.
    pub abs_tol: f64,
    pub tiny: f64,
    /// Fraction of parameters per group that must pass.
    pub pass_fraction: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scenes: 8,
            min_gaussians: 8,
            max_gaussians: 32,
            width: 16,
            height: 16,
            scale_range: (0.05, 0.15),
            spread: 1.1,
            lambda: 0.2,
            step: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            tiny: 1e-8,
            pass_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub checked: usize,
    pub passed: usize,
    /// Largest relative error among parameters not covered by `tiny`.
    pub max_rel_err: f64,
}

impl GroupReport {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub pass_fraction: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.checked > 0 && g.fraction() >= self.pass_fraction)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>8} {:>8} {:>9} {:>12}  result", "group", "checked", "passed", "fraction", "max_rel_err")?;
        for g in &self.groups {
            let ok = g.checked > 0 && g.fraction() >= self.pass_fraction;
            writeln!(
                f,
                "{:<14} {:>8} {:>8} {:>9.4} {:>12.3e}  {}",
                g.group.name(),
                g.checked,
                g.passed,
                g.fraction(),
                g.max_rel_err,
                if ok { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// A random scene of `n` Gaussians in front of a fixed camera and a target
/// image rendered from a perturbed copy of it, so that the loss gradient is
/// nonzero everywhere.
pub fn fixture(seed: u64, n: usize, cfg: &GradcheckConfig) -> Result<(GaussianScene, Camera, Image)> {
    let (width, height, spread) = (cfg.width, cfg.height, cfg.spread);
    let (smin, smax) = cfg.scale_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), 0.8, width, height);
    let random_gaussian = |rng: &mut ChaCha8Rng| {
        let mean = Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-0.6..0.6));
        let scale = Vec3::new(rng.random_range(smin..smax), rng.random_range(smin..smax), rng.random_range(smin..smax));
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let q = if q.norm_squared() < 1e-3 { Quaternion::IDENTITY } else { q };
        let color = Vec3::new(rng.random(), rng.random(), rng.random());
        Gaussian::from_activations(mean, scale, q, rng.random_range(0.2..0.7), color)
    };
    let scene = GaussianScene::new((0..n).map(|_| random_gaussian(&mut rng)).collect());
    let mut target = scene.clone();
    for g in &mut target.gaussians {
        g.mean += Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        g.color = Vec3::new(rng.random(), rng.random(), rng.random());
    }
    let cfg = RenderConfig::default();
    let img = render(&SceneAccel::new(&target, cfg.q)?, &camera, &cfg, Execution::Sequential).image;
    Ok((scene, camera, img))
}

/// Training loss of `scene` against `target`.
pub fn scene_loss(scene: &GaussianScene, camera: &Camera, target: &Image, render_cfg: &RenderConfig, loss: &LossConfig) -> Result<f64> {
    let accel = SceneAccel::new(scene, render_cfg.q)?;
    let img = render(&accel, camera, render_cfg, Execution::Sequential).image;
    Ok(total_loss_and_pixel_grad(&img, target, loss)?.loss)
}

/// Analytic `dL/dθ` as a flat vector in parameter-row layout.
pub fn analytic_gradient(
    scene: &GaussianScene,
    camera: &Camera,
    target: &Image,
    render_cfg: &RenderConfig,
    loss: &LossConfig,
) -> Result<Vec<f64>> {
    let accel = SceneAccel::new(scene, render_cfg.q)?;
    let out = render(&accel, camera, render_cfg, Execution::Sequential);
    let l = total_loss_and_pixel_grad(&out.image, target, loss)?;
    let ctxs = GradContext::for_scene(scene)?;
    let store = backward_image(&out.payloads, &ctxs, camera, render_cfg, &l.pixel_grad, Execution::Sequential, Reduction::Ordered)?;
    Ok(store.flatten())
}

/// Central differences of the loss for every scene parameter.
pub fn numeric_gradient(
    scene: &GaussianScene,
    camera: &Camera,
    target: &Image,
    render_cfg: &RenderConfig,
    loss: &LossConfig,
    h: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let base: Vec<[f64; PARAMS_PER_GAUSSIAN]> = scene.gaussians.iter().map(|g| g.to_params()).collect();
    let eval = |i: usize, k: usize, delta: f64| -> Result<f64> {
        let mut s = scene.clone();
        let mut p = base[i];
        p[k] += delta;
        s.gaussians[i] = Gaussian::from_params(&p);
        scene_loss(&s, camera, target, render_cfg, loss)
    };
    map_indexed(exec, base.len() * PARAMS_PER_GAUSSIAN, |j| {
        let (i, k) = (j / PARAMS_PER_GAUSSIAN, j % PARAMS_PER_GAUSSIAN);
        Ok((eval(i, k, h)? - eval(i, k, -h)?) / (2.0 * h))
    })
    .into_iter()
    .collect()
}

/// Whether analytic `a` agrees with numeric `n`, and the relative error
/// (zero when both are below `tiny`).
pub fn compare(a: f64, n: f64, cfg: &GradcheckConfig) -> (bool, f64) {
    if a.abs() < cfg.tiny && n.abs() < cfg.tiny {
        return ((a - n).abs() < cfg.abs_tol, 0.0);
    }
    let rel = (a - n).abs() / a.abs().max(n.abs());
    (rel < cfg.rel_tol, rel)
}

pub fn run_gradcheck(cfg: &GradcheckConfig, exec: Execution) -> Result<GradcheckReport> {
    let mut groups: Vec<GroupReport> =
        ParamGroup::ALL.iter().map(|&group| GroupReport { group, checked: 0, passed: 0, max_rel_err: 0.0 }).collect();
    let render_cfg = RenderConfig::default();
    let loss = LossConfig { lambda: cfg.lambda, ..LossConfig::default() };
    for k in 0..cfg.scenes {
        let span = cfg.max_gaussians.saturating_sub(cfg.min_gaussians);
        let n = cfg.min_gaussians + if cfg.scenes > 1 { span * k / (cfg.scenes - 1) } else { 0 };
        let (scene, camera, target) = fixture(cfg.seed.wrapping_add(k as u64), n.max(1), cfg)?;
        let analytic = analytic_gradient(&scene, &camera, &target, &render_cfg, &loss)?;
        let numeric = numeric_gradient(&scene, &camera, &target, &render_cfg, &loss, cfg.step, exec)?;
        for (j, (&a, &nv)) in analytic.iter().zip(&numeric).enumerate() {
            let g = &mut groups[ParamGroup::ALL.iter().position(|&x| x == ParamGroup::of(j % PARAMS_PER_GAUSSIAN)).unwrap()];
            let (ok, rel) = compare(a, nv, cfg);
            g.checked += 1;
            g.passed += ok as usize;
            g.max_rel_err = g.max_rel_err.max(rel);
        }
    }
    Ok(GradcheckReport { groups, pass_fraction: cfg.pass_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_passes() {
        let cfg = GradcheckConfig { scenes: 1, min_gaussians: 4, max_gaussians: 4, width: 8, height: 8, ..Default::default() };
        let report = run_gradcheck(&cfg, Execution::Parallel).unwrap();
        assert!(report.passed(), "\n{report}");
        assert_eq!(report.groups[0].checked, 12);
    }

    #[test]
    fn comparison_rules() {
        let cfg = GradcheckConfig::default();
        assert!(compare(1.0, 1.0005, &cfg).0);
        assert!(!compare(1.0, 1.01, &cfg).0);
        assert!(compare(1e-9, -1e-9, &cfg).0);
    }
}
