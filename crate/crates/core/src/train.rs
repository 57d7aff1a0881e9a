//! Training loop: render → loss → backward → ADAM → densify.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_image, GradContext, Reduction};
use crate::config::TrainConfig;
use crate::densify::{densify_and_prune, DensifyReport, MeanGradAccumulator};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::image::Image;
use crate::loss::{total_loss_with_window, SsimWindow};
use crate::metrics::{psnr, ssim_metric};
use crate::optim::{adam_step, per_parameter_rates, AdamState};
use crate::ply::save_ply;
use crate::render::{render, Camera, SceneAccel};
use crate::scene::{GaussianScene, PARAMS_PER_GAUSSIAN};

/// A posed ground-truth image.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

impl View {
    pub fn new(camera: Camera, image: Image) -> Result<Self> {
        if camera.width != image.width || camera.height != image.height {
            return Err(Error::DimensionMismatch(format!(
                "camera is {}x{}, image is {}x{}",
                camera.width, camera.height, image.width, image.height
            )));
        }
        Ok(Self { camera, image })
    }
}

/// How the inner loops execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub exec: Execution,
    pub reduction: Reduction,
}

impl RunOptions {
    /// Ordered reduction: results are bitwise independent of thread count.
    pub fn deterministic(exec: Execution) -> Self {
        Self { exec, reduction: Reduction::Ordered }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss: f64,
    /// PSNR of the rendered training view before the update.
    pub psnr: f64,
    pub n_gaussians: usize,
    pub wall_ms: f64,
}

/// Quality of a scene on one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub struct Trainer {
    pub scene: GaussianScene,
    pub adam: AdamState,
    pub config: TrainConfig,
    views: Vec<View>,
    opts: RunOptions,
    acc: MeanGradAccumulator,
    window: SsimWindow,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    extent: f64,
    rates: [f64; PARAMS_PER_GAUSSIAN],
    iteration: usize,
    pub densify_log: Vec<(usize, DensifyReport)>,
}

impl Trainer {
    pub fn new(scene: GaussianScene, views: Vec<View>, config: TrainConfig, opts: RunOptions) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::InvalidInput("training needs at least one view".into()));
        }
        if scene.is_empty() {
            return Err(Error::InvalidInput("training needs at least one gaussian".into()));
        }
        scene.validate()?;
        for v in &views {
            if v.camera.width != v.image.width || v.camera.height != v.image.height {
                return Err(Error::DimensionMismatch("view camera and image sizes differ".into()));
            }
        }
        let extent = scene.extent();
        let window = SsimWindow::from_config(&config.loss)?;
        Ok(Self {
            adam: AdamState::for_scene(&scene),
            acc: MeanGradAccumulator::new(scene.len()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            rates: per_parameter_rates(&config.learning_rates, extent),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
            densify_log: Vec::new(),
            scene,
            views,
            config,
            opts,
            window,
            extent,
        })
    }

    /// Scene extent fixed at construction; scales mean rates and thresholds.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn next_view(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let start = Instant::now();
        let it = self.iteration + 1;
        let vi = self.next_view();
        let view = &self.views[vi];
        let cfg = &self.config.render;

        let accel = SceneAccel::new(&self.scene, cfg.q)?;
        let out = render(&accel, &view.camera, cfg, self.opts.exec);
        let loss = total_loss_with_window(&out.image, &view.image, self.config.loss.lambda, &self.window)?;
        if !loss.loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {} at iteration {it} (view {vi}, {} gaussians)",
                loss.loss,
                self.scene.len()
            )));
        }
        let psnr = psnr(&out.image, &view.image)?;

        let ctxs = GradContext::for_scene(&self.scene)?;
        let grads = backward_image(
            &out.payloads,
            &ctxs,
            &view.camera,
            cfg,
            &loss.pixel_grad,
            self.opts.exec,
            self.opts.reduction,
        )?;
        if grads.dropped_nonfinite > 0 {
            log::debug!("iteration {it}: dropped {} non-finite gradient contributions", grads.dropped_nonfinite);
        }
        self.acc.accumulate(&grads)?;
        adam_step(&mut self.scene, &grads, &mut self.adam, &self.rates, &self.config.adam)?;

        let d = &self.config.densify;
        if d.enabled && it >= d.start && it <= self.config.densify_end() && it % d.interval == 0 {
            let clone_step = self.config.learning_rates.mean * self.extent;
            let report = densify_and_prune(
                &mut self.scene,
                &mut self.acc,
                &mut self.adam,
                d,
                self.extent,
                clone_step,
                &mut self.rng,
            )?;
            log::info!(
                "iteration {it}: cloned {}, split {}, pruned {} -> {} gaussians",
                report.cloned,
                report.split,
                report.pruned,
                self.scene.len()
            );
            self.densify_log.push((it, report));
            if self.scene.is_empty() {
                return Err(Error::Training(format!("all gaussians pruned at iteration {it}")));
            }
        }

        self.iteration = it;
        Ok(IterationMetrics {
            iteration: it,
            loss: loss.loss,
            psnr,
            n_gaussians: self.scene.len(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs the remaining iterations, writing a checkpoint every
    /// `checkpoint_interval` iterations when `checkpoint_dir` is given.
    pub fn run(
        &mut self,
        checkpoint_dir: Option<&Path>,
        mut on_iteration: impl FnMut(&IterationMetrics) -> Result<()>,
    ) -> Result<()> {
        while self.iteration < self.config.iterations {
            let m = self.step()?;
            on_iteration(&m)?;
            let every = self.config.checkpoint_interval;
            if let Some(dir) = checkpoint_dir {
                if every > 0 && m.iteration % every == 0 {
                    self.save_checkpoint(dir, &format!("iter_{:06}", m.iteration))?;
                }
            }
        }
        Ok(())
    }

    /// Writes `<tag>.ply`, `<tag>.adam` and `<tag>.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, tag: &str) -> Result<Checkpoint> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ck = Checkpoint::paths(dir, tag);
        save_ply(&self.scene, &ck.ply)?;
        self.adam.save(&ck.adam)?;
        std::fs::write(&ck.config, self.config.to_json()).map_err(|e| Error::io(&ck.config, e))?;
        Ok(ck)
    }

    /// Resumes from a checkpoint's scene and optimizer state.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let scene = crate::ply::load_ply(&ck.ply)?;
        let adam = AdamState::load(&ck.adam)?;
        if adam.rows() != scene.len() || adam.m.len() != scene.len() * PARAMS_PER_GAUSSIAN {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint scene has {} gaussians, optimizer state {} rows",
                scene.len(),
                adam.rows()
            )));
        }
        self.acc = MeanGradAccumulator::new(scene.len());
        self.scene = scene;
        self.adam = adam;
        Ok(())
    }

    pub fn evaluate(&self, views: &[View]) -> Result<Vec<ViewMetrics>> {
        evaluate(&self.scene, views, &self.config, self.opts.exec)
    }
}

/// File locations of one checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub ply: PathBuf,
    pub adam: PathBuf,
    pub config: PathBuf,
}

impl Checkpoint {
    pub fn paths(dir: &Path, tag: &str) -> Self {
        Self {
            ply: dir.join(format!("{tag}.ply")),
            adam: dir.join(format!("{tag}.adam")),
            config: dir.join(format!("{tag}.json")),
        }
    }
}

/// Loss, PSNR and SSIM of `scene` on each view.
pub fn evaluate(scene: &GaussianScene, views: &[View], config: &TrainConfig, exec: Execution) -> Result<Vec<ViewMetrics>> {
    let accel = SceneAccel::new(scene, config.render.q)?;
    let window = SsimWindow::from_config(&config.loss)?;
    views
        .iter()
        .map(|v| {
            let img = render(&accel, &v.camera, &config.render, exec).image;
            Ok(ViewMetrics {
                loss: total_loss_with_window(&img, &v.image, config.loss.lambda, &window)?.loss,
                psnr: psnr(&img, &v.image)?,
                ssim: ssim_metric(&img, &v.image)?,
            })
        })
        .collect()
}

/// Trains `scene` for `config.iterations` iterations and returns it with
/// the per-iteration log.
pub fn train(
    scene: GaussianScene,
    views: Vec<View>,
    config: TrainConfig,
    opts: RunOptions,
) -> Result<(GaussianScene, Vec<IterationMetrics>)> {
    let mut trainer = Trainer::new(scene, views, config, opts)?;
    let mut log = Vec::new();
    trainer.run(None, |m| {
        log.push(m.clone());
        Ok(())
    })?;
    Ok((trainer.scene, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Quaternion, Vec3};
    use crate::render::render_scene;
    use crate::scene::Gaussian;

    fn target() -> (GaussianScene, View) {
        let g = Gaussian::from_activations(Vec3::ZERO, Vec3::new(0.3, 0.2, 0.25), Quaternion::IDENTITY, 0.8, Vec3::new(0.9, 0.4, 0.2));
        let scene = GaussianScene::new(vec![g]);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), 0.6, 32, 32);
        let cfg = TrainConfig::default();
        let img = render_scene(&scene, &cam, &cfg.render, Execution::Sequential).unwrap().image;
        (scene, View::new(cam, img).unwrap())
    }

    #[test]
    fn zero_iterations_returns_initial_scene() {
        let (scene, view) = target();
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        let (out, log) = train(scene.clone(), vec![view], cfg, RunOptions::default()).unwrap();
        assert_eq!(out, scene);
        assert!(log.is_empty());
    }

    #[test]
    fn single_view_overfit_decreases_loss() {
        let (scene, view) = target();
        let mut init = scene.clone();
        init.gaussians[0].mean += Vec3::new(0.05, -0.04, 0.02);
        init.gaussians[0].color = Vec3::new(0.6, 0.6, 0.6);
        let mut cfg = TrainConfig { iterations: 50, ..Default::default() };
        cfg.densify.enabled = false;
        cfg.learning_rates.mean = 5e-4;
        cfg.learning_rates.color = 5e-3;
        let (_, log) = train(init, vec![view], cfg, RunOptions::default()).unwrap();
        let increases = log.windows(2).filter(|w| w[1].loss >= w[0].loss).count();
        assert!(increases <= 5, "{increases} non-decreasing steps");
        assert!(log.last().unwrap().loss < log[0].loss);
    }

    #[test]
    fn empty_views_rejected() {
        let (scene, _) = target();
        assert!(Trainer::new(scene, vec![], TrainConfig::default(), RunOptions::default()).is_err());
    }
}
