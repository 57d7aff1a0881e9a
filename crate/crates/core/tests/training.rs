use raysplat::optim::AdamState;
use raysplat::ply::load_ply;
use raysplat::render::render_scene;
use raysplat::train::{Checkpoint, RunOptions, Trainer, View};
use raysplat::{Camera, Execution, Gaussian, GaussianScene, Quaternion, TrainConfig, Vec3};

fn setup(iterations: usize) -> (GaussianScene, Vec<View>, TrainConfig) {
    let gt = GaussianScene::new(vec![
        Gaussian::from_activations(Vec3::ZERO, Vec3::splat(0.25), Quaternion::IDENTITY, 0.8, Vec3::new(0.9, 0.3, 0.1)),
        Gaussian::from_activations(Vec3::new(0.4, 0.2, 0.1), Vec3::splat(0.15), Quaternion::IDENTITY, 0.7, Vec3::new(0.1, 0.8, 0.4)),
    ]);
    let mut cfg = TrainConfig { iterations, checkpoint_interval: 4, ..TrainConfig::default() };
    cfg.densify.enabled = false;
    let views = [-3.0, 3.0]
        .iter()
        .map(|&z| {
            let cam = Camera::look_at(Vec3::new(0.5, 0.0, z), Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), 0.7, 24, 24);
            View::new(cam, render_scene(&gt, &cam, &cfg.render, Execution::Sequential).unwrap().image).unwrap()
        })
        .collect();
    let mut init = gt;
    for g in &mut init.gaussians {
        g.color = Vec3::splat(0.5);
    }
    (init, views, cfg)
}

#[test]
fn run_writes_checkpoints_that_restore() {
    let dir = tempfile::tempdir().unwrap();
    let (init, views, cfg) = setup(8);
    let mut trainer = Trainer::new(init, views.clone(), cfg.clone(), RunOptions::deterministic(Execution::Sequential)).unwrap();
    let mut seen = Vec::new();
    trainer
        .run(Some(dir.path()), |m| {
            seen.push(m.iteration);
            Ok(())
        })
        .unwrap();
    assert_eq!(seen, (1..=8).collect::<Vec<_>>());
    for tag in ["iter_000004", "iter_000008"] {
        let ck = Checkpoint::paths(dir.path(), tag);
        assert!(ck.ply.exists() && ck.adam.exists() && ck.config.exists(), "{tag}");
    }

    let last = Checkpoint::paths(dir.path(), "iter_000008");
    assert_eq!(load_ply(&last.ply).unwrap(), trainer.scene);
    assert_eq!(AdamState::load(&last.adam).unwrap(), trainer.adam);
    assert_eq!(TrainConfig::load(&last.config).unwrap(), cfg);

    let (fresh, _, _) = setup(8);
    let mut other = Trainer::new(fresh, views, cfg, RunOptions::default()).unwrap();
    other.restore(&last).unwrap();
    assert_eq!(other.scene, trainer.scene);
    assert_eq!(other.adam, trainer.adam);
}

#[test]
fn restore_rejects_mismatched_optimizer_state() {
    let dir = tempfile::tempdir().unwrap();
    let (init, views, cfg) = setup(1);
    let mut trainer = Trainer::new(init, views, cfg, RunOptions::default()).unwrap();
    let ck = trainer.save_checkpoint(dir.path(), "bad").unwrap();
    AdamState::new(3 * raysplat::scene::PARAMS_PER_GAUSSIAN).save(&ck.adam).unwrap();
    assert!(trainer.restore(&ck).is_err());
}

#[test]
fn training_improves_the_training_views() {
    let (init, views, cfg) = setup(60);
    let mut trainer = Trainer::new(init, views.clone(), cfg, RunOptions::default()).unwrap();
    let before = trainer.evaluate(&views).unwrap();
    trainer.run(None, |_| Ok(())).unwrap();
    let after = trainer.evaluate(&views).unwrap();
    for (b, a) in before.iter().zip(&after) {
        assert!(a.loss < b.loss && a.psnr > b.psnr, "{b:?} -> {a:?}");
    }
}
