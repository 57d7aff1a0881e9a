//! Sequential vs. parallel execution of the forward pass, the backward pass
//! and the training loss. Without the `parallel` feature both variants run
//! sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raysplat::backward::{backward_image, GradContext, Reduction};
use raysplat::loss::total_loss_and_pixel_grad;
use raysplat::render::render;
use raysplat::{Camera, Execution, Gaussian, GaussianScene, LossConfig, Quaternion, RenderConfig, SceneAccel, Vec3};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scene(n: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut v = |lo: f64, hi: f64| Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi));
    GaussianScene::new(
        (0..n)
            .map(|_| {
                let (mean, scale, color, q) = (v(-1.0, 1.0), v(0.03, 0.12), v(0.0, 1.0), v(-1.0, 1.0));
                Gaussian::from_activations(mean, scale, Quaternion::new(1.0, q.x, q.y, q.z), 0.7, color)
            })
            .collect(),
    )
}

fn camera() -> Camera {
    Camera::look_at(Vec3::new(0.0, 0.0, -3.5), Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), 0.9, 128, 128)
}

fn bench(c: &mut Criterion) {
    let scene = scene(2000);
    let cam = camera();
    let cfg = RenderConfig::default();
    let loss_cfg = LossConfig::default();
    let accel = SceneAccel::new(&scene, cfg.q).unwrap();
    let out = render(&accel, &cam, &cfg, Execution::Parallel);
    let target = render(&SceneAccel::new(&self::scene(1500), cfg.q).unwrap(), &cam, &cfg, Execution::Parallel).image;
    let loss = total_loss_and_pixel_grad(&out.image, &target, &loss_cfg).unwrap();
    let ctxs = GradContext::for_scene(&scene).unwrap();

    let mut g = c.benchmark_group("render_128x128_2000");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| render(&accel, &cam, &cfg, black_box(exec))));
    }
    g.finish();

    let mut g = c.benchmark_group("backward_128x128_2000");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        for (rname, reduction) in [("ordered", Reduction::Ordered), ("unordered", Reduction::Unordered)] {
            g.bench_function(BenchmarkId::new(name, rname), |b| {
                b.iter(|| backward_image(&out.payloads, &ctxs, &cam, &cfg, &loss.pixel_grad, black_box(exec), reduction).unwrap())
            });
        }
    }
    g.finish();

    // The loss and its pixel gradient have no strategy parameter; they are
    // measured once for scale.
    let mut g = c.benchmark_group("loss_128x128");
    g.bench_function("l2_dssim_with_gradient", |b| {
        b.iter(|| total_loss_and_pixel_grad(black_box(&out.image), &target, &loss_cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
