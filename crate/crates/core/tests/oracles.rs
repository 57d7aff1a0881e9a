//! Library routines checked against independent reference computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use raysplat::backward::{GaussianGrad, GradientStore};
use raysplat::compose::mesh::{intersect_triangle, Material, Mesh};
use raysplat::compose::{ComposeConfig, Composer, PointLight};
use raysplat::config::{AdamConfig, DensifyConfig};
use raysplat::densify::{densify_and_prune, MeanGradAccumulator};
use raysplat::image::Image;
use raysplat::metrics::psnr;
use raysplat::optim::AdamState;
use raysplat::scene::PARAMS_PER_GAUSSIAN;
use raysplat::{Camera, Execution, Gaussian, GaussianScene, Quaternion, Ray, RenderConfig, SceneAccel, Vec3, DEFAULT_Q};

fn uniform_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

#[test]
fn ellipsoid_level_is_the_chi_squared_quantile() {
    let q = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    assert!((q - DEFAULT_Q).abs() < 1e-9, "{q} vs {DEFAULT_Q}");
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut state = AdamState::new(1);
    let mut x = [1.0];
    for _ in 0..100 {
        let g = [2.0 * x[0]];
        state.step(&mut x, &g, |_| 0.1, &AdamConfig::default()).unwrap();
    }
    assert!(x[0].abs() < 0.05, "x = {}", x[0]);
}

#[test]
fn psnr_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a: Vec<Vec3> = (0..48).map(|_| uniform_vec(&mut rng, 0.0, 1.0)).collect();
        let b: Vec<Vec3> = (0..48).map(|_| uniform_vec(&mut rng, 0.0, 1.0)).collect();
        let mut sum = 0.0;
        for (p, q) in a.iter().zip(&b) {
            for c in 0..3 {
                sum += (p.to_array()[c] - q.to_array()[c]).powi(2);
            }
        }
        let want = 10.0 * (1.0 / (sum / 144.0)).log10();
        let got = psnr(&Image::from_pixels(8, 6, a).unwrap(), &Image::from_pixels(8, 6, b).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn densify_bookkeeping() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = DensifyConfig::default();
    for round in 0..50 {
        let n = rng.random_range(1..40);
        let gaussians: Vec<Gaussian> = (0..n)
            .map(|_| {
                Gaussian::from_activations(
                    uniform_vec(&mut rng, -1.0, 1.0),
                    uniform_vec(&mut rng, 0.001, 0.05),
                    Quaternion::new(1.0, rng.random(), rng.random(), rng.random()),
                    if rng.random_bool(0.2) { 0.001 } else { rng.random_range(0.1..0.9) },
                    uniform_vec(&mut rng, 0.0, 1.0),
                )
            })
            .collect();
        let mut scene = GaussianScene::new(gaussians.clone());
        let mut acc = MeanGradAccumulator::new(n);
        let mut store = GradientStore::zeros(n);
        for i in 0..n {
            if rng.random_bool(0.5) {
                store.add(i, &GaussianGrad { d_mean: uniform_vec(&mut rng, -1e-3, 1e-3), ..Default::default() });
            }
        }
        acc.accumulate(&store).unwrap();
        // Tag every optimizer row with its Gaussian's index.
        let mut adam = AdamState::for_scene(&scene);
        for (k, m) in adam.m.iter_mut().enumerate() {
            *m = (k / PARAMS_PER_GAUSSIAN) as f64 + 1.0;
        }
        let r = densify_and_prune(&mut scene, &mut acc, &mut adam, &cfg, 2.0, 1e-3, &mut rng).unwrap();

        assert_eq!(scene.len(), n - r.pruned + r.cloned + r.split, "round {round}");
        assert_eq!(adam.rows(), scene.len());
        assert_eq!(acc.len(), scene.len());
        assert!(acc.count.iter().all(|&c| c == 0));
        // Rows that still hold an original Gaussian keep its moments; all
        // other rows start from zero.
        for (k, g) in scene.gaussians.iter().enumerate() {
            let tag = adam.m[k * PARAMS_PER_GAUSSIAN];
            if tag != 0.0 {
                assert_eq!(*g, gaussians[tag as usize - 1], "round {round}, row {k}");
            }
        }
        let kept_originals = adam.m.iter().step_by(PARAMS_PER_GAUSSIAN).filter(|&&t| t != 0.0).count();
        assert_eq!(kept_originals, n - r.pruned - r.split);
        assert!(scene.gaussians.iter().all(|g| g.opacity() >= cfg.prune_opacity_threshold));
    }
}

/// Plane intersection followed by a barycentric inside test.
fn triangle_oracle(ray: &Ray, v: [Vec3; 3]) -> Option<(f64, f64)> {
    let n = (v[1] - v[0]).cross(v[2] - v[0]);
    let denom = n.dot(ray.direction);
    let t = n.dot(v[0] - ray.origin) / denom;
    let p = ray.at(t);
    let area = n.norm_squared();
    let w0 = (v[1] - p).cross(v[2] - p).dot(n) / area;
    let w1 = (v[2] - p).cross(v[0] - p).dot(n) / area;
    let w2 = 1.0 - w0 - w1;
    let margin = w0.min(w1).min(w2);
    let cos = denom.abs() / (n.norm() * ray.direction.norm());
    Some((t, margin)).filter(|_| cos > 1e-6)
}

#[test]
fn triangle_intersection_matches_plane_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut checked, mut hits) = (0, 0);
    for _ in 0..100_000 {
        let v = [uniform_vec(&mut rng, -1.0, 1.0), uniform_vec(&mut rng, -1.0, 1.0), uniform_vec(&mut rng, -1.0, 1.0)];
        let origin = uniform_vec(&mut rng, -3.0, 3.0);
        let ray = Ray::new(origin, uniform_vec(&mut rng, -0.7, 0.7) - origin);
        let Some((t, margin)) = triangle_oracle(&ray, v) else { continue };
        // Skip cases within rounding distance of an edge or of the origin.
        if margin.abs() < 1e-7 || t.abs() < 1e-9 {
            continue;
        }
        checked += 1;
        let expect_hit = margin > 0.0 && t > 0.0;
        let got = intersect_triangle(&ray, v[0], v[1], v[2]);
        assert_eq!(got.is_some(), expect_hit, "ray {ray:?} triangle {v:?}");
        if let Some(h) = got {
            hits += 1;
            assert!((h.t - t).abs() <= 1e-9 * t.abs(), "{} vs {t}", h.t);
            let p = v[0] * h.barycentric.x + v[1] * h.barycentric.y + v[2] * h.barycentric.z;
            assert!((p - ray.at(h.t)).norm() < 1e-9);
        }
    }
    assert!(checked > 90_000 && hits > 10_000, "{checked} checked, {hits} hits");
}

fn single(mean: Vec3, scale: f64, opacity: f64) -> GaussianScene {
    GaussianScene::new(vec![Gaussian::from_activations(mean, Vec3::splat(scale), Quaternion::IDENTITY, opacity, Vec3::ONE)])
}

#[test]
fn shadow_transmission_matches_closed_form() {
    let light = PointLight { position: Vec3::new(0.0, 4.0, 0.0), intensity: Vec3::ONE };
    let point = Vec3::new(0.0, 0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let s = rng.random_range(0.05..0.3);
        let o = rng.random_range(0.1..0.99);
        let offset = rng.random_range(-0.5..0.5);
        let mean = Vec3::new(offset, rng.random_range(0.5..3.5), 0.0);
        let accel = SceneAccel::new(&single(mean, s, o), DEFAULT_Q).unwrap();
        let composer = Composer::new(&accel, Vec::new(), Vec::new(), ComposeConfig::default());
        // Isotropic Gaussian: the squared whitened distance to the vertical
        // segment is offset²/s², and the segment is hit when that is below Q.
        let d2 = offset * offset / (s * s);
        let want = if d2 < DEFAULT_Q { 1.0 - o * (-0.5 * d2).exp() } else { 1.0 };
        let got = composer.shadow_factor(point, &light);
        assert!((got - Vec3::splat(want)).norm() < 1e-12, "{got:?} vs {want}");
    }

    // Beyond the light the Gaussian does not shadow.
    let accel = SceneAccel::new(&single(Vec3::new(0.0, 6.0, 0.0), 0.2, 0.9), DEFAULT_Q).unwrap();
    let composer = Composer::new(&accel, Vec::new(), Vec::new(), ComposeConfig::default());
    assert_eq!(composer.shadow_factor(point, &light), Vec3::ONE);

    // Opaque and glass blockers.
    let empty = SceneAccel::new(&GaussianScene::new(Vec::new()), DEFAULT_Q).unwrap();
    let slab = |m: Material| {
        Mesh::quad(
            [Vec3::new(-1.0, 2.0, -1.0), Vec3::new(1.0, 2.0, -1.0), Vec3::new(1.0, 2.0, 1.0), Vec3::new(-1.0, 2.0, 1.0)],
            m,
        )
        .unwrap()
    };
    let opaque = Composer::new(&empty, vec![slab(Material::diffuse(Vec3::ONE))], Vec::new(), ComposeConfig::default());
    assert_eq!(opaque.shadow_factor(point, &light), Vec3::ZERO);
    let tint = Vec3::new(0.9, 0.5, 0.2);
    let glass = Composer::new(&empty, vec![slab(Material::glass(1.5, tint))], Vec::new(), ComposeConfig::default());
    assert_eq!(glass.shadow_factor(point, &light), tint);
}

#[test]
fn composition_does_not_create_energy() {
    let bg = Vec3::new(0.5, 0.4, 0.3);
    let render = RenderConfig { background_color: bg, ..RenderConfig::default() };
    let empty = SceneAccel::new(&GaussianScene::new(Vec::new()), DEFAULT_Q).unwrap();
    let meshes = vec![
        Mesh::uv_sphere(Vec3::new(-0.6, 0.0, 0.0), 0.5, 24, 12, Material::glass(1.5, Vec3::ONE)).unwrap(),
        Mesh::uv_sphere(Vec3::new(0.6, 0.0, 0.0), 0.5, 24, 12, Material::mirror()).unwrap(),
    ];
    let composer = Composer::new(&empty, meshes, Vec::new(), ComposeConfig { render, max_depth: 8 });
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), 1.0, 40, 30);
    let img = composer.render(&cam, Execution::Parallel);
    for p in &img.pixels {
        for (c, b) in p.to_array().iter().zip(bg.to_array()) {
            assert!((0.0..=b + 1e-12).contains(c), "{p:?} exceeds background {bg:?}");
        }
    }

    // A white diffuse floor under a unit light never exceeds the light.
    let floor = Mesh::quad(
        [Vec3::new(-5.0, 1.0, -5.0), Vec3::new(5.0, 1.0, -5.0), Vec3::new(5.0, 1.0, 5.0), Vec3::new(-5.0, 1.0, 5.0)],
        Material::diffuse(Vec3::ONE),
    )
    .unwrap();
    let light = PointLight { position: Vec3::new(0.0, -2.0, 0.0), intensity: Vec3::ONE };
    let lit = Composer::new(&empty, vec![floor], vec![light], ComposeConfig::default()).render(&cam, Execution::Sequential);
    assert!(lit.pixels.iter().all(|p| p.max_component() <= 1.0 + 1e-12));
    assert!(lit.pixels.iter().any(|p| p.max_component() > 0.5));
}
