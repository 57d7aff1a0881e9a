use proptest::prelude::*;

use raysplat::bvh::{collect_hits, Bvh};
use raysplat::image::{Image, Plane};
use raysplat::intersect::intersect_prepared;
use raysplat::loss::{mean_ssim, total_loss_and_pixel_grad, SsimWindow};
use raysplat::ply::{read_ply, write_ply};
use raysplat::ray::prepare_scene;
use raysplat::render::SENTINEL;
use raysplat::scene::PARAMS_PER_GAUSSIAN;
use raysplat::{Gaussian, GaussianScene, LossConfig, Quaternion, Ray, RenderConfig, SceneAccel, Vec3, DEFAULT_Q};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn quaternion() -> impl Strategy<Value = Quaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(a, b, c, d)| a * a + b * b + c * c + d * d > 0.05)
        .prop_map(|(a, b, c, d)| Quaternion::new(a, b, c, d))
}

fn gaussian() -> impl Strategy<Value = Gaussian> {
    (vec3(-1.0, 1.0), vec3(-4.0, -1.0), quaternion(), -3.0..4.0f64, vec3(0.0, 1.0)).prop_map(|(mean, s, rotation, o, color)| {
        Gaussian { mean, scale_logits: s, rotation, opacity_logit: o, color }
    })
}

fn scene(max: usize) -> impl Strategy<Value = GaussianScene> {
    prop::collection::vec(gaussian(), 1..max).prop_map(GaussianScene::new)
}

fn ray() -> impl Strategy<Value = Ray> {
    (vec3(-1.0, 1.0), vec3(-0.5, 0.5)).prop_map(|(dir, target)| {
        let origin = dir.normalized() * 4.0;
        Ray::new(origin, target - origin)
    })
}

fn plane(w: usize, h: usize) -> impl Strategy<Value = Plane> {
    prop::collection::vec(0.0..1.0f64, w * h).prop_map(move |data| Plane { width: w, height: h, data })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ply_round_trip_is_bit_exact(s in scene(20)) {
        let mut buf = Vec::new();
        write_ply(&s, &mut buf).unwrap();
        let back = read_ply(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn params_round_trip(g in gaussian()) {
        let p: [f64; PARAMS_PER_GAUSSIAN] = g.to_params();
        prop_assert_eq!(Gaussian::from_params(&p), g);
    }

    #[test]
    fn bvh_finds_exactly_the_brute_force_hits(s in scene(40), r in ray()) {
        let gs = prepare_scene(&s).unwrap();
        let bvh = Bvh::for_gaussians(&gs, DEFAULT_Q);
        let mut hits = Vec::new();
        collect_hits(&bvh, &gs, &r, DEFAULT_Q, &mut hits);
        let mut got: Vec<(usize, f64)> = hits.iter().map(|h| (h.gaussian_index, h.t_entry)).collect();
        got.sort_by_key(|h| h.0);
        let want: Vec<(usize, f64)> =
            gs.iter().enumerate().filter_map(|(i, g)| intersect_prepared(&r, g, DEFAULT_Q).map(|t| (i, t))).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn rotation_is_orthonormal_and_scale_invariant(q in quaternion(), k in 0.1..10.0f64) {
        let r = q.rotation_matrix().unwrap();
        let rtr = r.transpose().mul_mat(&r);
        prop_assert!(rtr.max_abs_diff(&raysplat::Mat3::IDENTITY) < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        let scaled = Quaternion::new(q.r * k, q.i * k, q.j * k, q.k * k).rotation_matrix().unwrap();
        prop_assert!(scaled.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn payload_invariants(s in scene(30), r in ray(), cap in 1usize..12, e1 in 1e-6..0.5f64) {
        let accel = SceneAccel::new(&s, DEFAULT_Q).unwrap();
        let cfg = RenderConfig { max_hits: cap, epsilon1: e1, ..RenderConfig::default() };
        let p = accel.trace(&r, &cfg);
        prop_assert!(p.indices.len() <= cap);
        prop_assert!(p.indices.iter().rev().skip(1).all(|&i| i != SENTINEL));
        prop_assert_eq!(p.hits().count(), p.hit_count);
        prop_assert!(p.phase1_count <= p.hit_count);
        prop_assert_eq!(p.second_phase, p.phase1_count < p.hit_count || p.transmittance < e1);
        prop_assert!((0.0..=1.0).contains(&p.transmittance));
        prop_assert!(p.color.is_finite());
    }

    #[test]
    fn separable_convolution_matches_direct(p in plane(13, 9), sigma in 0.5..3.0f64, radius in 0usize..6) {
        let w = SsimWindow::gaussian(radius, sigma).unwrap();
        let (a, b) = (w.convolve(&p), w.convolve_direct(&p));
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn ssim_is_symmetric_and_maximal_on_identity(a in plane(12, 12), b in plane(12, 12)) {
        let w = SsimWindow::gaussian(5, 1.5).unwrap();
        prop_assert!((mean_ssim(&a, &a, &w).unwrap() - 1.0).abs() < 1e-12);
        let ab = mean_ssim(&a, &b, &w).unwrap();
        prop_assert!((ab - mean_ssim(&b, &a, &w).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn total_loss_is_nonnegative_and_zero_on_match(a in plane(10, 8), b in plane(10, 8)) {
        let img = Image::from_channels(&[a.clone(), b.clone(), a.clone()]);
        let other = Image::from_channels(&[b.clone(), a.clone(), b]);
        let cfg = LossConfig::default();
        prop_assert!(total_loss_and_pixel_grad(&img, &other, &cfg).unwrap().loss >= -1e-15);
        let same = total_loss_and_pixel_grad(&img, &img, &cfg).unwrap();
        prop_assert!(same.loss.abs() < 1e-12);
        prop_assert!(same.pixel_grad.iter().all(|g| g.norm() < 1e-12));
    }

    #[test]
    fn raw_dump_round_trip(pixels in prop::collection::vec(vec3(-2.0, 2.0), 12)) {
        let img = Image::from_pixels(4, 3, pixels).unwrap();
        let mut buf = Vec::new();
        img.write_raw(&mut buf).unwrap();
        prop_assert_eq!(Image::read_raw(&mut buf.as_slice()).unwrap(), img);
    }
}
