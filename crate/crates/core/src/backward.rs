//! Analytic backward pass.
//!
//! Each ray's index buffer is replayed front to back. For color-contributing
//! hits `dI/dα` follows an O(1) recurrence seeded by the final pixel color;
//! at the last meaningful Gaussian (transmittance fell below `ε₁`, or the
//! recurrence is not finite) it is evaluated directly from the recorded
//! tail instead. `dα/dθ` is the derivative of the maximum response with
//! respect to the Gaussian's raw parameters.

use std::io::{Read, Write};

use crate::config::RenderConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::{Mat3, Vec3};
use crate::ray::{PreparedGaussian, Ray};
use crate::render::{Camera, RayPayload};
use crate::scene::{sigmoid_derivative, Gaussian, GaussianScene, PARAMS_PER_GAUSSIAN};

/// Gradient with respect to one Gaussian's raw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub d_mean: Vec3,
    pub d_scale_logits: Vec3,
    pub d_rotation: [f64; 4],
    pub d_opacity_logit: f64,
    pub d_color: Vec3,
}

impl GaussianGrad {
    /// Same layout as [`Gaussian::to_params`].
    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut out = [0.0; PARAMS_PER_GAUSSIAN];
        out[0..3].copy_from_slice(&self.d_mean.to_array());
        out[3..6].copy_from_slice(&self.d_scale_logits.to_array());
        out[6..10].copy_from_slice(&self.d_rotation);
        out[10] = self.d_opacity_logit;
        out[11..14].copy_from_slice(&self.d_color.to_array());
        out
    }

    pub fn from_array(a: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            d_mean: Vec3::new(a[0], a[1], a[2]),
            d_scale_logits: Vec3::new(a[3], a[4], a[5]),
            d_rotation: [a[6], a[7], a[8], a[9]],
            d_opacity_logit: a[10],
            d_color: Vec3::new(a[11], a[12], a[13]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    fn accumulate(&mut self, o: &GaussianGrad) {
        self.d_mean += o.d_mean;
        self.d_scale_logits += o.d_scale_logits;
        for k in 0..4 {
            self.d_rotation[k] += o.d_rotation[k];
        }
        self.d_opacity_logit += o.d_opacity_logit;
        self.d_color += o.d_color;
    }
}

/// Per-Gaussian gradient accumulators, indexed like the scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientStore {
    pub grads: Vec<GaussianGrad>,
    /// Contributions discarded because they were not finite.
    pub dropped_nonfinite: usize,
}

impl GradientStore {
    pub fn zeros(n: usize) -> Self {
        Self { grads: vec![GaussianGrad::default(); n], dropped_nonfinite: 0 }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds one contribution; non-finite contributions are counted and
    /// dropped.
    pub fn add(&mut self, index: usize, g: &GaussianGrad) {
        if g.is_finite() {
            self.grads[index].accumulate(g);
        } else {
            self.dropped_nonfinite += 1;
        }
    }

    pub fn merge(&mut self, o: &GradientStore) {
        for (a, b) in self.grads.iter_mut().zip(&o.grads) {
            a.accumulate(b);
        }
        self.dropped_nonfinite += o.dropped_nonfinite;
    }

    /// All gradients concatenated in [`Gaussian::to_params`] layout.
    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.to_array().iter().all(|&v| v == 0.0))
    }

    /// Flat little-endian table: per Gaussian a `u32` index followed by the
    /// 14 gradient components as `f64`.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            w.write_all(&(i as u32).to_le_bytes())?;
            for v in g.to_array() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::parse("gradient dump", e.to_string()))?;
        const ROW: usize = 4 + 8 * PARAMS_PER_GAUSSIAN;
        if bytes.len() % ROW != 0 {
            return Err(Error::parse(
                format!("offset {}", bytes.len() - bytes.len() % ROW),
                "truncated gradient row",
            ));
        }
        let mut grads = Vec::with_capacity(bytes.len() / ROW);
        for (row, chunk) in bytes.chunks_exact(ROW).enumerate() {
            let index = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) as usize;
            if index != row {
                return Err(Error::parse(format!("offset {}", row * ROW), format!("expected index {row}, found {index}")));
            }
            let mut a = [0.0; PARAMS_PER_GAUSSIAN];
            for (k, v) in a.iter_mut().enumerate() {
                *v = f64::from_le_bytes(chunk[4 + 8 * k..12 + 8 * k].try_into().unwrap());
            }
            grads.push(GaussianGrad::from_array(&a));
        }
        Ok(Self { grads, dropped_nonfinite: 0 })
    }
}

/// Derivatives of the maximum-response opacity `α` of one (ray, Gaussian)
/// pair with respect to the Gaussian's raw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaGrad {
    pub d_opacity_logit: f64,
    pub d_mean: Vec3,
    pub d_scale_logits: Vec3,
    pub d_rotation: [f64; 4],
}

/// A prepared Gaussian plus what the parameter derivatives need.
#[derive(Debug, Clone, Copy)]
pub struct GradContext {
    pub prepared: PreparedGaussian,
    /// `e^{−s}` per scale logit; `d(1/σ(s))/ds = −e^{−s}`.
    pub exp_neg_scale: Vec3,
    /// `∂Rᵀ/∂q_{r,i,j,k}`.
    pub drot_t: [Mat3; 4],
    /// `σ′(opacity_logit)`.
    pub dsig_opacity: f64,
}

impl GradContext {
    pub fn new(g: &Gaussian) -> Result<Self> {
        Ok(Self {
            prepared: PreparedGaussian::new(g)?,
            exp_neg_scale: g.scale_logits.map(|s| (-s).exp()),
            drot_t: g.rotation.rotation_transpose_derivatives()?,
            dsig_opacity: sigmoid_derivative(g.opacity_logit),
        })
    }

    pub fn for_scene(scene: &GaussianScene) -> Result<Vec<Self>> {
        scene
            .gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| Self::new(g).map_err(|e| Error::InvalidInput(format!("gaussian {i}: {e}"))))
            .collect()
    }

    /// `α` and `dα/dθ`. With `D² = ‖P‖²`, `P = o′ − d′·⟨o′,d′⟩/⟨d′,d′⟩`:
    /// `dα/dθ = −½α·dD²/dθ`, `dD²/dθ = 2(⟨P, ∂o′/∂θ⟩ − k⟨P, ∂d′/∂θ⟩)`.
    #[inline]
    pub fn alpha_and_grad(&self, ray: &Ray) -> (f64, AlphaGrad) {
        let p = &self.prepared;
        let rel = ray.origin - p.mean;
        let u = p.rotation.transpose_mul_vec(rel);
        let v = p.rotation.transpose_mul_vec(ray.direction);
        let o = u.mul_elem(p.inv_scale);
        let d = v.mul_elem(p.inv_scale);
        let od = o.dot(d);
        let dd = d.norm_squared();
        let k = od / dd;
        let perp = o - d * k;
        let response = (-0.5 * perp.norm_squared()).exp();
        let alpha = p.opacity * response;

        let sp = perp.mul_elem(p.inv_scale);
        let d_mean = p.rotation.mul_vec(sp) * alpha;
        let d_scale_logits = Vec3::new(
            alpha * self.exp_neg_scale.x * perp.x * (u.x - k * v.x),
            alpha * self.exp_neg_scale.y * perp.y * (u.y - k * v.y),
            alpha * self.exp_neg_scale.z * perp.z * (u.z - k * v.z),
        );
        let mut d_rotation = [0.0; 4];
        for (c, m) in self.drot_t.iter().enumerate() {
            let du = m.mul_vec(rel);
            let dv = m.mul_vec(ray.direction);
            d_rotation[c] = -alpha * sp.dot(du - dv * k);
        }
        let grad = AlphaGrad { d_opacity_logit: self.dsig_opacity * response, d_mean, d_scale_logits, d_rotation };
        (alpha, grad)
    }
}

/// `α` and `dα/dθ` for one (ray, Gaussian) pair.
pub fn dalpha_dparams(ray: &Ray, g: &Gaussian) -> Result<(f64, AlphaGrad)> {
    Ok(GradContext::new(g)?.alpha_and_grad(ray))
}

fn finite(v: Vec3) -> Option<Vec3> {
    v.is_finite().then_some(v)
}

/// `dI/dα₁ = (c₁ − I)/(1 − α₁)`; `None` when `α₁ = 1` or the value is not
/// finite.
pub fn di_dalpha_first(c1: Vec3, pixel: Vec3, alpha1: f64) -> Option<Vec3> {
    if alpha1 == 1.0 {
        return None;
    }
    finite((c1 - pixel) / (1.0 - alpha1))
}

/// State carried between successive `dI/dα` evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendState {
    pub c_prev: Vec3,
    pub alpha_prev: f64,
    pub grad_prev: Vec3,
    /// `∏_{j<i}(1 − α_j)` for the upcoming index `i`.
    pub transmittance: f64,
}

impl BlendState {
    /// State after the first hit.
    pub fn start(c1: Vec3, alpha1: f64, grad1: Vec3) -> Self {
        Self { c_prev: c1, alpha_prev: alpha1, grad_prev: grad1, transmittance: 1.0 - alpha1 }
    }

    pub fn advance(&mut self, c: Vec3, alpha: f64, grad: Vec3) {
        self.c_prev = c;
        self.alpha_prev = alpha;
        self.grad_prev = grad;
        self.transmittance *= 1.0 - alpha;
    }
}

/// `dI/dα_i = [dI/dα_{i−1}(1 − α_{i−1}) + (c_i − c_{i−1})∏_{j<i}(1 − α_j)] / (1 − α_i)`;
/// `None` when `α_i = 1` or the value is not finite.
pub fn di_dalpha_next(state: &BlendState, c: Vec3, alpha: f64) -> Option<Vec3> {
    if alpha == 1.0 {
        return None;
    }
    let num = state.grad_prev * (1.0 - state.alpha_prev) + (c - state.c_prev) * state.transmittance;
    finite(num / (1.0 - alpha))
}

/// Direct `dI/dα_i = c_i∏_{j<i}(1 − α_j) − Σ_{j>i} c_jα_j∏_{k<j, k≠i}(1 − α_k)`
/// over the given sequence, in O(N).
pub fn di_dalpha_naive(colors: &[Vec3], alphas: &[f64], i: usize) -> Vec3 {
    let t_before: f64 = alphas[..i].iter().map(|a| 1.0 - a).product();
    let mut out = colors[i] * t_before;
    let mut t = t_before;
    for j in i + 1..colors.len() {
        out -= colors[j] * (alphas[j] * t);
        t *= 1.0 - alphas[j];
    }
    out
}

/// Calls `emit(gaussian_index, grad)` for every Gaussian contributing to one
/// ray, given `dL/dI` of its pixel.
pub fn backward_ray(
    payload: &RayPayload,
    ray: &Ray,
    ctxs: &[GradContext],
    background: Vec3,
    dl_di: Vec3,
    mut emit: impl FnMut(usize, GaussianGrad),
) -> Result<()> {
    let hits: Vec<usize> = payload.hits().collect();
    if let Some(&bad) = hits.iter().find(|&&i| i >= ctxs.len()) {
        return Err(Error::Contract(format!(
            "payload refers to gaussian {bad} but the scene has {}",
            ctxs.len()
        )));
    }
    if payload.phase1_count > hits.len() {
        return Err(Error::Contract("payload phase-1 count exceeds its hits".into()));
    }
    if dl_di == Vec3::ZERO {
        return Ok(());
    }
    let pixel = payload.color;
    let mut state: Option<BlendState> = None;
    for idx in 0..payload.phase1_count {
        let ctx = &ctxs[hits[idx]];
        let (alpha, ag) = ctx.alpha_and_grad(ray);
        let c = ctx.prepared.color;
        let t_before = state.map_or(1.0, |s| s.transmittance);
        let last_meaningful = payload.second_phase && idx + 1 == payload.phase1_count;
        let recurrence = if last_meaningful {
            None
        } else {
            match &state {
                None => di_dalpha_first(c, pixel, alpha),
                Some(s) => di_dalpha_next(s, c, alpha),
            }
        };
        let (di_dalpha, stop) = match recurrence {
            Some(g) => (g, false),
            None => (naive_tail(&hits[idx..], ray, ctxs, background, t_before), true),
        };
        let dl_dalpha = dl_di.dot(di_dalpha);
        let grad = GaussianGrad {
            d_mean: ag.d_mean * dl_dalpha,
            d_scale_logits: ag.d_scale_logits * dl_dalpha,
            d_rotation: ag.d_rotation.map(|v| v * dl_dalpha),
            d_opacity_logit: ag.d_opacity_logit * dl_dalpha,
            d_color: dl_di * (alpha * t_before),
        };
        emit(hits[idx], grad);
        if stop {
            break;
        }
        match &mut state {
            None => state = Some(BlendState::start(c, alpha, di_dalpha)),
            Some(s) => s.advance(c, alpha, di_dalpha),
        }
    }
    Ok(())
}

/// Direct `dI/dα` for the first entry of `tail` over the remaining recorded
/// hits, with the background appended as a final opaque layer.
fn naive_tail(tail: &[usize], ray: &Ray, ctxs: &[GradContext], background: Vec3, t_before: f64) -> Vec3 {
    let mut out = ctxs[tail[0]].prepared.color * t_before;
    let mut t = t_before;
    for &j in &tail[1..] {
        let g = &ctxs[j].prepared;
        let a = crate::render::max_response_alpha_prepared(ray, g);
        out -= g.color * (a * t);
        t *= 1.0 - a;
    }
    out - background * t
}

/// How per-block partial gradients are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Fixed pixel blocks, summed in block order: bitwise reproducible for
    /// any thread count.
    #[default]
    Ordered,
    /// Work-stealing fold/reduce; totals may differ in the last bits between
    /// runs.
    Unordered,
}

const BLOCK_PIXELS: usize = 512;

/// Accumulates `dL/dθ` over all pixels of one rendered view.
pub fn backward_image(
    payloads: &[RayPayload],
    ctxs: &[GradContext],
    camera: &Camera,
    cfg: &RenderConfig,
    pixel_grads: &[Vec3],
    exec: Execution,
    reduction: Reduction,
) -> Result<GradientStore> {
    let n_pix = camera.width * camera.height;
    if payloads.len() != n_pix || pixel_grads.len() != n_pix {
        return Err(Error::Contract(format!(
            "{} payloads and {} pixel gradients for a {}x{} camera",
            payloads.len(),
            pixel_grads.len(),
            camera.width,
            camera.height
        )));
    }
    let n = ctxs.len();
    let run_block = |start: usize, end: usize, store: &mut GradientStore| -> Result<()> {
        for k in start..end {
            let (x, y) = (k % camera.width, k / camera.width);
            let ray = camera.ray_through(x as f64 + 0.5, y as f64 + 0.5);
            backward_ray(&payloads[k], &ray, ctxs, cfg.background_color, pixel_grads[k], |i, g| store.add(i, &g))?;
        }
        Ok(())
    };
    let blocks = n_pix.div_ceil(BLOCK_PIXELS);

    #[cfg(feature = "parallel")]
    if reduction == Reduction::Unordered && exec.is_parallel() {
        use rayon::prelude::*;
        return (0..blocks)
            .into_par_iter()
            .try_fold(
                || GradientStore::zeros(n),
                |mut store, b| {
                    run_block(b * BLOCK_PIXELS, ((b + 1) * BLOCK_PIXELS).min(n_pix), &mut store)?;
                    Ok(store)
                },
            )
            .try_reduce(
                || GradientStore::zeros(n),
                |mut a, b| {
                    a.merge(&b);
                    Ok(a)
                },
            );
    }
    let _ = reduction;

    let partials = map_indexed(exec, blocks, |b| {
        let mut store = GradientStore::zeros(n);
        run_block(b * BLOCK_PIXELS, ((b + 1) * BLOCK_PIXELS).min(n_pix), &mut store).map(|_| store)
    });
    let mut total = GradientStore::zeros(n);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Quaternion;
    use crate::render::{blend_hits, HitSource, SENTINEL};
    use crate::bvh::Hit;
    use crate::scene::sigmoid;

    #[test]
    fn single_gaussian_identity() {
        let c1 = Vec3::splat(0.8);
        let pixel = c1 * 0.5;
        assert_eq!(di_dalpha_first(c1, pixel, 0.5).unwrap(), c1);
        assert!(di_dalpha_first(c1, pixel, 1.0).is_none());
    }

    #[test]
    fn naive_without_tail() {
        let colors = [Vec3::X, Vec3::Y];
        let alphas = [0.25, 0.5];
        assert_eq!(di_dalpha_naive(&colors, &alphas, 1), Vec3::Y * 0.75);
    }

    #[test]
    fn ray_through_mean_has_only_opacity_gradient() {
        let g = Gaussian::from_activations(
            Vec3::new(0.1, -0.2, 3.0),
            Vec3::new(0.2, 0.3, 0.4),
            Quaternion::new(0.9, 0.1, -0.3, 0.2),
            0.6,
            Vec3::ONE,
        );
        let ray = Ray::new(Vec3::ZERO, g.mean);
        let (alpha, ag) = dalpha_dparams(&ray, &g).unwrap();
        assert!((alpha - 0.6).abs() < 1e-12);
        assert!(ag.d_mean.norm() < 1e-12);
        assert!(ag.d_scale_logits.norm() < 1e-12);
        assert!(ag.d_rotation.iter().all(|v| v.abs() < 1e-12));
        assert!((ag.d_opacity_logit - 0.6 * 0.4).abs() < 1e-12);
    }

    struct One;
    impl HitSource for One {
        fn next_after(&mut self, t_min: f64) -> Option<Hit> {
            (t_min < 1.0).then_some(Hit { gaussian_index: 0, t_entry: 1.0 })
        }
    }

    #[test]
    fn single_pixel_chain() {
        let g = Gaussian::from_activations(Vec3::new(0.0, 0.1, 2.0), Vec3::splat(0.3), Quaternion::IDENTITY, 0.7, Vec3::new(0.2, 0.5, 0.9));
        let ctx = GradContext::new(&g).unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        let cfg = RenderConfig::default();
        let p = blend_hits(&mut One, &[ctx.prepared], &ray, &cfg);
        assert_eq!(p.indices, vec![0, SENTINEL]);
        let dl_di = Vec3::new(1.0, -2.0, 0.5);
        let mut got = Vec::new();
        backward_ray(&p, &ray, &[ctx], Vec3::ZERO, dl_di, |i, gr| got.push((i, gr))).unwrap();
        assert_eq!(got.len(), 1);
        let (alpha, _) = ctx.alpha_and_grad(&ray);
        let gr = got[0].1;
        assert!((gr.d_color - dl_di * alpha).norm() < 1e-15);
        let response = alpha / sigmoid(g.opacity_logit);
        let expect = dl_di.dot(g.color) * sigmoid_derivative(g.opacity_logit) * response;
        assert!((gr.d_opacity_logit - expect).abs() < 1e-14);
    }

    #[test]
    fn stale_payload_is_rejected() {
        let p = RayPayload {
            color: Vec3::ZERO,
            transmittance: 1.0,
            second_phase: false,
            transmittance2: 1.0,
            indices: vec![3, SENTINEL],
            hit_count: 1,
            phase1_count: 1,
        };
        let ray = Ray::new(Vec3::ZERO, Vec3::Z);
        let err = backward_ray(&p, &ray, &[], Vec3::ZERO, Vec3::ONE, |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn nonfinite_contributions_are_dropped() {
        let mut s = GradientStore::zeros(1);
        s.add(0, &GaussianGrad { d_opacity_logit: f64::NAN, ..Default::default() });
        assert_eq!(s.dropped_nonfinite, 1);
        assert!(s.is_zero());
    }

    #[test]
    fn dump_round_trip() {
        let mut s = GradientStore::zeros(3);
        s.add(1, &GaussianGrad { d_mean: Vec3::new(1.0, 2.0, 3.0), d_rotation: [0.5, 0.0, 0.0, -1.0], ..Default::default() });
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 3 * (4 + 8 * 14));
        assert_eq!(GradientStore::read_dump(&mut buf.as_slice()).unwrap(), s);
        assert!(GradientStore::read_dump(&mut &buf[..10]).is_err());
    }
}
