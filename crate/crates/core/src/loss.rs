//! Training objective `(1 − λ)·L2 + λ·D-SSIM`, averaged over the RGB
//! channels, and its gradient with respect to the rendered pixels.
//!
//! Windowed statistics use a zero-padded Gaussian window whose weights are
//! not renormalized at the border: `μ = w∗I`, `σ² = w∗I² − μ²`,
//! `σ_xy = w∗(I·Î) − μ·μ̂`. The window is separable, so every convolution
//! runs as two 1D passes.

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::linalg::Vec3;

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const C1: f64 = K1 * K1;
pub const C2: f64 = K2 * K2;

/// Normalized 2D Gaussian window `w(m, n) = k(m)·k(n)`, `|m|, |n| ≤ r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimWindow {
    radius: usize,
    kernel: Vec<f64>,
}

impl SsimWindow {
    pub fn gaussian(radius: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig { field: "window_sigma", reason: format!("must be > 0, got {sigma}") });
        }
        let r = radius as isize;
        let raw: Vec<f64> = (-r..=r).map(|m| (-((m * m) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self { radius, kernel: raw.into_iter().map(|v| v / total).collect() })
    }

    pub fn from_config(cfg: &LossConfig) -> Result<Self> {
        Self::gaussian(cfg.window_radius, cfg.window_sigma)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `w(m, n)`, zero outside the window.
    pub fn weight(&self, m: isize, n: isize) -> f64 {
        let r = self.radius as isize;
        if m.abs() > r || n.abs() > r {
            return 0.0;
        }
        self.kernel[(m + r) as usize] * self.kernel[(n + r) as usize]
    }

    /// `(w∗p)(x, y) = Σ_{m,n} w(m, n)·p(x + m, y + n)` with zero padding.
    /// The window is symmetric, so correlation and convolution coincide.
    pub fn convolve(&self, p: &Plane) -> Plane {
        let (w, h) = (p.width, p.height);
        let r = self.radius as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &p.data[y * w..(y + 1) * w];
            let out = &mut tmp[y * w..(y + 1) * w];
            for (x, o) in out.iter_mut().enumerate() {
                let lo = (x as isize - r).max(0) as usize;
                let hi = ((x as isize + r) as usize).min(w - 1);
                let mut acc = 0.0;
                for xx in lo..=hi {
                    acc += self.kernel[(xx as isize - x as isize + r) as usize] * row[xx];
                }
                *o = acc;
            }
        }
        let mut data = vec![0.0; w * h];
        for y in 0..h {
            let lo = (y as isize - r).max(0) as usize;
            let hi = ((y as isize + r) as usize).min(h - 1);
            let out = &mut data[y * w..(y + 1) * w];
            for yy in lo..=hi {
                let k = self.kernel[(yy as isize - y as isize + r) as usize];
                let src = &tmp[yy * w..(yy + 1) * w];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += k * s;
                }
            }
        }
        Plane { width: w, height: h, data }
    }

    /// Direct 2D evaluation of [`SsimWindow::convolve`].
    pub fn convolve_direct(&self, p: &Plane) -> Plane {
        let r = self.radius as isize;
        Plane::from_fn(p.width, p.height, |x, y| {
            let mut acc = 0.0;
            for n in -r..=r {
                for m in -r..=r {
                    let (xx, yy) = (x as isize + m, y as isize + n);
                    if xx >= 0 && yy >= 0 && (xx as usize) < p.width && (yy as usize) < p.height {
                        acc += self.weight(m, n) * p.get(xx as usize, yy as usize);
                    }
                }
            }
            acc
        })
    }
}

fn check_dims(a: &Plane, b: &Plane) -> Result<()> {
    if !a.same_size(b) || a.data.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Per-pixel windowed statistics and the SSIM factors
/// `A = 2μμ̂ + c₁`, `B = 2σ_xŷ + c₂`, `C = μ² + μ̂² + c₁`, `D = σ² + σ̂² + c₂`.
#[derive(Debug, Clone)]
pub struct SsimStats {
    pub mu: Plane,
    pub mu_ref: Plane,
    pub a: Plane,
    pub b: Plane,
    pub c: Plane,
    pub d: Plane,
}

pub fn ssim_stats(img: &Plane, reference: &Plane, win: &SsimWindow) -> Result<SsimStats> {
    check_dims(img, reference)?;
    let mu = win.convolve(img);
    let mu_ref = win.convolve(reference);
    let xx = win.convolve(&img.zip_map(img, |a, b| a * b));
    let yy = win.convolve(&reference.zip_map(reference, |a, b| a * b));
    let xy = win.convolve(&img.zip_map(reference, |a, b| a * b));
    let n = img.data.len();
    let (mut a, mut b, mut c, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let (m, mr) = (mu.data[k], mu_ref.data[k]);
        let var = xx.data[k] - m * m;
        let var_ref = yy.data[k] - mr * mr;
        let cov = xy.data[k] - m * mr;
        a[k] = 2.0 * m * mr + C1;
        b[k] = 2.0 * cov + C2;
        c[k] = m * m + mr * mr + C1;
        d[k] = var + var_ref + C2;
    }
    let plane = |data| Plane { width: img.width, height: img.height, data };
    Ok(SsimStats { mu, mu_ref, a: plane(a), b: plane(b), c: plane(c), d: plane(d) })
}

/// Per-pixel `SSIM = A·B / (C·D)`.
pub fn ssim_map(img: &Plane, reference: &Plane, win: &SsimWindow) -> Result<Plane> {
    let s = ssim_stats(img, reference, win)?;
    Ok(ssim_from_stats(&s))
}

fn ssim_from_stats(s: &SsimStats) -> Plane {
    let data = (0..s.a.data.len())
        .map(|k| s.a.data[k] * s.b.data[k] / (s.c.data[k] * s.d.data[k]))
        .collect();
    Plane { width: s.a.width, height: s.a.height, data }
}

pub fn mean_ssim(img: &Plane, reference: &Plane, win: &SsimWindow) -> Result<f64> {
    Ok(ssim_map(img, reference, win)?.mean())
}

/// `(1 − mean SSIM) / 2`.
pub fn dssim_loss(img: &Plane, reference: &Plane, win: &SsimWindow) -> Result<f64> {
    Ok((1.0 - mean_ssim(img, reference, win)?) / 2.0)
}

/// The per-pixel fields whose window convolutions make up the SSIM
/// gradient.
#[derive(Debug, Clone)]
pub struct SsimGradFields {
    pub e: Plane,
    pub f: Plane,
    pub g: Plane,
}

pub fn ssim_grad_fields(s: &SsimStats) -> SsimGradFields {
    let n = s.a.data.len();
    let (mut e, mut f, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let (a, b, c, d) = (s.a.data[k], s.b.data[k], s.c.data[k], s.d.data[k]);
        let (m, mr) = (s.mu.data[k], s.mu_ref.data[k]);
        let scale = 2.0 / (c * c * d * d);
        e[k] = scale * (c * d * mr * (b - a) - a * b * m * (d - c));
        f[k] = scale * a * c * d;
        g[k] = scale * a * b * c;
    }
    let plane = |data| Plane { width: s.a.width, height: s.a.height, data };
    SsimGradFields { e: plane(e), f: plane(f), g: plane(g) }
}

fn grad_from_stats(img: &Plane, reference: &Plane, s: &SsimStats, win: &SsimWindow) -> Plane {
    let fields = ssim_grad_fields(s);
    let (ew, fw, gw) = (win.convolve(&fields.e), win.convolve(&fields.f), win.convolve(&fields.g));
    let inv_n = 1.0 / img.data.len() as f64;
    let data = (0..img.data.len())
        .map(|k| inv_n * (ew.data[k] + reference.data[k] * fw.data[k] - img.data[k] * gw.data[k]))
        .collect();
    Plane { width: img.width, height: img.height, data }
}

/// Gradient of the mean SSIM (not of D-SSIM) with respect to every pixel
/// of `img`: `(1/wh)·(E∗w + Î·(F∗w) − I·(G∗w))`.
pub fn dssim_grad(img: &Plane, reference: &Plane, win: &SsimWindow) -> Result<Plane> {
    let s = ssim_stats(img, reference, win)?;
    Ok(grad_from_stats(img, reference, &s, win))
}

/// Mean squared difference.
pub fn l2_loss(img: &Plane, reference: &Plane) -> Result<f64> {
    check_dims(img, reference)?;
    let sum: f64 = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / img.data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/dI` per pixel and channel, row-major.
    pub pixel_grad: Vec<Vec3>,
    pub l2: [f64; 3],
    pub ssim: [f64; 3],
}

/// `L = (1/3)·Σ_ch [(1 − λ)·L2 + λ·(1 − SSIM)/2]` and `dL/dI`.
pub fn total_loss_and_pixel_grad(img: &Image, reference: &Image, cfg: &LossConfig) -> Result<LossOutput> {
    let win = SsimWindow::from_config(cfg)?;
    total_loss_with_window(img, reference, cfg.lambda, &win)
}

pub fn total_loss_with_window(img: &Image, reference: &Image, lambda: f64, win: &SsimWindow) -> Result<LossOutput> {
    if !img.same_size(reference) {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}x{} vs reference {}x{}",
            img.width, img.height, reference.width, reference.height
        )));
    }
    let n = img.pixels.len();
    let inv_n = 1.0 / n as f64;
    let mut pixel_grad = vec![Vec3::ZERO; n];
    let mut l2 = [0.0; 3];
    let mut ssim = [0.0; 3];
    let mut loss = 0.0;
    for ch in 0..3 {
        let (p, r) = (img.channel(ch), reference.channel(ch));
        l2[ch] = l2_loss(&p, &r)?;
        let grad_ssim = if lambda > 0.0 {
            let s = ssim_stats(&p, &r, win)?;
            ssim[ch] = ssim_from_stats(&s).mean();
            Some(grad_from_stats(&p, &r, &s, win))
        } else {
            ssim[ch] = mean_ssim(&p, &r, win)?;
            None
        };
        loss += ((1.0 - lambda) * l2[ch] + lambda * (1.0 - ssim[ch]) / 2.0) / 3.0;
        for k in 0..n {
            let mut g = 2.0 * (1.0 - lambda) * inv_n * (p.data[k] - r.data[k]);
            if let Some(gs) = &grad_ssim {
                g -= 0.5 * lambda * gs.data[k];
            }
            let v = &mut pixel_grad[k];
            match ch {
                0 => v.x = g / 3.0,
                1 => v.y = g / 3.0,
                _ => v.z = g / 3.0,
            }
        }
    }
    Ok(LossOutput { loss, pixel_grad, l2, ssim })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win() -> SsimWindow {
        SsimWindow::gaussian(5, 1.5).unwrap()
    }

    #[test]
    fn window_sums_to_one_and_is_symmetric() {
        let w = win();
        let mut total = 0.0;
        for m in -5..=5 {
            for n in -5..=5 {
                total += w.weight(m, n);
                assert_eq!(w.weight(m, n), w.weight(-m, -n));
                assert!(w.weight(m, n) >= 0.0);
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images() {
        let one = Plane::from_fn(16, 16, |_, _| 1.0);
        let zero = Plane::zeros(16, 16);
        let same = ssim_map(&one, &one, &win()).unwrap();
        assert!(same.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        // Zero variance everywhere: B = c₂ and D = c₂ cancel.
        let s = ssim_map(&one, &zero, &win()).unwrap();
        let expect = C1 / (1.0 + C1);
        // Border pixels see fewer weights, so only interior pixels are exact.
        assert!((s.get(8, 8) - expect).abs() < 1e-12);
    }

    #[test]
    fn l2_small_example() {
        let a = Plane { width: 2, height: 1, data: vec![0.5, 0.0] };
        let b = Plane::zeros(2, 1);
        assert_eq!(l2_loss(&a, &b).unwrap(), 0.125);
        assert!(l2_loss(&a, &Plane::zeros(1, 2)).is_err());
    }

    #[test]
    fn lambda_zero_gradient_is_scaled_difference() {
        let a = Image::from_pixels(2, 1, vec![Vec3::new(0.5, 0.2, 0.1), Vec3::ZERO]).unwrap();
        let b = Image::new(2, 1);
        let out = total_loss_with_window(&a, &b, 0.0, &win()).unwrap();
        assert_eq!(out.pixel_grad[0], Vec3::new(0.5, 0.2, 0.1) * (2.0 / 2.0 / 3.0));
    }
}
