//! Image quality metrics (peak value 1).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{mean_ssim, SsimWindow};

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(img: &Image, reference: &Image) -> Result<f64> {
    if !img.same_size(reference) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            img.width, img.height, reference.width, reference.height
        )));
    }
    let sum: f64 = img
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (*a - *b).norm_squared())
        .sum();
    Ok(sum / (3 * img.pixels.len()) as f64)
}

/// `−10·log₁₀(MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    let m = mse(img, reference)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (-10.0 * m.log10()).min(PSNR_CAP) })
}

/// Mean SSIM over the RGB channels with the standard 11×11, σ = 1.5 window.
pub fn ssim_metric(img: &Image, reference: &Image) -> Result<f64> {
    if !img.same_size(reference) {
        return Err(Error::DimensionMismatch("ssim of differently sized images".into()));
    }
    let win = SsimWindow::gaussian(5, 1.5)?;
    let mut total = 0.0;
    for c in 0..3 {
        total += mean_ssim(&img.channel(c), &reference.channel(c), &win)?;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec3;

    #[test]
    fn psnr_of_known_mse() {
        let a = Image::filled(4, 4, Vec3::splat(0.1));
        let b = Image::new(4, 4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
