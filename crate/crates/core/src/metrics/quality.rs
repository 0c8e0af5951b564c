//! Full-reference image quality: PSNR and SSIM.

use crate::error::{Error, Result};
use crate::tensor::kernels::gaussian_taps;
use crate::tensor::{Real, Tensor};

/// Reported for identical images, where the true PSNR is infinite.
pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(peak² / MSE)` over every element, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!("psnr peak must be > 0, got {peak}")));
    }
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    let mse = sq / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// PSNR of each batch item, averaged.
pub fn mean_psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let n = a.shape().n();
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&a.item_at(i), &b.item_at(i), peak)?;
    }
    Ok(total / n as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, c)| c * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, c)| c * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over every image, channel and valid window position
/// (Gaussian window 11, σ 1.5, K1 0.01, K2 0.03, dynamic range 1).
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let s = a.shape();
    if s.h() < SSIM_WINDOW || s.w() < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)?;
    let (c1, c2) = (K1 * K1, K2 * K2);
    let (h, w) = (s.h(), s.w());
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..s.n() * s.c() {
        let pa: Vec<f64> = a.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = b.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let prod = |f: fn(f64, f64) -> f64| pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let (ma, _, _) = filter_valid(&pa, h, w, &taps);
        let (mb, _, _) = filter_valid(&pb, h, w, &taps);
        let (saa, _, _) = filter_valid(&prod(|x, _| x * x), h, w, &taps);
        let (sbb, _, _) = filter_valid(&prod(|_, y| y * y), h, w, &taps);
        let (sab, _, _) = filter_valid(&prod(|x, y| x * y), h, w, &taps);
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cov = sab[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_uniform, seeded_rng, Shape};

    #[test]
    fn psnr_cases() {
        let a: Tensor<f64> = sample_uniform(Shape::new(1, 1, 16, 16), 0.0, 0.9, &mut seeded_rng(1));
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);

        let c: Tensor<f64> = sample_uniform(a.shape(), 0.0, 1.0, &mut seeded_rng(2));
        let mse = a.data().iter().zip(c.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &c, 1.0).unwrap() - want).abs() < 1e-9);
        assert_eq!(psnr(&a, &c, 1.0).unwrap(), psnr(&c, &a, 1.0).unwrap());
        assert!(psnr(&a, &Tensor::zeros(Shape::new(1, 1, 4, 4)), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a: Tensor<f32> = sample_uniform(Shape::new(2, 3, 24, 24), 0.0, 1.0, &mut seeded_rng(3));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let checker = Tensor::<f64>::from_fn(Shape::new(1, 1, 32, 32), |[_, _, y, x]| ((y / 2 + x / 2) % 2) as f64);
        let inv = checker.map(|v| 1.0 - v);
        let s = ssim(&checker, &inv).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (ma, mb) = (0.3, 0.7);
        let a = Tensor::<f64>::full(Shape::new(1, 1, 16, 16), ma);
        let b = Tensor::<f64>::full(Shape::new(1, 1, 16, 16), mb);
        let c1 = 0.01f64 * 0.01;
        let want = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 8, 8));
        assert!(ssim(&a, &a).is_err());
    }
}
