use super::Image;
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with_cap(a, b, PSNR_CAP)
}

/// PSNR over all channels, peak 1. Zero error reports `cap`.
pub fn psnr_with_cap(a: &Image, b: &Image, cap: f64) -> Result<f64> {
    same_shape(a, b)?;
    let mut sum = 0.0;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            let d = p[c] - q[c];
            sum += d * d;
        }
    }
    let mse = sum / (a.data.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok((-10.0 * mse.log10()).min(cap))
}

fn luminance(img: &Image) -> Vec<f64> {
    img.data
        .iter()
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable "valid" Gaussian filter: output is `(w - 10) × (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on luminance with an 11×11 Gaussian window (σ 1.5), averaged
/// over every window that fits inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}"
        )));
    }
    let x = luminance(a);
    let y = luminance(b);
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(&x, w, h, &taps);
    let my = filter_valid(&y, w, h, &taps);
    let exx = filter_valid(&prod(&x, &x), w, h, &taps);
    let eyy = filter_valid(&prod(&y, &y), w, h, &taps);
    let exy = filter_valid(&prod(&x, &y), w, h, &taps);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let num = (2.0 * ux * uy + SSIM_C1) * (2.0 * sxy + SSIM_C2);
        let den = (ux * ux + uy * uy + SSIM_C1) * (sxx + syy + SSIM_C2);
        total += num / den;
    }
    Ok(total / mx.len() as f64)
}

/// Geometric mean of `10^(-psnr/10)` and `sqrt(1 - ssim)`; lower is better.
/// This is the two-term variant without a perceptual network score.
pub fn average_score(psnr_db: f64, ssim_value: f64) -> f64 {
    let a = 10f64.powf(-psnr_db / 10.0);
    let b = (1.0 - ssim_value).max(0.0).sqrt();
    (a * b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|_| [0; 3].map(|_| rng.gen::<f64>())).collect())
    }

    #[test]
    fn psnr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 9, 7);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let flat = Image::new(4, 4, vec![[0.2, 0.5, 0.7]; 16]);
        let shifted = Image::new(4, 4, vec![[0.3, 0.4, 0.8]; 16]);
        assert!((psnr(&flat, &shifted).unwrap() - 20.0).abs() < 1e-9);
        let b = random_image(&mut rng, 9, 8);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 14);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = Image::new(16, 14, a.data.iter().map(|p| p.map(|v| 1.0 - v)).collect());
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        let small = random_image(&mut rng, 10, 20);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn average_score_terms() {
        assert!((average_score(20.0, 0.96) - (0.01f64 * 0.2).sqrt()).abs() < 1e-15);
        assert_eq!(average_score(99.0, 1.0), 0.0);
    }
}
