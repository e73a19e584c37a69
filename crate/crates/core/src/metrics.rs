//! Image quality metrics on `[0, 1]` images.

use crate::error::Result;
use crate::image::Image;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Mean SSIM with the standard 11×11, σ = 1.5 window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    crate::loss::ssim(&a.to_f64(), &b.to_f64(), a.width, a.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images() {
        let img = Image::from_data(4, 3, (0..36).map(|i| i as f32 / 36.0).collect()).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zeros_versus_half() {
        let a = Image::new(5, 5);
        let b = Image::from_data(5, 5, vec![0.5; 75]).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert!((p - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((p - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_matches_pixelwise_reference_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Image::from_data(6, 5, (0..90).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let b = Image::from_data(6, 5, (0..90).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut sq = 0.0;
        for y in 0..5 {
            for x in 0..6 {
                let (pa, pb) = (a.pixel(x, y), b.pixel(x, y));
                for c in 0..3 {
                    sq += (pa[c] as f64 - pb[c] as f64).powi(2);
                }
            }
        }
        let reference = 10.0 * (90.0 / sq).log10();
        assert!((psnr(&a, &b).unwrap() - reference).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn size_mismatch() {
        assert!(psnr(&Image::new(2, 2), &Image::new(2, 3)).is_err());
    }
}
