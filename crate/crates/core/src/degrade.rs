//! Forward observation model: PSF blur followed by additive Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::convolve::{convolve_full_image, Boundary};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::psf::Psf;

/// Standard deviation and seed of the additive noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            seed: 0,
        }
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise drawn from a ChaCha8 stream seeded by
/// `spec.seed`, in row-major order. Samples are not clipped.
pub fn add_gaussian_noise(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    if spec.sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, spec.sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = img
        .as_slice()
        .iter()
        .map(|&v| v + normal.sample(&mut rng) as f32)
        .collect();
    Image::from_vec(img.height(), img.width(), data)
}

/// Circular convolution with `psf`, then additive Gaussian noise.
pub fn degrade(img: &Image, psf: &Psf, spec: &NoiseSpec) -> Result<Image> {
    let blurred = convolve_full_image(img, psf, Boundary::Circular)?;
    add_gaussian_noise(&blurred, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::from_fn(5, 5, |r, c| (r * c) as f32 / 25.0);
        let spec = NoiseSpec::new(0.0, 9).unwrap();
        assert_eq!(add_gaussian_noise(&img, &spec).unwrap(), img);
        let out = degrade(&img, &Psf::delta(3), &spec).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_noise() {
        let img = Image::zeros(16, 16);
        let spec = NoiseSpec::new(0.01, 42).unwrap();
        let a = add_gaussian_noise(&img, &spec).unwrap();
        let b = add_gaussian_noise(&img, &spec).unwrap();
        assert_eq!(a, b);
        let c = add_gaussian_noise(&img, &spec.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_standard_deviation() {
        let img = Image::zeros(512, 512);
        let out = add_gaussian_noise(&img, &NoiseSpec::new(0.01, 7).unwrap()).unwrap();
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let var = out
            .as_slice()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.0095..=0.0105).contains(&sd), "{sd}");
    }

    #[test]
    fn flux_with_delta_psf() {
        let img = Image::from_fn(8, 8, |r, c| ((r + c) % 3) as f32 * 0.25);
        let spec = NoiseSpec::new(0.05, 11).unwrap();
        let noisy = degrade(&img, &Psf::delta(1), &spec).unwrap();
        let noise = add_gaussian_noise(&Image::zeros(8, 8), &spec).unwrap();
        let expected = img.zip_map(&noise, |a, b| a + b).unwrap();
        assert_eq!(noisy, expected);
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }
}
