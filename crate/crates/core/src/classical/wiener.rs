use rustfft::num_complex::Complex64;

use crate::convolve::{embed_kernel, to_f64, CircularOperator};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use crate::psf::Psf;

/// Transfer functions below this squared magnitude count as vanishing.
const SINGULAR_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WienerParams {
    pub lambda: f64,
}

impl WienerParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Wiener lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

/// `|L|^2` for the 5-point Laplacian stencil on an `h`x`w` periodic grid.
pub fn laplacian_transfer(fft: &Fft2) -> Vec<f64> {
    let (h, w) = fft.dims();
    let stencil =
        Image::from_vec(3, 3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    fft.forward_real(&embed_kernel(&stencil, h, w))
        .into_iter()
        .map(|c| c.norm_sqr())
        .collect()
}

/// A Wiener filter bound to one PSF and image size; the observation
/// spectrum is cached so several `lambda` values can be tried cheaply.
#[derive(Debug)]
pub struct WienerFilter {
    op: CircularOperator,
    laplacian: Vec<f64>,
    observed: Vec<Complex64>,
}

impl WienerFilter {
    pub fn new(y: &Image, psf: &Psf) -> Result<Self> {
        if y.height() < 3 || y.width() < 3 {
            return Err(Error::InvalidParameter(
                "Wiener filtering needs an image of at least 3x3".into(),
            ));
        }
        let op = CircularOperator::for_psf(y, psf)?;
        let laplacian = laplacian_transfer(op.fft());
        let observed = op.fft().forward_real(&to_f64(y));
        Ok(Self {
            op,
            laplacian,
            observed,
        })
    }

    /// `X = conj(H) Y / (|H|^2 + lambda |L|^2)`.
    pub fn solve(&self, p: WienerParams) -> Result<Image> {
        let transfer = self.op.transfer();
        if p.lambda == 0.0 {
            let count = transfer.iter().filter(|h| h.norm_sqr() < SINGULAR_EPS).count();
            if count > 0 {
                return Err(Error::SingularInversion { count });
            }
        }
        let spectrum: Vec<Complex64> = self
            .observed
            .iter()
            .zip(transfer)
            .zip(&self.laplacian)
            .map(|((&y, &h), &l)| {
                let denom = (h.norm_sqr() + p.lambda * l).max(SINGULAR_EPS);
                h.conj() * y / denom
            })
            .collect();
        let (height, width) = self.op.dims();
        let x = self.op.fft().inverse_real(spectrum);
        Image::from_vec(height, width, x.into_iter().map(|v| v as f32).collect())
    }
}

/// Minimizer of `||h * x - y||^2 + lambda ||l * x||^2` under periodic
/// boundaries, `l` the discrete Laplacian.
///
/// With `lambda == 0` the transfer function must not vanish anywhere,
/// otherwise [`Error::SingularInversion`] is returned. For positive `lambda`
/// the denominator is floored at 1e-12.
pub fn wiener_deconvolve(y: &Image, psf: &Psf, p: WienerParams) -> Result<Image> {
    WienerFilter::new(y, psf)?.solve(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::convolve_circular_direct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nonvanishing_psf() -> Psf {
        // H(u, v) = 0.6 + 0.2 cos(2 pi u / H) + 0.2 cos(2 pi v / W) >= 0.2
        let k = Image::from_vec(3, 3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]).unwrap();
        Psf::from_kernel(k).unwrap()
    }

    fn random(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn delta_psf_unregularized_is_identity() {
        let y = random(1, 16, 12);
        let x = wiener_deconvolve(&y, &Psf::delta(3), WienerParams::new(0.0).unwrap()).unwrap();
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn exact_recovery_without_noise() {
        let x = random(2, 24, 20);
        let psf = nonvanishing_psf();
        let y = convolve_circular_direct(&x, psf.kernel()).unwrap();
        let rec = wiener_deconvolve(&y, &psf, WienerParams::new(0.0).unwrap()).unwrap();
        for (a, b) in rec.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn singular_without_regularization() {
        // A 2-tap box kernel vanishes at the Nyquist column.
        let k = Image::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let psf = Psf::from_kernel(k).unwrap();
        let y = random(3, 8, 8);
        assert!(matches!(
            wiener_deconvolve(&y, &psf, WienerParams::new(0.0).unwrap()),
            Err(Error::SingularInversion { .. })
        ));
        let x = wiener_deconvolve(&y, &psf, WienerParams::new(1e-2).unwrap()).unwrap();
        assert!(x.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn satisfies_optimality_condition() {
        let psf = Psf::airy(9, 3.0).unwrap();
        let y = random(4, 32, 32);
        let lambda = 0.05;
        let x = wiener_deconvolve(&y, &psf, WienerParams::new(lambda).unwrap()).unwrap();
        let op = CircularOperator::for_psf(&y, &psf).unwrap();
        let fft = op.fft();
        let xs = fft.forward_real(&to_f64(&x));
        let ys = fft.forward_real(&to_f64(&y));
        let lap = laplacian_transfer(fft);
        let n = (32 * 32) as f64;
        let grad: f64 = xs
            .iter()
            .zip(&ys)
            .zip(op.transfer())
            .zip(&lap)
            .map(|(((&xf, &yf), &h), &l)| (h.conj() * (h * xf - yf) + lambda * l * xf).norm_sqr())
            .sum::<f64>()
            / n;
        assert!(grad.sqrt() < 1e-4, "{}", grad.sqrt());
    }

    #[test]
    fn norm_decreases_with_lambda() {
        let psf = Psf::airy(9, 3.0).unwrap();
        let y = random(5, 32, 32);
        let filter = WienerFilter::new(&y, &psf).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e3, 1e6] {
            let x = filter.solve(WienerParams::new(lambda).unwrap()).unwrap();
            let norm = x.as_slice().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!(norm <= prev + 1e-9);
            prev = norm;
        }
        // The Laplacian does not penalize the mean, so the strongly
        // regularized limit is the constant mean image.
        let x = filter.solve(WienerParams::new(1e9).unwrap()).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!(x.as_slice().iter().all(|&v| (v as f64 - mean).abs() < 1e-3));
    }
}
