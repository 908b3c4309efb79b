//! Airy-pattern point spread functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;

/// Bessel function of the first kind, order one.
///
/// Power series for `|x| <= 12`, Hankel asymptotic expansion beyond.
/// Absolute error stays below 1e-7 over `|x| <= 50`.
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= 12.0 {
        j1_series(ax)
    } else {
        j1_asymptotic(ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

fn j1_series(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = half;
    let mut sum = term;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) || k > 80.0 {
            break;
        }
    }
    sum
}

fn j1_asymptotic(x: f64) -> f64 {
    // mu = 4 nu^2 with nu = 1.
    const MU: f64 = 4.0;
    let z = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    // term_k = prod_{j=1..k} (mu - (2j-1)^2) / (k! z^k)
    for k in 1..=14 {
        let odd = (2 * k - 1) as f64;
        term *= (MU - odd * odd) / (k as f64 * z);
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
    }
    let chi = x - 0.75 * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Normalized Airy intensity `(2 J1(x) / x)^2`, equal to 1 at the origin.
pub fn airy_intensity(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        // 2 J1(x)/x = 1 - x^2/8 + ...
        let a = 1.0 - x * x / 8.0;
        return a * a;
    }
    let a = 2.0 * bessel_j1(x) / x;
    a * a
}

/// Argument at which the normalized Airy intensity drops to one half
/// (about 1.61634).
pub fn airy_half_max_argument() -> f64 {
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if airy_intensity(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// A normalized convolution kernel plus the calibration it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Psf {
    kernel: Image,
    fwhm_px: f64,
    /// Radial scale: the Airy argument is `scale * distance_in_pixels`.
    scale: f64,
}

impl Psf {
    /// Samples an Airy pattern on a `support`x`support` grid, centered at
    /// `((support-1)/2, (support-1)/2)`, with its continuous radial profile
    /// reaching half maximum at `fwhm_px / 2`. The kernel sums to one.
    pub fn airy(support: usize, fwhm_px: f64) -> Result<Psf> {
        if support < 3 {
            return Err(Error::InvalidParameter(format!(
                "PSF support must be at least 3, got {support}"
            )));
        }
        if !(fwhm_px > 0.0 && fwhm_px < support as f64) {
            return Err(Error::InvalidParameter(format!(
                "FWHM must lie in (0, {support}), got {fwhm_px}"
            )));
        }
        let scale = airy_half_max_argument() / (0.5 * fwhm_px);
        let center = (support as f64 - 1.0) / 2.0;
        let mut values = vec![0f64; support * support];
        for r in 0..support {
            for c in 0..support {
                let dr = r as f64 - center;
                let dc = c as f64 - center;
                values[r * support + c] = airy_intensity(scale * (dr * dr + dc * dc).sqrt());
            }
        }
        let total: f64 = values.iter().sum();
        let kernel = Image::from_vec(
            support,
            support,
            values.iter().map(|v| (v / total) as f32).collect(),
        )?;
        Ok(Psf {
            kernel,
            fwhm_px,
            scale,
        })
    }

    /// Wraps an arbitrary nonnegative kernel, rescaled to unit sum.
    pub fn from_kernel(kernel: Image) -> Result<Psf> {
        if kernel.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("PSF kernel has negative samples".into()));
        }
        let total = kernel.sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("PSF kernel sums to zero".into()));
        }
        let kernel = kernel.map(|v| (v as f64 / total) as f32);
        Ok(Psf {
            kernel,
            fwhm_px: f64::NAN,
            scale: f64::NAN,
        })
    }

    /// Identity kernel: a single one at the convolution origin.
    pub fn delta(support: usize) -> Psf {
        let mut kernel = Image::zeros(support, support);
        kernel.set(support / 2, support / 2, 1.0);
        Psf {
            kernel,
            fwhm_px: f64::NAN,
            scale: f64::NAN,
        }
    }

    pub fn kernel(&self) -> &Image {
        &self.kernel
    }

    pub fn support(&self) -> usize {
        self.kernel.height()
    }

    /// FWHM in pixels, `NaN` for kernels not built by [`Psf::airy`].
    pub fn fwhm_px(&self) -> f64 {
        self.fwhm_px
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Continuous radial profile relative to its central value.
    pub fn profile(&self, distance_px: f64) -> f64 {
        airy_intensity(self.scale * distance_px)
    }

    /// Radius of the first dark ring in pixels.
    pub fn first_dark_ring(&self) -> f64 {
        const J1_FIRST_ZERO: f64 = 3.831_705_970_207_512;
        J1_FIRST_ZERO / self.scale
    }

    /// Square root of the kernel magnitude scaled to a unit maximum, for display.
    pub fn visualization(&self) -> Image {
        let root = self.kernel.map(|v| v.abs().sqrt());
        let max = root.max();
        if max > 0.0 {
            root.scale(1.0 / max)
        } else {
            root
        }
    }
}
