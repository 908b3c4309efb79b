//! Convolution engines shared by the forward model and the classical solvers.
//!
//! All routines compute true convolution (the kernel is flipped). For the
//! circular variants the kernel origin is the pixel `(kh / 2, kw / 2)`, so a
//! one at that position is the identity.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::Image;
use crate::psf::Psf;

/// Boundary model for full-image convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Periodic wrap-around.
    #[default]
    Circular,
}

fn check_fits(img: (usize, usize), kernel: (usize, usize)) -> Result<()> {
    if kernel.0 > img.0 || kernel.1 > img.1 {
        return Err(Error::KernelTooLarge { kernel, image: img });
    }
    Ok(())
}

/// Direct `O(n k^2)` circular convolution.
pub fn convolve_circular_direct(img: &Image, kernel: &Image) -> Result<Image> {
    check_fits(img.dims(), kernel.dims())?;
    let (h, w) = img.dims();
    let (kh, kw) = kernel.dims();
    let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
    let (hi, wi) = (h as isize, w as isize);
    let src = img.as_slice();
    let mut out = vec![0f64; h * w];
    for m in 0..kh {
        let dr = m as isize - cy;
        for n in 0..kw {
            let k = kernel.get(m, n) as f64;
            if k == 0.0 {
                continue;
            }
            let dc = n as isize - cx;
            for i in 0..h {
                let sr = (i as isize - dr).rem_euclid(hi) as usize;
                let row = &src[sr * w..(sr + 1) * w];
                let dst = &mut out[i * w..(i + 1) * w];
                for (j, o) in dst.iter_mut().enumerate() {
                    let sc = (j as isize - dc).rem_euclid(wi) as usize;
                    *o += k * row[sc] as f64;
                }
            }
        }
    }
    Image::from_vec(h, w, out.into_iter().map(|v| v as f32).collect())
}

/// Places `kernel` on an `h`x`w` periodic grid with its origin at `(0, 0)`.
pub fn embed_kernel(kernel: &Image, h: usize, w: usize) -> Vec<f64> {
    let (kh, kw) = kernel.dims();
    let (cy, cx) = (kh / 2, kw / 2);
    let mut out = vec![0f64; h * w];
    for m in 0..kh {
        let r = (m + h - cy % h) % h;
        for n in 0..kw {
            let c = (n + w - cx % w) % w;
            out[r * w + c] += kernel.get(m, n) as f64;
        }
    }
    out
}

/// A circular convolution operator with its transfer function precomputed
/// for one image size.
#[derive(Clone, Debug)]
pub struct CircularOperator {
    fft: Fft2,
    transfer: Vec<Complex64>,
}

impl CircularOperator {
    pub fn new(height: usize, width: usize, kernel: &Image) -> Result<Self> {
        check_fits((height, width), kernel.dims())?;
        let fft = Fft2::new(height, width);
        let transfer = fft.forward_real(&embed_kernel(kernel, height, width));
        Ok(Self { fft, transfer })
    }

    pub fn for_psf(img: &Image, psf: &Psf) -> Result<Self> {
        Self::new(img.height(), img.width(), psf.kernel())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fft.dims()
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// The DFT of the embedded kernel.
    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    /// `h * x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, |s, h| s * h)
    }

    /// Adjoint `h~ * x`, convolution with the flipped kernel.
    pub fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, |s, h| s * h.conj())
    }

    /// Adjoint of the forward operator applied after it: `h~ * (h * x)`.
    pub fn apply_normal(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, |s, h| s * h.norm_sqr())
    }

    fn filter(&self, x: &[f64], f: impl Fn(Complex64, Complex64) -> Complex64) -> Vec<f64> {
        let mut spec = self.fft.forward_real(x);
        for (s, &h) in spec.iter_mut().zip(&self.transfer) {
            *s = f(*s, h);
        }
        self.fft.inverse_real(spec)
    }

    pub fn apply_image(&self, img: &Image) -> Result<Image> {
        self.apply_image_with(img, Self::apply)
    }

    pub fn apply_adjoint_image(&self, img: &Image) -> Result<Image> {
        self.apply_image_with(img, Self::apply_adjoint)
    }

    fn apply_image_with(&self, img: &Image, op: impl Fn(&Self, &[f64]) -> Vec<f64>) -> Result<Image> {
        let (h, w) = self.dims();
        if img.dims() != (h, w) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: img.dims(),
            });
        }
        let out = op(self, &to_f64(img));
        Image::from_vec(h, w, out.into_iter().map(|v| v as f32).collect())
    }
}

pub(crate) fn to_f64(img: &Image) -> Vec<f64> {
    img.as_slice().iter().map(|&v| v as f64).collect()
}

/// Circular convolution through the frequency domain.
pub fn convolve_circular_fft(img: &Image, kernel: &Image) -> Result<Image> {
    CircularOperator::new(img.height(), img.width(), kernel)?.apply_image(img)
}

/// Convolves a full image with a PSF under the given boundary model.
pub fn convolve_full_image(img: &Image, psf: &Psf, boundary: Boundary) -> Result<Image> {
    match boundary {
        Boundary::Circular => convolve_circular_fft(img, psf.kernel()),
    }
}

/// Valid-region convolution: the output only covers positions where the
/// kernel lies entirely inside the image, giving `(H - kh + 1, W - kw + 1)`.
pub fn valid_convolve(img: &Image, kernel: &Image) -> Result<Image> {
    check_fits(img.dims(), kernel.dims())?;
    let (h, w) = img.dims();
    let (kh, kw) = kernel.dims();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0f64; oh * ow];
    for m in 0..kh {
        for n in 0..kw {
            let k = kernel.get(kh - 1 - m, kw - 1 - n) as f64;
            for i in 0..oh {
                let src = &img.row(i + m)[n..n + ow];
                for (o, &x) in out[i * ow..(i + 1) * ow].iter_mut().zip(src) {
                    *o += k * x as f64;
                }
            }
        }
    }
    Image::from_vec(oh, ow, out.into_iter().map(|v| v as f32).collect())
}
