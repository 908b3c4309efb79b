//! Single-channel raster images and the pixel-level operations shared by
//! the rest of the pipeline.
//!
//! Layout is row-major with `(row, col)` indexing and the origin at the
//! top-left corner.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// A 2-D single-channel image of `f32` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Wraps a row-major buffer. Fails if the length does not match the
    /// dimensions, if either dimension is zero, or if a sample is not finite.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Truncated {
                expected: height * width,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample {} at ({}, {})",
                data[i],
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Total pixel count.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Sum of all samples, accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixel-wise combination of two equally sized images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        self.check_same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: f32) -> Image {
        self.map(|v| v * factor)
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Rescales so the maximum sample equals 1.0.
    pub fn normalize_max(&self) -> Result<Image> {
        let max = self.max();
        if !(max > 0.0) {
            return Err(Error::DegenerateImage { max });
        }
        if max == 1.0 {
            return Ok(self.clone());
        }
        let inv = 1.0 / max as f64;
        let mut out = self.map(|v| (v as f64 * inv) as f32);
        // Rounding can leave the peak a ulp away from 1; pin it so the
        // operation is idempotent.
        for (o, &v) in out.data.iter_mut().zip(&self.data) {
            if v == max {
                *o = 1.0;
            }
        }
        Ok(out)
    }

    /// Copies the `h`x`w` window whose top-left corner is `(top, left)`.
    pub fn extract_patch(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        self.check_window(top, left, h, w)?;
        let mut data = Vec::with_capacity(h * w);
        for r in top..top + h {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Image {
            height: h,
            width: w,
            data,
        })
    }

    /// Writes `patch` into this image with its top-left corner at `(top, left)`.
    pub fn paste_patch(&mut self, patch: &Image, top: usize, left: usize) -> Result<()> {
        self.check_window(top, left, patch.height, patch.width)?;
        for r in 0..patch.height {
            let dst = (top + r) * self.width + left;
            self.data[dst..dst + patch.width].copy_from_slice(patch.row(r));
        }
        Ok(())
    }

    fn check_window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<()> {
        let bottom = top.checked_add(h);
        let right = left.checked_add(w);
        match (bottom, right) {
            (Some(b), Some(r)) if h > 0 && w > 0 && b <= self.height && r <= self.width => Ok(()),
            _ => Err(Error::PatchOutOfBounds {
                top,
                left,
                bottom: bottom.unwrap_or(usize::MAX),
                right: right.unwrap_or(usize::MAX),
                height: self.height,
                width: self.width,
            }),
        }
    }

    /// Mirror padding that does not repeat the edge pixel
    /// (`... x2 x1 | x0 x1 x2 ...`).
    pub fn reflect_pad(&self, pad: usize) -> Result<Image> {
        if pad >= self.height || pad >= self.width {
            return Err(Error::InvalidParameter(format!(
                "reflect padding of {pad} needs an image larger than {pad}x{pad}, got {}x{}",
                self.height, self.width
            )));
        }
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            j as usize
        };
        let p = pad as isize;
        Ok(Image::from_fn(
            self.height + 2 * pad,
            self.width + 2 * pad,
            |r, c| {
                let sr = reflect(r as isize - p, self.height);
                let sc = reflect(c as isize - p, self.width);
                self.get(sr, sc)
            },
        ))
    }

    /// Cyclic shift by `(dr, dc)`: output `(r, c)` takes input
    /// `(r - dr, c - dc)` modulo the dimensions.
    pub fn cyclic_shift(&self, dr: isize, dc: isize) -> Image {
        let h = self.height as isize;
        let w = self.width as isize;
        Image::from_fn(self.height, self.width, |r, c| {
            let sr = (r as isize - dr).rem_euclid(h) as usize;
            let sc = (c as isize - dc).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f32;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f32 {
        &self.data[r * self.width + c]
    }
}

impl IndexMut<(usize, usize)> for Image {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f32 {
        &mut self.data[r * self.width + c]
    }
}

/// Mean squared difference between two equally sized images.
pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_dims(test)?;
    let sum: f64 = reference
        .as_slice()
        .iter()
        .zip(test.as_slice())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in decibels, `10 log10(peak^2 / mse)`.
///
/// Identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let mse = mse(reference, test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR with the default peak of 1.0 used for max-normalized images.
pub fn psnr_unit(reference: &Image, test: &Image) -> Result<f64> {
    psnr(reference, test, 1.0)
}
