use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::scalar::{gemm, MatRef, Scalar};
use crate::error::{Error, Result};

/// Upper bound on the unfolded-patch buffer, in elements, for inference on
/// large inputs. Rows of output are processed in blocks that fit.
const COLUMN_BUDGET: usize = 1 << 22;

/// A stack of same-sized 2-D maps, `[channel][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}

/// One convolution layer: `out[o] = b[o] + sum_c w[o][c] * in[c]` with
/// valid-region true convolution, optionally followed by a ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    /// `[out][in][kh][kw]`
    pub weights: Vec<T>,
    pub biases: Vec<T>,
    pub relu: bool,
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct LayerCache<T> {
    pub columns: Vec<T>,
    pub output: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize, relu: bool) -> Self {
        assert!(out_channels > 0 && in_channels > 0 && kh > 0 && kw > 0);
        Self {
            out_channels,
            in_channels,
            kh,
            kw,
            weights: vec![T::zero(); out_channels * in_channels * kh * kw],
            biases: vec![T::zero(); out_channels],
            relu,
        }
    }

    /// Uniform weights on `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot_uniform(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        relu: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layer = Self::zeros(out_channels, in_channels, kh, kw, relu);
        let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        for w in layer.weights.iter_mut() {
            *w = T::from(dist.sample(rng)).unwrap();
        }
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kh * self.kw
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// `[out, in, kh, kw]`
    pub fn shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kh, self.kw]
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if height >= self.kh && width >= self.kw {
            Some((height - self.kh + 1, width - self.kw + 1))
        } else {
            None
        }
    }

    pub fn kernel(&self, out: usize, input: usize) -> &[T] {
        let n = self.kh * self.kw;
        let start = (out * self.in_channels + input) * n;
        &self.weights[start..start + n]
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kh: self.kh,
            kw: self.kw,
            weights: self.weights.iter().map(|&w| U::from(w).unwrap()).collect(),
            biases: self.biases.iter().map(|&b| U::from(b).unwrap()).collect(),
            relu: self.relu,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        self.output_dims(input.height, input.width).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "{}x{} input is smaller than the {}x{} kernel",
                input.height, input.width, self.kh, self.kw
            ))
        })
    }

    /// Unfolds input patches for output rows `r0..r1` into a
    /// `(in * kh * kw) x ((r1 - r0) * ow)` row-major matrix whose row order
    /// matches the weight layout. Kernel taps are flipped so the product
    /// with the weights is a true convolution.
    fn im2col(&self, input: &Tensor<T>, ow: usize, r0: usize, r1: usize, cols: &mut [T]) {
        let p = (r1 - r0) * ow;
        let (h, w) = (input.height, input.width);
        for c in 0..self.in_channels {
            let plane = &input.data[c * h * w..(c + 1) * h * w];
            for m in 0..self.kh {
                let dr = self.kh - 1 - m;
                for n in 0..self.kw {
                    let dc = self.kw - 1 - n;
                    let row = (c * self.kh + m) * self.kw + n;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for (ii, i) in (r0..r1).enumerate() {
                        let src = (i + dr) * w + dc;
                        dst[ii * ow..(ii + 1) * ow].copy_from_slice(&plane[src..src + ow]);
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`] over all output rows, accumulated into `grad`.
    fn col2im(&self, cols: &[T], oh: usize, ow: usize, grad: &mut Tensor<T>) {
        let p = oh * ow;
        let (h, w) = (grad.height, grad.width);
        for c in 0..self.in_channels {
            let plane = &mut grad.data[c * h * w..(c + 1) * h * w];
            for m in 0..self.kh {
                let dr = self.kh - 1 - m;
                for n in 0..self.kw {
                    let dc = self.kw - 1 - n;
                    let row = (c * self.kh + m) * self.kw + n;
                    let src = &cols[row * p..(row + 1) * p];
                    for i in 0..oh {
                        let dst = (i + dr) * w + dc;
                        for (d, &s) in plane[dst..dst + ow].iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    fn bias_and_activation(&self, out: &mut Tensor<T>) {
        let n = out.plane_len();
        for (o, plane) in out.data.chunks_mut(n).enumerate() {
            let b = self.biases[o];
            if self.relu {
                for v in plane.iter_mut() {
                    *v = (*v + b).max(T::zero());
                }
            } else {
                for v in plane.iter_mut() {
                    *v = *v + b;
                }
            }
        }
    }

    /// Inference forward pass, processing output rows in blocks so large
    /// inputs do not need a full unfolded copy.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (oh, ow) = self.check_input(input)?;
        let k = self.fan_in();
        let p = oh * ow;
        let rows_per_block = (COLUMN_BUDGET / (k * ow)).clamp(1, oh);
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        let mut cols = vec![T::zero(); k * rows_per_block * ow];
        let weights = MatRef::row_major(&self.weights, self.out_channels, k, k);
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + rows_per_block).min(oh);
            let pb = (r1 - r0) * ow;
            self.im2col(input, ow, r0, r1, &mut cols[..k * pb]);
            let cols_view = MatRef::row_major(&cols[..k * pb], k, pb, pb);
            gemm(T::one(), &weights, &cols_view, T::zero(), &mut out.data[r0 * ow..], p);
            r0 = r1;
        }
        self.bias_and_activation(&mut out);
        Ok(out)
    }

    /// Forward pass that keeps the unfolded input for [`Self::backward`].
    pub(crate) fn forward_cached(&self, input: &Tensor<T>) -> Result<LayerCache<T>> {
        let (oh, ow) = self.check_input(input)?;
        let k = self.fan_in();
        let p = oh * ow;
        let mut columns = vec![T::zero(); k * p];
        self.im2col(input, ow, 0, oh, &mut columns);
        let mut output = Tensor::zeros(self.out_channels, oh, ow);
        gemm(
            T::one(),
            &MatRef::row_major(&self.weights, self.out_channels, k, k),
            &MatRef::row_major(&columns, k, p, p),
            T::zero(),
            &mut output.data,
            p,
        );
        self.bias_and_activation(&mut output);
        Ok(LayerCache { columns, output })
    }

    /// Backpropagates `grad_out` (with respect to this layer's activated
    /// output) into weight and bias gradients, and returns the gradient
    /// with respect to the input when `input_dims` is given.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        mut grad_out: Vec<T>,
        grad_weights: &mut [T],
        grad_biases: &mut [T],
        input_dims: Option<(usize, usize)>,
    ) -> Option<Tensor<T>> {
        let out = &cache.output;
        let p = out.plane_len();
        let k = self.fan_in();
        if self.relu {
            // Subgradient 0 at 0.
            for (g, &y) in grad_out.iter_mut().zip(&out.data) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        for (gb, plane) in grad_biases.iter_mut().zip(grad_out.chunks(p)) {
            *gb += plane.iter().copied().sum::<T>();
        }
        let g = MatRef::row_major(&grad_out, self.out_channels, p, p);
        gemm(
            T::one(),
            &g,
            &MatRef::transposed(&cache.columns, p, k, p),
            T::one(),
            grad_weights,
            k,
        );
        let (h, w) = input_dims?;
        let mut dcols = vec![T::zero(); k * p];
        gemm(
            T::one(),
            &MatRef::transposed(&self.weights, k, self.out_channels, k),
            &g,
            T::zero(),
            &mut dcols,
            p,
        );
        let mut grad_in = Tensor::zeros(self.in_channels, h, w);
        self.col2im(&dcols, out.height, out.width, &mut grad_in);
        Some(grad_in)
    }
}
