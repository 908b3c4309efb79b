use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{ConvLayer, Tensor};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::image::Image;

/// Side of the square training input window.
pub const INPUT_WINDOW: usize = 32;
/// Side of the square output window produced from [`INPUT_WINDOW`].
pub const OUTPUT_WINDOW: usize = 14;

/// The two network shapes the toolkit trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// 1 -> 64 (10x10) -> 16 (6x6) -> 1 (5x5), ReLU after every layer.
    ThreeLayer,
    /// A single 19x19 linear filter with the same receptive field.
    Linear,
}

impl Architecture {
    pub fn build(self, seed: u64) -> CnnModel {
        match self {
            Architecture::ThreeLayer => build_3cnn(seed),
            Architecture::Linear => build_1cnn(seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::ThreeLayer => "3cnn",
            Architecture::Linear => "1cnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3cnn" => Ok(Architecture::ThreeLayer),
            "1cnn" => Ok(Architecture::Linear),
            other => Err(Error::InvalidParameter(format!(
                "unknown architecture {other:?}, expected 3cnn or 1cnn"
            ))),
        }
    }
}

/// Size of one layer for [`CnnModel::from_spec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub relu: bool,
}

/// A chain of valid convolutions mapping a single-channel window to a
/// smaller single-channel window.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel<T = f32> {
    layers: Vec<ConvLayer<T>>,
    input_window: usize,
}

/// Result of [`CnnModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Image,
    /// Post-activation maps of every layer, when requested.
    pub feature_maps: Option<Vec<Vec<Image>>>,
}

impl<T: Scalar> CnnModel<T> {
    pub fn new(layers: Vec<ConvLayer<T>>, input_window: usize) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::ShapeMismatch("a model needs at least one layer".into()))?;
        if first.in_channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "first layer must take 1 channel, takes {}",
                first.in_channels
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_channels != pair[0].out_channels {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} takes {} channels but layer {} produces {}",
                    i + 1,
                    pair[1].in_channels,
                    i,
                    pair[0].out_channels
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.out_channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "last layer must produce 1 channel, produces {}",
                last.out_channels
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.out_channels * l.in_channels * l.kh * l.kw
                || l.biases.len() != l.out_channels
            {
                return Err(Error::ShapeMismatch(format!("layer {i} parameter count is inconsistent")));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("layer {i} has non-finite parameters")));
            }
        }
        let model = Self {
            layers,
            input_window,
        };
        if input_window < model.receptive_field().0.max(model.receptive_field().1) {
            return Err(Error::ShapeMismatch(format!(
                "input window {input_window} is smaller than the receptive field {:?}",
                model.receptive_field()
            )));
        }
        Ok(model)
    }

    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn from_spec(specs: &[LayerSpec], input_window: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_channels = 1;
        let mut layers = Vec::with_capacity(specs.len());
        for s in specs {
            if s.out_channels == 0 || s.kernel == 0 {
                return Err(Error::ShapeMismatch("layer sizes must be positive".into()));
            }
            layers.push(ConvLayer::glorot_uniform(
                s.out_channels,
                in_channels,
                s.kernel,
                s.kernel,
                s.relu,
                &mut rng,
            ));
            in_channels = s.out_channels;
        }
        Self::new(layers, input_window)
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn input_window(&self) -> usize {
        self.input_window
    }

    /// `input_window - receptive_field + 1`.
    pub fn output_window(&self) -> usize {
        self.input_window + 1 - self.receptive_field().0
    }

    /// Input extent seen by one output pixel, `(rows, cols)`.
    pub fn receptive_field(&self) -> (usize, usize) {
        self.layers
            .iter()
            .fold((1, 1), |(h, w), l| (h + l.kh - 1, w + l.kw - 1))
    }

    /// Offset of an output pixel's footprint center inside the input, i.e.
    /// the padding needed before the first row and column.
    pub fn leading_margin(&self) -> (usize, usize) {
        let (rh, rw) = self.receptive_field();
        ((rh - 1) / 2, (rw - 1) / 2)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::num_params).sum()
    }

    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        CnnModel {
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
            input_window: self.input_window,
        }
    }

    /// Output shape for an input of the given size, checked layer by layer.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.layers.iter().try_fold((height, width), |(h, w), l| {
            l.output_dims(h, w).ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "{height}x{width} input is smaller than the {:?} receptive field",
                    self.receptive_field()
                ))
            })
        })
    }

    pub(crate) fn image_tensor(&self, input: &Image) -> Result<Tensor<T>> {
        self.output_dims(input.height(), input.width())?;
        Ok(Tensor {
            channels: 1,
            height: input.height(),
            width: input.width(),
            data: input.as_slice().iter().map(|&v| T::from_f32(v)).collect(),
        })
    }

    /// Runs every layer, returning each layer's activated output.
    pub fn forward_activations(&self, input: &Image) -> Result<Vec<Tensor<T>>> {
        let mut x = self.image_tensor(input)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = layer.forward(&x)?;
            acts.push(y.clone());
            x = y;
        }
        Ok(acts)
    }

    /// Network output for any input at least as large as the receptive field.
    pub fn predict(&self, input: &Image) -> Result<Image> {
        let mut x = self.image_tensor(input)?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        tensor_channel_image(&x, 0)
    }

    pub fn forward(&self, input: &Image, keep_intermediates: bool) -> Result<ForwardOutput> {
        if !keep_intermediates {
            return Ok(ForwardOutput {
                output: self.predict(input)?,
                feature_maps: None,
            });
        }
        let acts = self.forward_activations(input)?;
        let maps = acts
            .iter()
            .map(|t| (0..t.channels).map(|c| tensor_channel_image(t, c)).collect())
            .collect::<Result<Vec<Vec<Image>>>>()?;
        let output = maps.last().unwrap()[0].clone();
        Ok(ForwardOutput {
            output,
            feature_maps: Some(maps),
        })
    }
}

pub(crate) fn tensor_channel_image<T: Scalar>(t: &Tensor<T>, c: usize) -> Result<Image> {
    Image::from_vec(
        t.height,
        t.width,
        t.channel(c).iter().map(|&v| v.to_f32()).collect(),
    )
}

/// The three-layer network: 64 filters of 10x10, 16 of 6x6 over 64
/// channels, and a final 5x5 merge over 16 channels, all followed by ReLU.
/// Maps a 32x32 window to 14x14.
pub fn build_3cnn(seed: u64) -> CnnModel {
    let specs = [
        LayerSpec { out_channels: 64, kernel: 10, relu: true },
        LayerSpec { out_channels: 16, kernel: 6, relu: true },
        LayerSpec { out_channels: 1, kernel: 5, relu: true },
    ];
    CnnModel::from_spec(&specs, INPUT_WINDOW, seed).expect("valid architecture")
}

/// A single linear 19x19 filter, mapping a 32x32 window to 14x14.
///
/// The filter starts at zero. Its loss is a convex quadratic, so there is
/// no symmetry to break, and a random start would put most of the filter
/// energy at frequencies the PSF removes entirely. There the only
/// curvature comes from the noise, so gradient descent takes tens of
/// thousands of steps to undo the resulting noise gain. The seed is
/// accepted so both architectures build the same way.
pub fn build_1cnn(_seed: u64) -> CnnModel {
    let layers = vec![ConvLayer::zeros(1, 1, 19, 19, false)];
    CnnModel::new(layers, INPUT_WINDOW).expect("valid architecture")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_layer_shapes() {
        let m = build_3cnn(0);
        let shapes: Vec<_> = m.layers().iter().map(ConvLayer::shape).collect();
        assert_eq!(shapes, vec![[64, 1, 10, 10], [16, 64, 6, 6], [1, 16, 5, 5]]);
        assert_eq!(m.num_params(), 64 * 100 + 16 * 64 * 36 + 16 * 25 + 64 + 16 + 1);
        assert_eq!(m.num_params(), 43745);
        assert_eq!(m.receptive_field(), (19, 19));
        assert_eq!(m.output_window(), 14);
        assert!(m.layers().iter().all(|l| l.relu));
        assert!(m.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn linear_shapes() {
        let m = build_1cnn(0);
        assert_eq!(m.layers()[0].shape(), [1, 1, 19, 19]);
        assert!(!m.layers()[0].relu);
        assert_eq!(m.num_params(), 362);
        assert_eq!(m.output_window(), 14);
        assert!(m.layers()[0].weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        assert_eq!(build_3cnn(5), build_3cnn(5));
        assert_ne!(build_3cnn(5), build_3cnn(6));
        let m = build_3cnn(5);
        for l in m.layers() {
            let limit = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt() as f32;
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn forward_dimensions() {
        let m = build_3cnn(1);
        let input = Image::from_fn(32, 32, |r, c| ((r * c) % 7) as f32 / 7.0);
        let out = m.forward(&input, true).unwrap();
        assert_eq!(out.output.dims(), (14, 14));
        let maps = out.feature_maps.unwrap();
        assert_eq!(maps[0].len(), 64);
        assert_eq!(maps[0][0].dims(), (23, 23));
        assert_eq!(maps[1].len(), 16);
        assert_eq!(maps[1][0].dims(), (18, 18));
        assert_eq!(maps[2][0].dims(), (14, 14));
        assert!(maps.iter().flatten().all(|m| m.min() >= 0.0));
        assert!(m.forward(&Image::zeros(18, 32), false).is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = build_3cnn(2);
        for l in m.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = m.predict(&Image::filled(32, 32, 0.5)).unwrap();
        assert_eq!(out, Image::zeros(14, 14));
    }

    #[test]
    fn negative_preactivation_is_killed() {
        let mut m = build_3cnn(3);
        m.layers_mut()[0].biases.iter_mut().for_each(|b| *b = -1e3);
        let maps = m.forward(&Image::filled(32, 32, 0.5), true).unwrap().feature_maps.unwrap();
        assert!(maps[0].iter().all(|img| img.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_delta_crops_center() {
        let mut m = build_1cnn(0);
        let l = &mut m.layers_mut()[0];
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.weights[9 * 19 + 9] = 1.0;
        let input = Image::from_fn(32, 32, |r, c| (r * 32 + c) as f32);
        let out = m.predict(&input).unwrap();
        assert_eq!(out, input.extract_patch(9, 9, 14, 14).unwrap());
    }

    #[test]
    fn translation_covariance() {
        let specs = [LayerSpec { out_channels: 1, kernel: 5, relu: false }];
        let m = CnnModel::<f32>::from_spec(&specs, 20, 4).unwrap();
        let input = Image::from_fn(24, 24, |r, c| ((r * 13 + c * 7) % 11) as f32);
        let base = m.predict(&input).unwrap();
        let (dr, dc) = (2usize, 3usize);
        let shifted_in = Image::from_fn(24, 24, |r, c| {
            if r >= dr && c >= dc { input.get(r - dr, c - dc) } else { 0.0 }
        });
        let shifted = m.predict(&shifted_in).unwrap();
        for r in (dr + 4)..base.height() {
            for c in (dc + 4)..base.width() {
                assert_eq!(shifted.get(r, c), base.get(r - dr, c - dc));
            }
        }
    }

    #[test]
    fn rejects_broken_chains() {
        let a = ConvLayer::<f32>::zeros(4, 1, 3, 3, true);
        let b = ConvLayer::<f32>::zeros(1, 3, 3, 3, true);
        assert!(CnnModel::new(vec![a.clone(), b], 10).is_err());
        assert!(CnnModel::new(vec![a], 10).is_err());
        assert!(CnnModel::<f32>::new(vec![], 10).is_err());
        let c = ConvLayer::<f32>::zeros(1, 1, 5, 5, false);
        assert!(CnnModel::new(vec![c], 4).is_err());
    }

    #[test]
    fn architecture_names() {
        assert_eq!("3cnn".parse::<Architecture>().unwrap(), Architecture::ThreeLayer);
        assert_eq!("1cnn".parse::<Architecture>().unwrap(), Architecture::Linear);
        assert!("2cnn".parse::<Architecture>().is_err());
    }
}
