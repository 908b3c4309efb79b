use rayon::prelude::*;

use super::layer::{LayerCache, Tensor};
use super::model::CnnModel;
use super::scalar::Scalar;
use crate::dataset::PatchPair;
use crate::error::{Error, Result};

/// Gradient of the loss with respect to one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Per-layer gradients, laid out like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &CnnModel<T>) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    biases: vec![T::zero(); l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, &y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    /// All gradient entries in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

fn check_pair<T: Scalar>(model: &CnnModel<T>, pair: &PatchPair) -> Result<()> {
    let (oh, ow) = model.output_dims(pair.input.height(), pair.input.width())?;
    if pair.target.dims() != (oh, ow) {
        return Err(Error::ShapeMismatch(format!(
            "target is {:?} but the model maps a {:?} input to {:?}",
            pair.target.dims(),
            pair.input.dims(),
            (oh, ow)
        )));
    }
    Ok(())
}

/// Sum of squared errors of one sample, and its gradient scaled by `scale`.
fn sample_gradient<T: Scalar>(
    model: &CnnModel<T>,
    pair: &PatchPair,
    scale: T,
) -> Result<(f64, Gradients<T>)> {
    let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(model.layers().len());
    let input = model.image_tensor(&pair.input)?;
    for (i, layer) in model.layers().iter().enumerate() {
        let x = if i == 0 { &input } else { &caches[i - 1].output };
        let cache = layer.forward_cached(x)?;
        caches.push(cache);
    }
    let out = &caches.last().unwrap().output;
    let two = T::from(2.0).unwrap();
    let mut sse = 0.0f64;
    let mut grad_out: Vec<T> = out
        .data
        .iter()
        .zip(pair.target.as_slice())
        .map(|(&y, &t)| {
            let d = y - T::from_f32(t);
            sse += d.to_f64().unwrap().powi(2);
            two * d * scale
        })
        .collect();

    let mut grads = Gradients::zeros_like(model);
    for i in (0..model.layers().len()).rev() {
        let layer = &model.layers()[i];
        let input_dims = (i > 0).then(|| {
            let prev: &Tensor<T> = &caches[i - 1].output;
            (prev.height, prev.width)
        });
        let g = &mut grads.layers[i];
        match layer.backward(&caches[i], grad_out, &mut g.weights, &mut g.biases, input_dims) {
            Some(grad_in) => grad_out = grad_in.data,
            None => break,
        }
    }
    Ok((sse, grads))
}

/// Mean squared error over the batch and all output pixels, and its
/// gradient with respect to every weight and bias.
///
/// Per-sample gradients are computed in parallel and summed in sample
/// order, so the result does not depend on the thread count.
pub fn loss_and_gradients<T: Scalar>(
    model: &CnnModel<T>,
    batch: &[PatchPair],
) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    for pair in batch {
        check_pair(model, pair)?;
    }
    let pixels = batch[0].target.len();
    let count = (batch.len() * pixels) as f64;
    let scale = T::from(1.0 / count).unwrap();
    let parts = batch
        .par_iter()
        .map(|pair| sample_gradient(model, pair, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(model);
    let mut sse = 0.0;
    for (s, g) in &parts {
        sse += s;
        total.add_assign(g);
    }
    Ok((sse / count, total))
}

/// Mean squared error over a set of pairs without gradients.
pub fn evaluate_loss<T: Scalar>(model: &CnnModel<T>, pairs: &[PatchPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::ShapeMismatch("empty evaluation set".into()));
    }
    let parts = pairs
        .par_iter()
        .map(|pair| {
            check_pair(model, pair)?;
            let out = model.predict(&pair.input)?;
            Ok(out
                .as_slice()
                .iter()
                .zip(pair.target.as_slice())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let pixels = pairs[0].target.len();
    Ok(parts.iter().sum::<f64>() / (pairs.len() * pixels) as f64)
}
