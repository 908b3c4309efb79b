use crate::convolve::{to_f64, CircularOperator};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::psf::Psf;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlParams {
    pub iterations: usize,
    /// Guard added to the reblurred estimate before division.
    pub epsilon: f64,
}

impl RlParams {
    pub fn new(iterations: usize) -> Result<Self> {
        let p = Self {
            iterations,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("RL needs at least one iteration".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "RL epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for RlParams {
    fn default() -> Self {
        Self {
            iterations: 30,
            epsilon: 1e-12,
        }
    }
}

/// Richardson-Lucy iteration state,
/// `x <- x . (h~ * (y / (h * x + eps)))`.
#[derive(Debug)]
pub struct RichardsonLucy {
    op: CircularOperator,
    observed: Vec<f64>,
    estimate: Vec<f64>,
    epsilon: f64,
    iterations: usize,
}

impl RichardsonLucy {
    /// Starts from `max(y, 0)`.
    pub fn new(y: &Image, psf: &Psf, epsilon: f64) -> Result<Self> {
        let start = y.map(|v| v.max(0.0));
        Self::with_start(y, psf, epsilon, &start)
    }

    pub fn with_start(y: &Image, psf: &Psf, epsilon: f64, start: &Image) -> Result<Self> {
        y.check_same_dims(start)?;
        if start.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("RL start must be nonnegative".into()));
        }
        let op = CircularOperator::for_psf(y, psf)?;
        let observed = y.as_slice().iter().map(|&v| v.max(0.0) as f64).collect();
        Ok(Self {
            op,
            observed,
            estimate: to_f64(start),
            epsilon,
            iterations: 0,
        })
    }

    pub fn step(&mut self) {
        let reblurred = self.op.apply(&self.estimate);
        // Roundoff in the FFT can push tiny values below zero; the exact
        // products are nonnegative.
        let ratio: Vec<f64> = self
            .observed
            .iter()
            .zip(&reblurred)
            .map(|(&y, &hx)| y / (hx.max(0.0) + self.epsilon))
            .collect();
        let correction = self.op.apply_adjoint(&ratio);
        for (x, c) in self.estimate.iter_mut().zip(correction) {
            *x *= c.max(0.0);
        }
        self.iterations += 1;
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn estimate(&self) -> Image {
        let (h, w) = self.op.dims();
        Image::from_vec(h, w, self.estimate.iter().map(|&v| v as f32).collect())
            .expect("RL iterates stay finite")
    }
}

/// Richardson-Lucy deconvolution started from `max(y, 0)`.
pub fn richardson_lucy(y: &Image, psf: &Psf, p: RlParams) -> Result<Image> {
    p.validate()?;
    let mut rl = RichardsonLucy::new(y, psf, p.epsilon)?;
    for _ in 0..p.iterations {
        rl.step();
    }
    Ok(rl.estimate())
}

/// Richardson-Lucy deconvolution from an explicit nonnegative start.
pub fn richardson_lucy_from(y: &Image, psf: &Psf, p: RlParams, start: &Image) -> Result<Image> {
    p.validate()?;
    let mut rl = RichardsonLucy::with_start(y, psf, p.epsilon, start)?;
    for _ in 0..p.iterations {
        rl.step();
    }
    Ok(rl.estimate())
}
