use crate::convolve::{to_f64, CircularOperator};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::psf::Psf;

/// Upper bound on the squared norm of the forward-difference gradient.
const GRADIENT_NORM_SQ: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvParams {
    pub lambda: f64,
    pub iterations: usize,
    /// Primal step.
    pub tau: f64,
    /// Dual step.
    pub sigma_dual: f64,
    /// Constrain the estimate to be nonnegative.
    pub nonneg: bool,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            iterations: 100,
            tau: 0.25,
            sigma_dual: 0.25,
            nonneg: true,
        }
    }
}

impl TvParams {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    /// Checks `sigma * tau * ||D||^2 <= 1 - tau * lipschitz / 2`.
    pub fn validate(&self, lipschitz: f64) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "TV lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("TV needs at least one iteration".into()));
        }
        if !(self.tau > 0.0 && self.sigma_dual > 0.0) {
            return Err(Error::InvalidParameter("TV step sizes must be positive".into()));
        }
        let lhs = self.sigma_dual * self.tau * GRADIENT_NORM_SQ;
        let rhs = 1.0 - self.tau * lipschitz / 2.0;
        if lhs > rhs {
            return Err(Error::InvalidParameter(format!(
                "TV steps tau={} sigma={} violate sigma*tau*8 <= 1 - tau*L/2 (L={lipschitz:.4})",
                self.tau, self.sigma_dual
            )));
        }
        Ok(())
    }
}

/// Forward differences with Neumann boundary: the last column of `gx` and
/// the last row of `gy` are zero.
pub fn forward_gradient(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                gx[i] = x[i + 1] - x[i];
            }
            if r + 1 < h {
                gy[i] = x[i + w] - x[i];
            }
        }
    }
    (gx, gy)
}

/// Discrete divergence, the negative adjoint of [`forward_gradient`].
pub fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut d = 0.0;
            if c + 1 < w {
                d += px[i];
            }
            if c > 0 {
                d -= px[i - 1];
            }
            if r + 1 < h {
                d += py[i];
            }
            if r > 0 {
                d -= py[i - w];
            }
            out[i] = d;
        }
    }
    out
}

/// Projects each `(px, py)` pair onto the 2-norm ball of radius `radius`.
pub fn project_dual_ball(px: &mut [f64], py: &mut [f64], radius: f64) {
    for (a, b) in px.iter_mut().zip(py.iter_mut()) {
        let n = (*a * *a + *b * *b).sqrt();
        if n > radius {
            let s = if radius > 0.0 { radius / n } else { 0.0 };
            *a *= s;
            *b *= s;
        }
    }
}

/// Isotropic total variation `sum_i ||(Dx)_i||_2`.
pub fn tv_norm(x: &[f64], h: usize, w: usize) -> f64 {
    let (gx, gy) = forward_gradient(x, h, w);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// Condat-Vu primal-dual iterations for
/// `1/2 ||h * x - y||^2 + lambda TV(x)` (plus `x >= 0` when requested).
///
/// The data term enters through its gradient `h~ * (h * x - y)`, the TV term
/// through its dual variable, projected onto balls of radius `lambda`.
#[derive(Debug)]
pub struct TvSolver {
    op: CircularOperator,
    params: TvParams,
    observed: Vec<f64>,
    x: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
    iterations: usize,
}

impl TvSolver {
    /// Starts from `x = y` and a zero dual variable.
    pub fn new(y: &Image, psf: &Psf, params: TvParams) -> Result<Self> {
        let op = CircularOperator::for_psf(y, psf)?;
        let lipschitz = op.transfer().iter().map(|h| h.norm_sqr()).fold(0.0, f64::max);
        params.validate(lipschitz)?;
        let observed = to_f64(y);
        let n = observed.len();
        Ok(Self {
            op,
            params,
            x: observed.clone(),
            observed,
            px: vec![0.0; n],
            py: vec![0.0; n],
            iterations: 0,
        })
    }

    pub fn step(&mut self) {
        let (h, w) = self.op.dims();
        let TvParams {
            lambda,
            tau,
            sigma_dual,
            nonneg,
            ..
        } = self.params;

        let residual: Vec<f64> = self
            .op
            .apply(&self.x)
            .iter()
            .zip(&self.observed)
            .map(|(a, b)| a - b)
            .collect();
        let data_grad = self.op.apply_adjoint(&residual);
        let div = divergence(&self.px, &self.py, h, w);
        // D^T p = -div p
        let next: Vec<f64> = self
            .x
            .iter()
            .zip(&data_grad)
            .zip(&div)
            .map(|((&x, &g), &d)| {
                let v = x - tau * (g - d);
                if nonneg {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect();

        let extrapolated: Vec<f64> = next.iter().zip(&self.x).map(|(&a, &b)| 2.0 * a - b).collect();
        let (gx, gy) = forward_gradient(&extrapolated, h, w);
        for ((p, q), (a, b)) in self
            .px
            .iter_mut()
            .zip(self.py.iter_mut())
            .zip(gx.iter().zip(&gy))
        {
            *p += sigma_dual * a;
            *q += sigma_dual * b;
        }
        project_dual_ball(&mut self.px, &mut self.py, lambda);
        self.x = next;
        self.iterations += 1;
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `1/2 ||h * x - y||^2 + lambda TV(x)` at the current iterate.
    pub fn objective(&self) -> f64 {
        let (h, w) = self.op.dims();
        let data: f64 = self
            .op
            .apply(&self.x)
            .iter()
            .zip(&self.observed)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        0.5 * data + self.params.lambda * tv_norm(&self.x, h, w)
    }

    pub fn estimate(&self) -> Image {
        let (h, w) = self.op.dims();
        Image::from_vec(h, w, self.x.iter().map(|&v| v as f32).collect())
            .expect("TV iterates stay finite")
    }
}

/// Runs exactly `p.iterations` primal-dual iterations from `x = y`.
pub fn tv_deconvolve(y: &Image, psf: &Psf, p: TvParams) -> Result<Image> {
    let mut solver = TvSolver::new(y, psf, p)?;
    for _ in 0..p.iterations {
        solver.step();
    }
    Ok(solver.estimate())
}
