//! Grid searches that pick, per image, the parameters giving the highest
//! PSNR against the clean reference.

use super::rl::{RichardsonLucy, RlParams};
use super::tv::{tv_deconvolve, TvParams};
use super::wiener::{WienerFilter, WienerParams};
use crate::error::Result;
use crate::image::{psnr_unit, Image};
use crate::psf::Psf;

pub const RL_ITERATION_GRID: [usize; 7] = [5, 10, 20, 30, 50, 75, 100];

/// `count` values spaced evenly in log10 between `10^lo` and `10^hi`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuned<P> {
    pub params: P,
    pub psnr: f64,
    pub estimate: Image,
}

fn keep_best<P>(best: &mut Option<Tuned<P>>, candidate: Tuned<P>) {
    if best.as_ref().map_or(true, |b| candidate.psnr > b.psnr) {
        *best = Some(candidate);
    }
}

/// Wiener lambda over `10^-4 .. 10^0`, 13 log-spaced values.
pub fn autotune_wiener(y: &Image, psf: &Psf, clean: &Image) -> Result<Tuned<WienerParams>> {
    let filter = WienerFilter::new(y, psf)?;
    let mut best = None;
    for lambda in logspace(-4.0, 0.0, 13) {
        let params = WienerParams::new(lambda)?;
        let estimate = filter.solve(params)?;
        let psnr = psnr_unit(clean, &estimate)?;
        keep_best(&mut best, Tuned { params, psnr, estimate });
    }
    Ok(best.expect("non-empty grid"))
}

/// RL iteration count over [`RL_ITERATION_GRID`], read off a single run.
pub fn autotune_rl(y: &Image, psf: &Psf, clean: &Image) -> Result<Tuned<RlParams>> {
    let eps = RlParams::default().epsilon;
    let mut rl = RichardsonLucy::new(y, psf, eps)?;
    let mut best = None;
    for &target in &RL_ITERATION_GRID {
        while rl.iterations() < target {
            rl.step();
        }
        let estimate = rl.estimate();
        let psnr = psnr_unit(clean, &estimate)?;
        let params = RlParams {
            iterations: target,
            epsilon: eps,
        };
        keep_best(&mut best, Tuned { params, psnr, estimate });
    }
    Ok(best.expect("non-empty grid"))
}

/// TV lambda over `10^-4 .. 10^-1`, 10 log-spaced values, 100 iterations each.
pub fn autotune_tv(y: &Image, psf: &Psf, clean: &Image) -> Result<Tuned<TvParams>> {
    let mut best = None;
    for lambda in logspace(-4.0, -1.0, 10) {
        let params = TvParams::with_lambda(lambda);
        let estimate = tv_deconvolve(y, psf, params)?;
        let psnr = psnr_unit(clean, &estimate)?;
        keep_best(&mut best, Tuned { params, psnr, estimate });
    }
    Ok(best.expect("non-empty grid"))
}
