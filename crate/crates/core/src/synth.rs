//! Seeded synthetic sky images: point sources blurred by small Gaussians
//! over smooth elliptical galaxy profiles and a faint sky gradient.

use rand::Rng;
use rand_distr::{Distribution, Pareto};

use crate::dataset::CorpusImage;
use crate::error::Result;
use crate::image::Image;
use crate::seeds::rng_for;

/// Number of images in the bundled corpus.
pub const CORPUS_SIZE: usize = 6;
/// Side length of the bundled corpus images.
pub const CORPUS_SIDE: usize = 512;

fn add_gaussian_spot(data: &mut [f64], side: usize, cy: f64, cx: f64, sigma: f64, flux: f64) {
    let radius = (4.0 * sigma).ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    let norm = flux / (2.0 * std::f64::consts::PI * sigma * sigma);
    for r in (iy - radius).max(0)..=(iy + radius).min(side as isize - 1) {
        for c in (ix - radius).max(0)..=(ix + radius).min(side as isize - 1) {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            data[r as usize * side + c as usize] +=
                norm * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Scene parameters; star counts are per 512x512 area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub stars: (usize, usize),
    pub star_flux_cap: f64,
    pub star_tail: f64,
    pub galaxies: (usize, usize),
    pub galaxy_scale: (f64, f64),
    pub galaxy_amp: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            stars: (150, 400),
            star_flux_cap: 60.0,
            star_tail: 1.3,
            galaxies: (2, 4),
            galaxy_scale: (0.03, 0.12),
            galaxy_amp: (0.08, 0.35),
        }
    }
}

/// One `side` x `side` image drawn from the stream labelled by `seed` and
/// `index`, scaled so its maximum is 1.
pub fn synthetic_image(seed: u64, index: usize, side: usize) -> Result<Image> {
    synthetic_image_with(seed, index, side, &SceneParams::default())
}

pub fn synthetic_image_with(seed: u64, index: usize, side: usize, sp: &SceneParams) -> Result<Image> {
    let mut rng = rng_for(seed, &format!("synth:{index}"));
    let n = side as f64;
    let mut data = vec![0f64; side * side];

    // Sky: a weak planar gradient.
    let (gy, gx) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let sky = rng.random_range(0.01..0.04);
    for r in 0..side {
        for c in 0..side {
            let t = 0.5 + 0.25 * (gy * r as f64 + gx * c as f64) / n;
            data[r * side + c] = sky * t;
        }
    }

    // Galaxies: exponential-profile ellipses.
    for _ in 0..rng.random_range(sp.galaxies.0..=sp.galaxies.1) {
        let cy = rng.random_range(0.1 * n..0.9 * n);
        let cx = rng.random_range(0.1 * n..0.9 * n);
        let scale = rng.random_range(sp.galaxy_scale.0 * n..sp.galaxy_scale.1 * n);
        let axis = rng.random_range(0.35..1.0);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(sp.galaxy_amp.0..sp.galaxy_amp.1);
        let (s, co) = theta.sin_cos();
        for r in 0..side {
            for c in 0..side {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let u = (co * dx + s * dy) / scale;
                let v = (-s * dx + co * dy) / (scale * axis);
                let rho = (u * u + v * v).sqrt();
                if rho < 8.0 {
                    data[r * side + c] += amp * (-rho).exp();
                }
            }
        }
    }

    // Stars: heavy-tailed fluxes, slightly resolved cores.
    let fluxes = Pareto::<f64>::new(1.0, sp.star_tail).expect("valid Pareto parameters");
    let stars = rng.random_range(sp.stars.0..sp.stars.1) * side * side / (512 * 512);
    for _ in 0..stars.max(1) {
        let cy = rng.random_range(0.0..n);
        let cx = rng.random_range(0.0..n);
        let sigma = rng.random_range(0.6..1.4);
        let flux = 0.6 * fluxes.sample(&mut rng).min(sp.star_flux_cap);
        add_gaussian_spot(&mut data, side, cy, cx, sigma, flux);
    }

    let img = Image::from_vec(side, side, data.into_iter().map(|v| v as f32).collect())?;
    img.normalize_max()
}

/// The bundled corpus: `CORPUS_SIZE` images of `CORPUS_SIDE` pixels, ids
/// `synth-0`, `synth-1` and so on.
pub fn synthetic_corpus(seed: u64) -> Result<Vec<CorpusImage>> {
    synthetic_corpus_sized(seed, CORPUS_SIZE, CORPUS_SIDE)
}

pub fn synthetic_corpus_sized(seed: u64, count: usize, side: usize) -> Result<Vec<CorpusImage>> {
    (0..count)
        .map(|i| Ok(CorpusImage::new(format!("synth-{i}"), synthetic_image(seed, i, side)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_normalized_and_seeded() {
        let a = synthetic_image(3, 0, 128).unwrap();
        assert_eq!(a.max(), 1.0);
        assert!(a.min() >= 0.0);
        assert_eq!(a, synthetic_image(3, 0, 128).unwrap());
        assert_ne!(a, synthetic_image(3, 1, 128).unwrap());
        assert_ne!(a, synthetic_image(4, 0, 128).unwrap());
    }

    #[test]
    fn corpus_ids() {
        let c = synthetic_corpus_sized(0, 3, 64).unwrap();
        let ids: Vec<_> = c.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["synth-0", "synth-1", "synth-2"]);
    }

    #[test]
    fn contains_point_sources() {
        // Stars make the image much peakier than its median.
        let img = synthetic_image(1, 2, 256).unwrap();
        let mut v = img.as_slice().to_vec();
        v.sort_by(f32::total_cmp);
        assert!(v[v.len() / 2] < 0.2);
    }
}
