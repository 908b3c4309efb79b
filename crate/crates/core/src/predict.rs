//! Whole-image inference by tiling, and feature-map extraction.
//!
//! The input is reflect-padded by the model's margin (9 pixels for the
//! shipped architectures) and covered by input windows whose outputs tile
//! the image with stride equal to the output window. When the size is not a
//! multiple of the stride the last row and column of tiles are anchored to
//! the bottom and right edges and overwrite the overlap. Cost is linear in
//! the pixel count.

use rayon::prelude::*;

use crate::cnn::{CnnModel, Scalar};
use crate::error::{Error, Result};
use crate::image::Image;

/// Start offsets of `window`-sized tiles covering `0..len`, with the last
/// tile flush against the end.
pub fn tile_origins(len: usize, window: usize) -> Vec<usize> {
    assert!(window > 0 && len >= window);
    let mut starts: Vec<usize> = (0..=len - window).step_by(window).collect();
    if starts.last().map_or(true, |&s| s + window < len) {
        starts.push(len - window);
    }
    starts
}

/// Reflect-pads `img` so that a valid pass of `model` returns an image of
/// the original size.
pub fn pad_for_model<T: Scalar>(model: &CnnModel<T>, img: &Image) -> Result<Image> {
    let (rh, rw) = model.receptive_field();
    let (mt, ml) = model.leading_margin();
    if rh != rw || rh - 1 - mt != mt || ml != mt {
        return Err(Error::ShapeMismatch(format!(
            "tiled prediction needs a square, odd receptive field, got {rh}x{rw}"
        )));
    }
    let window = model.input_window();
    if img.height() + 2 * mt < window || img.width() + 2 * mt < window {
        return Err(Error::ImageTooSmall {
            id: "input".into(),
            height: img.height(),
            width: img.width(),
            window: window - 2 * mt,
        });
    }
    img.reflect_pad(mt)
}

/// Reconstructs a full image, output dimensions equal to the input's.
pub fn predict_image<T: Scalar>(model: &CnnModel<T>, degraded: &Image) -> Result<Image> {
    let padded = pad_for_model(model, degraded)?;
    let win_in = model.input_window();
    let win_out = model.output_window();
    let (h, w) = degraded.dims();
    let rows = tile_origins(h, win_out);
    let cols = tile_origins(w, win_out);
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let tiles = origins
        .par_iter()
        .map(|&(r, c)| model.predict(&padded.extract_patch(r, c, win_in, win_in)?))
        .collect::<Result<Vec<Image>>>()?;
    let mut out = Image::zeros(h, w);
    for (&(r, c), tile) in origins.iter().zip(&tiles) {
        out.paste_patch(tile, r, c)?;
    }
    Ok(out)
}

/// Runs the model once over the whole padded image instead of tile by tile.
pub fn predict_image_single_pass<T: Scalar>(model: &CnnModel<T>, degraded: &Image) -> Result<Image> {
    let padded = pad_for_model(model, degraded)?;
    model.predict(&padded)
}

/// Post-activation maps of `layer` (1-based) for one input, one image per
/// channel.
pub fn extract_feature_maps<T: Scalar>(model: &CnnModel<T>, input: &Image, layer: usize) -> Result<Vec<Image>> {
    let count = model.layers().len();
    if layer == 0 || layer > count {
        return Err(Error::BadLayerIndex { index: layer, count });
    }
    let mut t = model.image_tensor(input)?;
    for l in &model.layers()[..layer] {
        t = l.forward(&t)?;
    }
    (0..t.channels)
        .map(|c| {
            Image::from_vec(
                t.height,
                t.width,
                t.channel(c).iter().map(|&v| v.to_f32()).collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{build_1cnn, build_3cnn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn origins_cover_and_anchor() {
        assert_eq!(tile_origins(28, 14), vec![0, 14]);
        assert_eq!(tile_origins(30, 14), vec![0, 14, 16]);
        assert_eq!(tile_origins(14, 14), vec![0]);
    }

    #[test]
    fn output_keeps_input_size() {
        let m = build_1cnn(1);
        for (h, w) in [(100, 77), (32, 32), (14, 20)] {
            let out = predict_image(&m, &random(2, h, w)).unwrap();
            assert_eq!(out.dims(), (h, w));
        }
        assert!(predict_image(&m, &random(3, 13, 40)).is_err());
    }

    #[test]
    fn delta_filter_reproduces_input() {
        let mut m = build_1cnn(0);
        let l = &mut m.layers_mut()[0];
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.weights[9 * 19 + 9] = 1.0;
        let img = random(4, 45, 60);
        assert_eq!(predict_image(&m, &img).unwrap(), img);
    }

    #[test]
    fn tiled_matches_single_pass() {
        let m = build_3cnn(5);
        let img = random(6, 50, 37);
        let a = predict_image(&m, &img).unwrap();
        let b = predict_image_single_pass(&m, &img).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn feature_map_shapes() {
        let m = build_3cnn(7);
        let input = random(8, 32, 32);
        let l1 = extract_feature_maps(&m, &input, 1).unwrap();
        assert_eq!(l1.len(), 64);
        assert!(l1.iter().all(|f| f.dims() == (23, 23) && f.min() >= 0.0));
        let l2 = extract_feature_maps(&m, &input, 2).unwrap();
        assert_eq!(l2.len(), 16);
        assert!(l2.iter().all(|f| f.dims() == (18, 18) && f.min() >= 0.0));
        assert!(matches!(extract_feature_maps(&m, &input, 0), Err(Error::BadLayerIndex { .. })));
        assert!(matches!(extract_feature_maps(&m, &input, 4), Err(Error::BadLayerIndex { .. })));
    }
}
