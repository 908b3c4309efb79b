//! Training data synthesis: (degraded window, clean center) patch pairs
//! drawn from a corpus of clean images.
//!
//! Each image is degraded once as a whole, then windows are sampled from
//! it, so patch statistics match full-image inference. Samples are drawn
//! with replacement; training and validation use separate random streams
//! over the same images.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::cnn::{INPUT_WINDOW, OUTPUT_WINDOW};
use crate::degrade::{degrade, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{decode_imf1_prefix, encode_imf1, read_image, write_image};
use crate::psf::Psf;
use crate::seeds::{derive_seed, rng_for};

/// A clean image with its identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusImage {
    pub id: String,
    pub image: Image,
}

impl CorpusImage {
    pub fn new(id: impl Into<String>, image: Image) -> Self {
        Self {
            id: id.into(),
            image,
        }
    }
}

/// One training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// Degraded window, `INPUT_WINDOW` square.
    pub input: Image,
    /// Clean window centered under `input`, `OUTPUT_WINDOW` square.
    pub target: Image,
    pub source_id: String,
    pub top: usize,
    pub left: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Image left out of sampling (leave-one-image-out evaluation).
    pub excluded: Option<String>,
    pub input_window: usize,
    pub target_window: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 100_000,
            n_val: 50_000,
            seed: 0,
            excluded: None,
            input_window: INPUT_WINDOW,
            target_window: OUTPUT_WINDOW,
        }
    }
}

impl DatasetSpec {
    /// Offset of the target window inside the input window.
    pub fn target_offset(&self) -> usize {
        (self.input_window - self.target_window) / 2
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::InvalidParameter("dataset sizes must be at least 1".into()));
        }
        if self.target_window == 0 || self.target_window > self.input_window {
            return Err(Error::InvalidParameter(format!(
                "target window {} must fit in input window {}",
                self.target_window, self.input_window
            )));
        }
        if (self.input_window - self.target_window) % 2 != 0 {
            return Err(Error::InvalidParameter(
                "input and target windows must differ by an even number of pixels".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<PatchPair>,
    pub val: Vec<PatchPair>,
}

/// Seed of the noise realization used for `id` inside a dataset.
pub fn image_noise_seed(dataset_seed: u64, id: &str) -> u64 {
    derive_seed(dataset_seed, &format!("noise:{id}"))
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("imf1" | "pgm")
        )
}

/// Loads every `.imf1` and `.pgm` file in `dir`, sorted by file name, with
/// the file stem as id. Each image is scaled to a maximum of 1.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    paths.retain(|p| is_image_file(p));
    paths.sort();
    let corpus = paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(CorpusImage::new(id, read_image(p)?.normalize_max()?))
        })
        .collect::<Result<Vec<_>>>()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(None));
    }
    Ok(corpus)
}

/// Writes each image as `<dir>/<id>.imf1`.
pub fn save_corpus(corpus: &[CorpusImage], dir: impl AsRef<Path>) -> Result<()> {
    std::fs::create_dir_all(dir.as_ref())?;
    for c in corpus {
        write_image(&c.image, dir.as_ref().join(format!("{}.imf1", c.id)))?;
    }
    Ok(())
}

struct Source<'a> {
    id: &'a str,
    clean: &'a Image,
    degraded: Image,
}

/// Builds training and validation pairs.
///
/// Every non-excluded image is degraded once with `psf` and noise of
/// `noise.sigma`, seeded per image from `spec.seed` and the image id.
/// Sample `k` of each split comes from image `k mod n_images` at a uniform
/// random top-left position.
pub fn build_dataset(
    corpus: &[CorpusImage],
    psf: &Psf,
    noise: &NoiseSpec,
    spec: &DatasetSpec,
) -> Result<Dataset> {
    spec.validate()?;
    let kept: Vec<&CorpusImage> = corpus
        .iter()
        .filter(|c| spec.excluded.as_deref() != Some(c.id.as_str()))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus(spec.excluded.clone()));
    }
    for c in &kept {
        let (h, w) = c.image.dims();
        if h < spec.input_window || w < spec.input_window {
            return Err(Error::ImageTooSmall {
                id: c.id.clone(),
                height: h,
                width: w,
                window: spec.input_window,
            });
        }
    }
    let sources = kept
        .iter()
        .map(|c| {
            let noise = noise.with_seed(image_noise_seed(spec.seed, &c.id));
            Ok(Source {
                id: &c.id,
                clean: &c.image,
                degraded: degrade(&c.image, psf, &noise)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let train = sample_pairs(&sources, spec, spec.n_train, "train")?;
    let val = sample_pairs(&sources, spec, spec.n_val, "val")?;
    Ok(Dataset { train, val })
}

fn sample_pairs(sources: &[Source<'_>], spec: &DatasetSpec, count: usize, stream: &str) -> Result<Vec<PatchPair>> {
    let mut rng = rng_for(spec.seed, stream);
    let win = spec.input_window;
    let off = spec.target_offset();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let src = &sources[k % sources.len()];
        let (h, w) = src.degraded.dims();
        let top = rng.random_range(0..=h - win);
        let left = rng.random_range(0..=w - win);
        out.push(PatchPair {
            input: src.degraded.extract_patch(top, left, win, win)?,
            target: src
                .clean
                .extract_patch(top + off, left + off, spec.target_window, spec.target_window)?,
            source_id: src.id.to_string(),
            top,
            left,
        });
    }
    Ok(out)
}

const CACHE_MAGIC: &str = "PSET1";

/// Writes pairs as a text index followed by IMF1 blocks.
///
/// ```text
/// PSET1 <count>\n
/// <source_id>\t<top>\t<left>\n      (count lines)
/// IMF1 input, IMF1 target            (count times)
/// ```
pub fn write_pairs(pairs: &[PatchPair], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_pairs(pairs, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn encode_pairs(pairs: &[PatchPair], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{CACHE_MAGIC} {}", pairs.len())?;
    for p in pairs {
        if p.source_id.contains(['\t', '\n']) {
            return Err(Error::InvalidParameter(format!(
                "source id {:?} contains a tab or newline",
                p.source_id
            )));
        }
        writeln!(out, "{}\t{}\t{}", p.source_id, p.top, p.left)?;
    }
    for p in pairs {
        encode_imf1(&p.input, out)?;
        encode_imf1(&p.target, out)?;
    }
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PatchPair>> {
    decode_pairs(&std::fs::read(path)?)
}

pub fn decode_pairs(bytes: &[u8]) -> Result<Vec<PatchPair>> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<&str> {
        let rest = &bytes[*pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::MalformedHeader("patch index ends early".into()))?;
        *pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| Error::MalformedHeader("patch index is not UTF-8".into()))
    };
    let header = next_line(&mut pos)?;
    let count: usize = match header.split_once(' ') {
        Some((CACHE_MAGIC, n)) => n
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("bad pair count {n:?}")))?,
        _ => {
            return Err(Error::BadMagic {
                expected: CACHE_MAGIC.into(),
                found: header.chars().take(8).collect(),
            })
        }
    };
    let mut index = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let line = next_line(&mut pos)?;
        let mut f = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::MalformedHeader(format!("bad index line {line:?}")))
        };
        let id = f.next().unwrap_or_default().to_string();
        let top = parse(f.next())?;
        let left = parse(f.next())?;
        index.push((id, top, left));
    }
    let mut pairs = Vec::with_capacity(index.len());
    for (source_id, top, left) in index {
        let (input, used) = decode_imf1_prefix(&bytes[pos..])?;
        pos += used;
        let (target, used) = decode_imf1_prefix(&bytes[pos..])?;
        pos += used;
        pairs.push(PatchPair {
            input,
            target,
            source_id,
            top,
            left,
        });
    }
    if pos != bytes.len() {
        return Err(Error::MalformedHeader("trailing bytes after the last pair".into()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    #[test]
    fn corpus_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Image::from_fn(40, 40, |r, c| (r + c) as f32 / 78.0);
        let b = Image::from_fn(33, 35, |r, _| r as f32 / 64.0);
        let corpus = vec![CorpusImage::new("b", b.clone()), CorpusImage::new("a", a.clone())];
        save_corpus(&corpus, dir.path()).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], CorpusImage::new("a", a.normalize_max().unwrap()));
        assert_eq!(back[1].id, "b");
        assert_eq!(back[1].image.max(), 1.0);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(empty.path()), Err(Error::EmptyCorpus(None))));
    }

    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(sizes: &[(usize, usize)]) -> Vec<CorpusImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        sizes
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| {
                CorpusImage::new(
                    format!("img{i}"),
                    Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)),
                )
            })
            .collect()
    }

    fn small_spec(n_train: usize, n_val: usize) -> DatasetSpec {
        DatasetSpec {
            n_train,
            n_val,
            seed: 3,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn targets_are_centered_clean_windows() {
        let c = corpus(&[(40, 50), (64, 33)]);
        let psf = Psf::airy(9, 3.0).unwrap();
        let ds = build_dataset(&c, &psf, &NoiseSpec::default(), &small_spec(50, 20)).unwrap();
        assert_eq!(ds.train.len(), 50);
        assert_eq!(ds.val.len(), 20);
        for p in ds.train.iter().chain(&ds.val) {
            let src = c.iter().find(|s| s.id == p.source_id).unwrap();
            assert_eq!(p.input.dims(), (32, 32));
            assert!(p.top + 32 <= src.image.height() && p.left + 32 <= src.image.width());
            assert_eq!(p.target, src.image.extract_patch(p.top + 9, p.left + 9, 14, 14).unwrap());
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let c = corpus(&[(40, 40), (48, 40)]);
        let psf = Psf::airy(9, 3.0).unwrap();
        let a = build_dataset(&c, &psf, &NoiseSpec::default(), &small_spec(30, 10)).unwrap();
        let b = build_dataset(&c, &psf, &NoiseSpec::default(), &small_spec(30, 10)).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec(30, 10);
        other.seed = 4;
        let c2 = build_dataset(&c, &psf, &NoiseSpec::default(), &other).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn noiseless_delta_gives_matching_centers() {
        let c = corpus(&[(36, 36)]);
        let noise = NoiseSpec::new(0.0, 0).unwrap();
        let ds = build_dataset(&c, &Psf::delta(1), &noise, &small_spec(10, 5)).unwrap();
        for p in &ds.train {
            assert_eq!(p.input.extract_patch(9, 9, 14, 14).unwrap(), p.target);
        }
    }

    #[test]
    fn exclusion_protocol() {
        let c = corpus(&[(40, 40), (40, 40), (40, 40)]);
        let mut spec = small_spec(60, 30);
        spec.excluded = Some("img1".into());
        let ds = build_dataset(&c, &Psf::delta(1), &NoiseSpec::default(), &spec).unwrap();
        assert!(ds.train.iter().chain(&ds.val).all(|p| p.source_id != "img1"));
        assert!(ds.train.iter().any(|p| p.source_id == "img0"));
        assert!(ds.train.iter().any(|p| p.source_id == "img2"));
    }

    #[test]
    fn error_cases() {
        let only = corpus(&[(40, 40)]);
        let mut spec = small_spec(5, 5);
        spec.excluded = Some("img0".into());
        assert!(matches!(
            build_dataset(&only, &Psf::delta(1), &NoiseSpec::default(), &spec),
            Err(Error::EmptyCorpus(_))
        ));
        let tiny = corpus(&[(40, 40), (31, 60)]);
        match build_dataset(&tiny, &Psf::delta(1), &NoiseSpec::default(), &small_spec(5, 5)) {
            Err(Error::ImageTooSmall { id, .. }) => assert_eq!(id, "img1"),
            other => panic!("expected ImageTooSmall, got {other:?}"),
        }
        assert!(build_dataset(&only, &Psf::delta(1), &NoiseSpec::default(), &small_spec(0, 5)).is_err());
    }

    #[test]
    fn positions_are_uniform() {
        // 40x40 image: 9x9 = 81 possible windows.
        let c = corpus(&[(40, 40)]);
        let per_cell = 200;
        let ds = build_dataset(&c, &Psf::delta(1), &NoiseSpec::default(), &small_spec(81 * per_cell, 1)).unwrap();
        let mut counts = [0usize; 81];
        for p in &ds.train {
            counts[p.top * 9 + p.left] += 1;
        }
        let expected = per_cell as f64;
        let chi2: f64 = counts.iter().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
        // 1% critical value of chi-square with 80 degrees of freedom.
        assert!(chi2 < 112.33, "chi-square {chi2}");
    }

    #[test]
    fn cache_roundtrip() {
        let c = corpus(&[(40, 40), (45, 41)]);
        let ds = build_dataset(&c, &Psf::airy(5, 2.0).unwrap(), &NoiseSpec::default(), &small_spec(7, 3)).unwrap();
        let mut bytes = Vec::new();
        encode_pairs(&ds.train, &mut bytes).unwrap();
        assert_eq!(decode_pairs(&bytes).unwrap(), ds.train);
        assert!(decode_pairs(&bytes[..bytes.len() - 3]).is_err());
        assert!(matches!(decode_pairs(b"NOPE 1\n"), Err(Error::BadMagic { .. })));
    }
}
