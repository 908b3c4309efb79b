//! Per-image, per-method PSNR and timing over a corpus.
//!
//! Classical methods get the parameters that maximize PSNR on each image
//! (grid searches in [`crate::classical`]); network rows use a model
//! trained without the image under test. Only the final reconstruction
//! call is timed.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classical::{
    autotune_rl, autotune_tv, autotune_wiener, richardson_lucy, tv_deconvolve, wiener_deconvolve,
};
use crate::cnn::{train, Architecture, CnnModel, TrainConfig, TrainHistory};
use crate::dataset::{build_dataset, CorpusImage, DatasetSpec};
use crate::degrade::{degrade, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::{psnr_unit, Image};
use crate::predict::predict_image;
use crate::psf::Psf;
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The degraded image itself.
    None,
    Wiener,
    Rl,
    Tv,
    Cnn1,
    Cnn3,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::Wiener,
        Method::Rl,
        Method::Tv,
        Method::Cnn1,
        Method::Cnn3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Wiener => "wiener",
            Method::Rl => "rl",
            Method::Tv => "tv",
            Method::Cnn1 => "cnn1",
            Method::Cnn3 => "cnn3",
        }
    }

    /// Network architecture behind a CNN row.
    pub fn architecture(self) -> Option<Architecture> {
        match self {
            Method::Cnn1 => Some(Architecture::Linear),
            Method::Cnn3 => Some(Architecture::ThreeLayer),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?}; expected one of none, wiener, rl, tv, cnn1, cnn3"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub image_id: String,
    pub method: Method,
    pub psnr_db: f64,
    pub wall_time_s: f64,
    /// Parameters used, e.g. `lambda=0.001` or `iterations=20`.
    pub params: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_psnr_db: f64,
    pub mean_time_s: f64,
    pub images: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Per-method means, in order of first appearance.
    pub fn aggregates(&self) -> Vec<MethodSummary> {
        let mut out: Vec<MethodSummary> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|s| s.method == row.method) {
                Some(s) => {
                    s.mean_psnr_db += row.psnr_db;
                    s.mean_time_s += row.wall_time_s;
                    s.images += 1;
                }
                None => out.push(MethodSummary {
                    method: row.method,
                    mean_psnr_db: row.psnr_db,
                    mean_time_s: row.wall_time_s,
                    images: 1,
                }),
            }
        }
        for s in &mut out {
            s.mean_psnr_db /= s.images as f64;
            s.mean_time_s /= s.images as f64;
        }
        out
    }

    pub fn summary(&self, method: Method) -> Option<MethodSummary> {
        self.aggregates().into_iter().find(|s| s.method == method)
    }

    /// CSV with header `image_id,method,psnr_db,wall_time_s,params`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<BenchRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// Trained networks keyed by architecture and the image they exclude.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    models: HashMap<(Architecture, String), CnnModel>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, arch: Architecture, excluded: impl Into<String>, model: CnnModel) {
        self.models.insert((arch, excluded.into()), model);
    }

    pub fn get(&self, arch: Architecture, excluded: &str) -> Option<&CnnModel> {
        self.models.get(&(arch, excluded.to_string()))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Noise seed for the evaluation copy of image `id`.
pub fn evaluation_noise_seed(seed: u64, id: &str) -> u64 {
    derive_seed(seed, &format!("eval:{id}"))
}

/// Trains one model per corpus image, each on patches from all the other
/// images. The dataset seed is shared and the excluded image's id is
/// mixed into the initialization and shuffling seeds.
pub fn train_leave_one_out(
    corpus: &[CorpusImage],
    psf: &Psf,
    noise: &NoiseSpec,
    arch: Architecture,
    dataset: &DatasetSpec,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&str, &TrainHistory),
) -> Result<ModelSet> {
    if corpus.len() < 2 {
        return Err(Error::InvalidParameter(
            "leave-one-out training needs at least two images".into(),
        ));
    }
    let mut set = ModelSet::new();
    for held in corpus {
        let spec = DatasetSpec {
            excluded: Some(held.id.clone()),
            ..dataset.clone()
        };
        let data = build_dataset(corpus, psf, noise, &spec)?;
        let label = format!("{}:{}", arch.name(), held.id);
        let model = arch.build(derive_seed(cfg.seed, &format!("init:{label}")));
        let run_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("shuffle:{label}")),
            ..cfg.clone()
        };
        let (trained, history) = train(model, &data.train, &data.val, &run_cfg)?;
        progress(&held.id, &history);
        set.insert(arch, held.id.clone(), trained);
    }
    Ok(set)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let value = f()?;
    Ok((value, start.elapsed().as_secs_f64()))
}

fn run_cell(method: Method, id: &str, clean: &Image, y: &Image, psf: &Psf, models: &ModelSet) -> Result<BenchRow> {
    let (estimate, time, params) = match method {
        Method::None => (y.clone(), 0.0, String::new()),
        Method::Wiener => {
            let p = autotune_wiener(y, psf, clean)?.params;
            let (x, t) = timed(|| wiener_deconvolve(y, psf, p))?;
            (x, t, format!("lambda={}", p.lambda))
        }
        Method::Rl => {
            let p = autotune_rl(y, psf, clean)?.params;
            let (x, t) = timed(|| richardson_lucy(y, psf, p))?;
            (x, t, format!("iterations={}", p.iterations))
        }
        Method::Tv => {
            let p = autotune_tv(y, psf, clean)?.params;
            let (x, t) = timed(|| tv_deconvolve(y, psf, p))?;
            (x, t, format!("lambda={};iterations={}", p.lambda, p.iterations))
        }
        Method::Cnn1 | Method::Cnn3 => {
            let arch = method.architecture().unwrap();
            let model = models.get(arch, id).ok_or_else(|| Error::MissingModel {
                method: method.name().into(),
                image: id.into(),
            })?;
            let (x, t) = timed(|| predict_image(model, y))?;
            (x, t, format!("excluded={id}"))
        }
    };
    Ok(BenchRow {
        image_id: id.to_string(),
        method,
        psnr_db: psnr_unit(clean, &estimate)?,
        wall_time_s: time,
        params,
    })
}

/// Degrades every image with its own noise seed and scores each method.
pub fn run_benchmark(
    corpus: &[CorpusImage],
    psf: &Psf,
    noise: &NoiseSpec,
    methods: &[Method],
    models: &ModelSet,
) -> Result<BenchReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(None));
    }
    let needs_models = methods.iter().any(|m| m.architecture().is_some());
    if needs_models && corpus.len() < 2 {
        return Err(Error::InvalidParameter(
            "network rows need at least two images for leave-one-out models".into(),
        ));
    }
    // Fail before any expensive work if a model is absent.
    for c in corpus {
        for m in methods {
            if let Some(arch) = m.architecture() {
                if models.get(arch, &c.id).is_none() {
                    return Err(Error::MissingModel {
                        method: m.name().into(),
                        image: c.id.clone(),
                    });
                }
            }
        }
    }
    let mut report = BenchReport::default();
    for c in corpus {
        let y = degrade(&c.image, psf, &noise.with_seed(evaluation_noise_seed(noise.seed, &c.id)))?;
        for &m in methods {
            report.rows.push(run_cell(m, &c.id, &c.image, &y, psf, models)?);
        }
    }
    Ok(report)
}
