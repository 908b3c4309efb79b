use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use astrodeconv::bench::{train_leave_one_out, Method, ModelSet};
use astrodeconv::classical::{autotune_rl, autotune_tv, autotune_wiener};
use astrodeconv::dataset::{load_corpus, save_corpus, write_pairs};
use astrodeconv::io::{write_image_as, ImageFormat};
use astrodeconv::seeds::derive_seed;
use astrodeconv::synth::synthetic_corpus_sized;
use astrodeconv::{
    build_dataset, degrade, extract_feature_maps, load_model, predict_image, psnr_unit, read_image,
    richardson_lucy, run_benchmark, save_model, train, tv_deconvolve, wiener_deconvolve, write_image,
    Architecture, CorpusImage, DatasetSpec, Image, NoiseSpec, Psf, RlParams, TrainConfig, TvParams,
    WienerParams,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "astrodeconv", version, about = "Astronomical image deconvolution toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "ASTRODECONV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an Airy PSF kernel.
    Psf(PsfArgs),
    /// Blur an image with a PSF and add Gaussian noise.
    Degrade(DegradeArgs),
    /// Generate training and validation patch pairs.
    Dataset(DatasetArgs),
    /// Train a network on a corpus.
    Train(TrainArgs),
    /// Reconstruct an image with a trained network.
    Predict(PredictArgs),
    /// Reconstruct an image with a classical method.
    Deconv(DeconvArgs),
    /// Dump one layer's feature maps as PGM images.
    Featuremaps(FeatureMapArgs),
    /// Score methods on a corpus and write a CSV report.
    Bench(BenchArgs),
    /// Write the seeded synthetic corpus to a directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct PsfOpts {
    /// PSF file (IMF1 or PGM); an Airy kernel of the given support and FWHM if omitted.
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    psf_support: usize,
    #[arg(long, default_value_t = 8.0)]
    psf_fwhm: f64,
}

impl PsfOpts {
    fn load(&self) -> astrodeconv::Result<Psf> {
        match &self.psf {
            Some(p) => Psf::from_kernel(read_image(p)?),
            None => Psf::airy(self.psf_support, self.psf_fwhm),
        }
    }
}

#[derive(Debug, Args)]
struct PsfArgs {
    #[arg(long, default_value_t = 64)]
    support: usize,
    #[arg(long, default_value_t = 8.0)]
    fwhm: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a square-root-magnitude PGM for viewing.
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    #[command(flatten)]
    psf: PsfOpts,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorpusOpts {
    /// Directory of clean .imf1/.pgm images.
    #[arg(long)]
    corpus: PathBuf,
    /// Image id to leave out.
    #[arg(long)]
    exclude: Option<String>,
    #[command(flatten)]
    psf: PsfOpts,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 50_000)]
    val: usize,
}

impl CorpusOpts {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_train: self.samples,
            n_val: self.val,
            seed: self.seed,
            excluded: self.exclude.clone(),
            ..DatasetSpec::default()
        }
    }
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_val: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    #[value(name = "3cnn")]
    ThreeLayer,
    #[value(name = "1cnn")]
    Linear,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::ThreeLayer => Architecture::ThreeLayer,
            ArchArg::Linear => Architecture::Linear,
        }
    }
}

#[derive(Debug, Args)]
struct OptimizerOpts {
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Use classical momentum instead of Nesterov.
    #[arg(long)]
    no_nesterov: bool,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Train for all epochs even if validation loss rises.
    #[arg(long)]
    no_early_stop: bool,
}

impl OptimizerOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            nesterov: !self.no_nesterov,
            batch_size: self.batch,
            max_epochs: self.epochs,
            early_stop: !self.no_early_stop,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[arg(long, value_enum, default_value = "3cnn")]
    arch: ArchArg,
    #[command(flatten)]
    optimizer: OptimizerOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeconvMethod {
    Wiener,
    Rl,
    Tv,
}

#[derive(Debug, Args)]
struct DeconvArgs {
    #[arg(long, value_enum)]
    method: DeconvMethod,
    #[command(flatten)]
    psf: PsfOpts,
    /// Regularization weight (Wiener default 1e-3, TV default 1e-2).
    #[arg(long)]
    lambda: Option<f64>,
    /// Iterations (RL default 30, TV default 100).
    #[arg(long)]
    iters: Option<usize>,
    /// Pick parameters by grid search against --ref.
    #[arg(long, requires = "reference")]
    autotune: bool,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeatureMapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// 1-based layer index.
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "none,wiener,rl,tv,cnn1,cnn3")]
    methods: Vec<Method>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    psf: PsfOpts,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    /// Directory holding `<arch>-<image id>.cnn1` leave-one-out models.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Train any missing leave-one-out model (saved to --models if given).
    #[arg(long)]
    train_missing: bool,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 50_000)]
    val: usize,
    #[command(flatten)]
    optimizer: OptimizerOpts,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    outdir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
}

type AnyResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    eprintln!("# astrodeconv {VERSION}");
    eprintln!("# threads: {}", rayon::current_num_threads());
    eprintln!("# config: {:?}", cli.command);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> AnyResult {
    match command {
        Command::Psf(a) => {
            let psf = Psf::airy(a.support, a.fwhm)?;
            write_image(psf.kernel(), &a.out)?;
            if let Some(v) = &a.viz {
                write_image_as(&psf.visualization(), v, ImageFormat::Pgm16)?;
            }
            eprintln!("scale s = {:.6}, first dark ring at {:.4} px", psf.scale(), psf.first_dark_ring());
        }
        Command::Degrade(a) => {
            let psf = a.psf.load()?;
            let clean = read_image(&a.input)?.normalize_max()?;
            let y = degrade(&clean, &psf, &NoiseSpec::new(a.sigma, a.seed)?)?;
            write_image(&y, &a.out)?;
            eprintln!("psnr vs clean: {:.3} dB", psnr_unit(&clean, &y)?);
        }
        Command::Dataset(a) => {
            let corpus = load_corpus(&a.corpus.corpus)?;
            let psf = a.corpus.psf.load()?;
            let noise = NoiseSpec::new(a.corpus.sigma, 0)?;
            let data = build_dataset(&corpus, &psf, &noise, &a.corpus.spec())?;
            write_pairs(&data.train, &a.out_train)?;
            write_pairs(&data.val, &a.out_val)?;
            eprintln!("wrote {} training and {} validation pairs", data.train.len(), data.val.len());
        }
        Command::Train(a) => {
            let corpus = load_corpus(&a.corpus.corpus)?;
            let psf = a.corpus.psf.load()?;
            let noise = NoiseSpec::new(a.corpus.sigma, 0)?;
            let data = build_dataset(&corpus, &psf, &noise, &a.corpus.spec())?;
            let seed = a.corpus.seed;
            let arch: Architecture = a.arch.into();
            let model = arch.build(derive_seed(seed, "init"));
            let cfg = a.optimizer.config(derive_seed(seed, "shuffle"));
            let (model, history) = train(model, &data.train, &data.val, &cfg)?;
            eprintln!("initial validation loss {:.6e}", history.initial_val_loss);
            for e in &history.epochs {
                eprintln!("epoch {:3}  train {:.6e}  val {:.6e}", e.epoch, e.train_loss, e.val_loss);
            }
            eprintln!(
                "kept epoch {}{}",
                history.returned_epoch,
                if history.stopped_early { " (stopped early)" } else { "" }
            );
            save_model(&model, &a.out)?;
        }
        Command::Predict(a) => {
            let model = load_model(&a.model)?;
            let y = read_image(&a.input)?;
            write_image(&predict_image(&model, &y)?, &a.out)?;
        }
        Command::Deconv(a) => deconv(a)?,
        Command::Featuremaps(a) => {
            let model = load_model(&a.model)?;
            let input = read_image(&a.input)?;
            let maps = extract_feature_maps(&model, &input, a.layer)?;
            std::fs::create_dir_all(&a.outdir)?;
            for (c, map) in maps.iter().enumerate() {
                let peak = map.max();
                let shown = if peak > 0.0 { map.scale(1.0 / peak) } else { map.clone() };
                let path = a.outdir.join(format!("layer{}_ch{:02}.pgm", a.layer, c));
                write_image_as(&shown, path, ImageFormat::Pgm16)?;
            }
            eprintln!("wrote {} maps of {}x{}", maps.len(), maps[0].height(), maps[0].width());
        }
        Command::Bench(a) => bench(a)?,
        Command::Synth(a) => {
            save_corpus(&synthetic_corpus_sized(a.seed, a.count, a.size)?, &a.outdir)?;
        }
    }
    Ok(())
}

fn deconv(a: DeconvArgs) -> AnyResult {
    let psf = a.psf.load()?;
    let y = read_image(&a.input)?;
    let reference = a.reference.as_deref().map(read_image).transpose()?;
    let x: Image = match (a.method, a.autotune.then_some(()).and(reference.as_ref())) {
        (DeconvMethod::Wiener, Some(clean)) => {
            let t = autotune_wiener(&y, &psf, clean)?;
            eprintln!("chose lambda={}", t.params.lambda);
            t.estimate
        }
        (DeconvMethod::Rl, Some(clean)) => {
            let t = autotune_rl(&y, &psf, clean)?;
            eprintln!("chose iterations={}", t.params.iterations);
            t.estimate
        }
        (DeconvMethod::Tv, Some(clean)) => {
            let t = autotune_tv(&y, &psf, clean)?;
            eprintln!("chose lambda={}", t.params.lambda);
            t.estimate
        }
        (DeconvMethod::Wiener, None) => wiener_deconvolve(&y, &psf, WienerParams::new(a.lambda.unwrap_or(1e-3))?)?,
        (DeconvMethod::Rl, None) => {
            let p = match a.iters {
                Some(n) => RlParams::new(n)?,
                None => RlParams::default(),
            };
            richardson_lucy(&y, &psf, p)?
        }
        (DeconvMethod::Tv, None) => {
            let mut p = TvParams::default();
            if let Some(l) = a.lambda {
                p.lambda = l;
            }
            if let Some(n) = a.iters {
                p.iterations = n;
            }
            tv_deconvolve(&y, &psf, p)?
        }
    };
    if let Some(clean) = &reference {
        eprintln!("psnr vs reference: {:.3} dB", psnr_unit(clean, &x)?);
    }
    write_image(&x, &a.out)?;
    Ok(())
}

fn model_path(dir: &Path, arch: Architecture, id: &str) -> PathBuf {
    dir.join(format!("{}-{}.cnn1", arch.name(), id))
}

fn bench(a: BenchArgs) -> AnyResult {
    let corpus: Vec<CorpusImage> = load_corpus(&a.corpus)?;
    let psf = a.psf.load()?;
    let noise = NoiseSpec::new(a.sigma, a.seed)?;
    let mut models = ModelSet::new();
    for arch in a.methods.iter().filter_map(|m| m.architecture()) {
        let mut missing = false;
        for c in &corpus {
            match a.models.as_deref().map(|d| model_path(d, arch, &c.id)) {
                Some(p) if p.exists() => models.insert(arch, c.id.clone(), load_model(&p)?),
                _ => missing = true,
            }
        }
        if missing && a.train_missing {
            let spec = DatasetSpec {
                n_train: a.samples,
                n_val: a.val,
                seed: a.seed,
                ..DatasetSpec::default()
            };
            let cfg = a.optimizer.config(a.seed);
            let trained = train_leave_one_out(&corpus, &psf, &noise, arch, &spec, &cfg, |id, h| {
                eprintln!("trained {arch} without {id}: kept epoch {}", h.returned_epoch);
            })?;
            for c in &corpus {
                let m = trained.get(arch, &c.id).expect("one model per image").clone();
                if let Some(dir) = &a.models {
                    std::fs::create_dir_all(dir)?;
                    save_model(&m, model_path(dir, arch, &c.id))?;
                }
                models.insert(arch, c.id.clone(), m);
            }
        }
    }
    let report = run_benchmark(&corpus, &psf, &noise, &a.methods, &models)?;
    report.write_csv(std::fs::File::create(&a.out)?)?;
    for s in report.aggregates() {
        eprintln!(
            "{:>7}  mean psnr {:7.3} dB  mean time {:.4} s",
            s.method.name(),
            s.mean_psnr_db,
            s.mean_time_s
        );
    }
    Ok(())
}
