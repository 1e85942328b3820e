//! The `dawn` command line: `train`, `eval`, `params`, `decompose` and
//! `gradcheck`.
//!
//! Configuration is layered: built-in defaults, then a TOML file
//! (`--config`), then `--recipe`, then individual flags. Every training run
//! writes the fully resolved configuration to `<out>/config.toml`; feeding
//! that file back through `--config` repeats the run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checks;
use crate::data::{self, AugmentPolicy, CifarVariant, Dataset, FolderOptions, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::lifting::SubBands;
use crate::model::{reference_count, DawnConfig, DawnModel, Levels};
use crate::tensor::gradcheck::GradCheckConfig;
use crate::tensor::Tensor;
use crate::training::{self, evaluate, EvalReport, Recipe, RegNorm, TrainConfig, TrainIo};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "DAWN_DATA_DIR";
/// Resolved configuration written next to every run's outputs.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synth,
    Cifar10,
    Cifar100,
    Folder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    pub dir: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Side length for image-folder datasets.
    pub image_size: usize,
    pub image_channels: usize,
    /// Require the distributed CIFAR record counts.
    pub cifar_strict: bool,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    /// Standardise with training-set channel statistics.
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: DatasetKind::Synth,
            dir: None,
            synth: SynthSpec::default(),
            image_size: 32,
            image_channels: 3,
            cifar_strict: true,
            limit_train: None,
            limit_test: None,
            normalize: false,
        }
    }
}

impl DataConfig {
    fn data_dir(&self) -> Result<PathBuf> {
        self.dir.clone().ok_or_else(|| {
            Error::Config(format!("dataset {:?} needs --data-dir or {DATA_DIR_ENV}", self.dataset))
        })
    }

    /// Image side and class count known without reading any file.
    pub fn known_shape(&self) -> (Option<usize>, Option<usize>) {
        match self.dataset {
            DatasetKind::Synth => (Some(self.synth.size), Some(self.synth.classes)),
            DatasetKind::Cifar10 => (Some(32), Some(10)),
            DatasetKind::Cifar100 => (Some(32), Some(100)),
            DatasetKind::Folder => (Some(self.image_size), None),
        }
    }

    /// Train and test splits after limits and optional standardisation.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = match self.dataset {
            DatasetKind::Synth => data::synth_textures(&self.synth)?,
            DatasetKind::Cifar10 => data::load_cifar_with(self.data_dir()?, CifarVariant::Cifar10, self.cifar_strict)?,
            DatasetKind::Cifar100 => data::load_cifar_with(self.data_dir()?, CifarVariant::Cifar100, self.cifar_strict)?,
            DatasetKind::Folder => {
                let dir = self.data_dir()?;
                let opts = FolderOptions {
                    size: self.image_size,
                    channels: self.image_channels,
                };
                let train = data::load_image_folder(dir.join("train"), opts, Split::Train)?;
                let test = data::load_image_folder(dir.join("test"), opts, Split::Test)?;
                if train.class_names != test.class_names {
                    return Err(Error::Data(format!(
                        "{}: train and test class directories differ",
                        dir.display()
                    )));
                }
                (train, test)
            }
        };
        if let Some(n) = self.limit_train {
            train = train.take(n)?;
        }
        if let Some(n) = self.limit_test {
            test = test.take(n)?;
        }
        if self.normalize {
            let (mean, std) = train.channel_stats();
            train.standardize(&mean, &std)?;
            test.standardize(&mean, &std)?;
        }
        Ok((train, test))
    }
}

/// Everything a run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: DawnConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Whether a TOML document sets `model.num_classes`.
fn sets_classes(text: &str) -> bool {
    text.parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("model").and_then(|m| m.get("num_classes")).map(|_| ()))
        .is_some()
}

// -- flags --------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "dawn", version, about = "Trainable lifting-scheme wavelet classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a model and write history, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Top-1 and per-class accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Trainable-parameter breakdown of a configuration.
    Params(ParamsArgs),
    /// Export the sub-bands of an image and its reconstruction.
    Decompose(DecomposeArgs),
    /// Run the gradient and reconstruction self-checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    /// Depth of the initial block (0 removes it).
    #[arg(long = "init-channels", visible_alias = "init")]
    pub init_channels: Option<usize>,
    /// Lifting kernel size.
    #[arg(long = "kernel-size", visible_alias = "k")]
    pub kernel_size: Option<usize>,
    /// Convolutions per predictor/updater.
    #[arg(long = "hidden-layers", visible_alias = "h")]
    pub hidden_layers: Option<usize>,
    /// Decomposition levels, or `auto`.
    #[arg(long)]
    pub levels: Option<Levels>,
    #[arg(long = "classes", visible_alias = "num-classes")]
    pub classes: Option<usize>,
    #[arg(long = "input-size")]
    pub input_size: Option<usize>,
    #[arg(long = "input-channels")]
    pub input_channels: Option<usize>,
}

impl ModelFlags {
    fn apply(&self, m: &mut DawnConfig) {
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut m.init_channels, self.init_channels);
        set(&mut m.kernel_size, self.kernel_size);
        set(&mut m.hidden_layers, self.hidden_layers);
        set(&mut m.num_classes, self.classes);
        set(&mut m.input_size, self.input_size);
        set(&mut m.input_channels, self.input_channels);
        if let Some(l) = self.levels {
            m.levels = l;
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct DataFlags {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Dataset directory.
    #[arg(long = "data-dir", env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Synthetic training images per class.
    #[arg(long = "train-per-class")]
    pub train_per_class: Option<usize>,
    /// Synthetic test images per class.
    #[arg(long = "test-per-class")]
    pub test_per_class: Option<usize>,
    /// Synthetic image side.
    #[arg(long = "synth-size")]
    pub synth_size: Option<usize>,
    /// Synthetic dataset seed.
    #[arg(long = "synth-seed")]
    pub synth_seed: Option<u64>,
    /// Image-folder side length.
    #[arg(long = "image-size")]
    pub image_size: Option<usize>,
    #[arg(long = "limit-train")]
    pub limit_train: Option<usize>,
    #[arg(long = "limit-test")]
    pub limit_test: Option<usize>,
    /// Accept CIFAR files with any record count.
    #[arg(long = "lenient-cifar")]
    pub lenient_cifar: bool,
    /// Standardise inputs with training-set channel statistics.
    #[arg(long)]
    pub normalize: bool,
}

impl DataFlags {
    fn apply(&self, d: &mut DataConfig) {
        if let Some(k) = self.dataset {
            d.dataset = k;
        }
        if self.data_dir.is_some() {
            d.dir = self.data_dir.clone();
        }
        if let Some(v) = self.train_per_class {
            d.synth.train_per_class = v;
        }
        if let Some(v) = self.test_per_class {
            d.synth.test_per_class = v;
        }
        if let Some(v) = self.synth_size {
            d.synth.size = v;
        }
        if let Some(v) = self.synth_seed {
            d.synth.seed = v;
        }
        if let Some(v) = self.image_size {
            d.image_size = v;
        }
        if self.limit_train.is_some() {
            d.limit_train = self.limit_train;
        }
        if self.limit_test.is_some() {
            d.limit_test = self.limit_test;
        }
        if self.lenient_cifar {
            d.cifar_strict = false;
        }
        if self.normalize {
            d.normalize = true;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentKind {
    None,
    Mirror,
    CropMirror,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// Preset schedule: cifar (300 epochs, decay 150/255, batch 64) or kth (90, 30/60, 16).
    #[arg(long)]
    pub recipe: Option<Recipe>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Comma-separated decay epochs.
    #[arg(long = "decay-epochs", value_delimiter = ',')]
    pub decay_epochs: Option<Vec<usize>>,
    #[arg(long = "decay-factor")]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long = "huber-delta")]
    pub huber_delta: Option<f64>,
    #[arg(long = "reg-norm", value_enum)]
    pub reg_norm: Option<RegNormArg>,
    #[arg(long = "clip-norm")]
    pub clip_norm: Option<f64>,
    #[arg(long, value_enum)]
    pub augment: Option<AugmentKind>,
    /// Run only the first N epochs of the schedule.
    #[arg(long = "stop-after")]
    pub stop_after: Option<usize>,
    /// Stop once test accuracy reaches this fraction.
    #[arg(long = "target-accuracy")]
    pub target_accuracy: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 0 for wall_seconds so histories compare byte for byte.
    #[arg(long = "no-wall-time")]
    pub no_wall_time: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegNormArg {
    Element,
    Batch,
}

impl TrainFlags {
    fn apply(&self, t: &mut TrainConfig) {
        if let Some(r) = self.recipe {
            let seed = t.seed;
            *t = TrainConfig {
                seed,
                ..TrainConfig::recipe(r)
            };
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { t.$f = v; })*};
        }
        set!(epochs, batch_size, lr, momentum, decay_epochs, decay_factor, lambda1, lambda2, huber_delta, seed);
        if let Some(r) = self.reg_norm {
            t.reg_norm = match r {
                RegNormArg::Element => RegNorm::Element,
                RegNormArg::Batch => RegNorm::Batch,
            };
        }
        if self.clip_norm.is_some() {
            t.clip_norm = self.clip_norm;
        }
        if let Some(a) = self.augment {
            t.augment = match a {
                AugmentKind::None => AugmentPolicy::NONE,
                AugmentKind::Mirror => AugmentPolicy {
                    mirror: true,
                    ..AugmentPolicy::NONE
                },
                AugmentKind::CropMirror => AugmentPolicy::cifar(),
            };
        }
        if self.stop_after.is_some() {
            t.stop_after = self.stop_after;
        }
        if self.target_accuracy.is_some() {
            t.target_accuracy = self.target_accuracy;
        }
        if self.no_wall_time {
            t.record_time = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML configuration with [model], [train] and [data] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs/dawn")]
    pub out: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long = "dry-run")]
    pub dry_run: bool,
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run configuration; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "batch-size", default_value_t = 64)]
    pub batch_size: usize,
    /// Evaluate the training split instead of the test split.
    #[arg(long = "train-split")]
    pub train_split: bool,
    #[command(flatten)]
    pub data: DataFlags,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also list every parameter tensor.
    #[arg(long)]
    pub describe: bool,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsKind {
    /// Random initialisation from `--seed`.
    Random,
    /// Linear steps with zero updater and identity predictor.
    Predict,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// PNG or PGM image.
    #[arg(long)]
    pub input: PathBuf,
    /// Trained weights; without one a fresh model is built from the flags below.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Levels to export (all model levels by default).
    #[arg(long)]
    pub levels: Option<usize>,
    /// Gain applied to detail bands before mapping around mid-gray.
    #[arg(long = "detail-scale", default_value_t = 10.0)]
    pub detail_scale: f32,
    #[arg(long, default_value = "decomposition")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    pub weights: WeightsKind,
    #[arg(long = "init-channels", visible_alias = "init", default_value_t = 0)]
    pub init_channels: usize,
    #[arg(long = "kernel-size", visible_alias = "k", default_value_t = 3)]
    pub kernel_size: usize,
    #[arg(long = "hidden-layers", visible_alias = "h", default_value_t = 1)]
    pub hidden_layers: usize,
    /// Decode the image as 1 (luma) or 3 (RGB) channels.
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random shapes per operation.
    #[arg(long, default_value_t = 3)]
    pub shapes: u64,
    /// Coordinates probed in the full-model check.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Reconstruction trials.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

// -- commands -----------------------------------------------------------------

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Params(a) => cmd_params(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

/// Defaults, then the config file, then flags. The model's input geometry
/// follows the dataset; the class count does too unless set explicitly.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let (mut run, mut classes_set) = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            (RunConfig::from_toml(&text)?, sets_classes(&text))
        }
        None => (RunConfig::default(), false),
    };
    a.train.apply(&mut run.train);
    a.data.apply(&mut run.data);
    a.model.apply(&mut run.model);
    classes_set |= a.model.classes.is_some();
    let (size, classes) = run.data.known_shape();
    if let Some(s) = size {
        run.model.input_size = s;
    }
    if run.data.dataset == DatasetKind::Folder {
        run.model.input_channels = run.data.image_channels;
    } else {
        run.model.input_channels = 3;
    }
    if let (false, Some(c)) = (classes_set, classes) {
        run.model.num_classes = c;
    }
    run.train.validate()?;
    run.model.validate()?;
    Ok(run)
}

fn write_config(dir: &Path, run: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, run.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut run = resolve_train_config(a)?;
    if a.dry_run {
        print!("{}", run.to_toml()?);
        return Ok(0);
    }
    let (train, test) = run.data.load()?;
    if a.model.classes.is_none() && run.data.dataset == DatasetKind::Folder {
        run.model.num_classes = train.num_classes();
    }
    if train.num_classes() > run.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            train.num_classes(),
            run.model.num_classes
        )));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_config(&a.out, &run)?;
    let mut model = DawnModel::build(&run.model, run.train.seed)?;
    if !a.quiet {
        println!(
            "training {} parameters on {} images ({} test), {} epochs",
            model.params.num_scalars(),
            train.len(),
            test.len(),
            run.train.run_epochs()
        );
    }
    let quiet = a.quiet;
    let total = run.train.run_epochs();
    let io = TrainIo {
        out_dir: Some(a.out.clone()),
        on_epoch: Some(Box::new(move |r: &training::EpochRecord| {
            if !quiet {
                println!(
                    "epoch {}/{} lr {} loss {:.4} (ce {:.4} huber {:.4} mean {:.5}) train {:.4} test {}",
                    r.epoch,
                    total,
                    r.lr,
                    r.loss.total,
                    r.loss.cross_entropy,
                    r.loss.huber_reg,
                    r.loss.mean_reg,
                    r.train_acc,
                    r.test_acc.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
        })),
    };
    let history = training::train_with(&mut model, &train, Some(&test), &run.train, io)?;
    if !a.quiet {
        if let Some(last) = history.last() {
            println!(
                "final test accuracy {:.4} (best epoch {})",
                last.test_acc.unwrap_or(0.0),
                history.best_epoch.unwrap_or(0)
            );
        }
        println!("wrote {}", a.out.display());
    }
    Ok(0)
}

fn config_beside(checkpoint: &Path, explicit: &Option<PathBuf>) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    RunConfig::read(&path)
}

/// Top-1 line followed by one line per class.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = format!("accuracy {:.4} ({}/{})\n", report.accuracy(), report.correct, report.total);
    for (i, (c, t)) in report.per_class.iter().enumerate() {
        let acc = report.class_accuracy(i).map_or("-".to_string(), |a| format!("{a:.4}"));
        out.push_str(&format!("  {:<16} {acc} ({c}/{t})\n", report.class_names[i]));
    }
    out
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    if !a.checkpoint.is_file() {
        return Err(Error::Checkpoint(format!("{}: no such file", a.checkpoint.display())));
    }
    let mut run = config_beside(&a.checkpoint, &a.config)?;
    a.data.apply(&mut run.data);
    let mut model = DawnModel::load_checkpoint(&a.checkpoint, &run.model)?;
    let (train, test) = run.data.load()?;
    let set = if a.train_split { &train } else { &test };
    if set.image_shape() != [run.model.input_channels, run.model.input_size, run.model.input_size] {
        return Err(Error::Config(format!(
            "dataset images {:?} do not fit the model input",
            set.image_shape()
        )));
    }
    let report = evaluate(&mut model, set, a.batch_size)?;
    print!("{}", format_report(&report));
    Ok(0)
}

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// The text printed by `dawn params`.
pub fn params_report(config: &DawnConfig, describe: bool) -> Result<String> {
    let b = crate::model::param_count(config)?;
    let mut out = String::new();
    out.push_str(&format!("{:<18}{:>12}\n", "initial", thousands(b.initial)));
    for (i, n) in b.levels.iter().enumerate() {
        out.push_str(&format!("{:<18}{:>12}\n", format!("level {}", i + 1), thousands(*n)));
    }
    out.push_str(&format!("{:<18}{:>12}\n", "classifier", thousands(b.classifier)));
    out.push_str(&format!("{:<18}{:>12}\n", "total", thousands(b.total())));
    if let Some(r) = reference_count(config) {
        let dev = 100.0 * (b.total() as f64 - r as f64) / r as f64;
        out.push_str(&format!("{:<18}{:>12}  deviation {dev:+.2}%\n", "reference", thousands(r)));
        if b.total() != r {
            out.push_str(
                "note: the reference counts for one hidden layer include a per-level\n      \
                 contribution the pooled head (3C per level + C) does not have\n",
            );
        }
    }
    if describe {
        let model = DawnModel::build(config, 0)?;
        out.push('\n');
        out.push_str(&model.describe());
    }
    Ok(out)
}

pub fn cmd_params(a: &ParamsArgs) -> Result<i32> {
    let mut config = match &a.config {
        Some(p) => RunConfig::read(p)?.model,
        None => DawnConfig::default(),
    };
    a.model.apply(&mut config);
    print!("{}", params_report(&config, a.describe)?);
    Ok(0)
}

/// Mean over channels of batch item 0.
fn channel_mean(t: &Tensor<f32>) -> Result<(usize, usize, Vec<f32>)> {
    let [_, c, h, w] = t.dims4("decompose")?;
    let plane = h * w;
    let mut out = vec![0f32; plane];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *o += v / c as f32;
        }
    }
    Ok((h, w, out))
}

/// Min/max stretch to `[0, 255]`; constant images map to mid-gray.
pub fn approximation_pixels(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    values
        .iter()
        .map(|&v| data::to_u8(if span > 0.0 { (v - lo) / span } else { 0.5 }))
        .collect()
}

/// `0.5 + scale * v`, clamped.
pub fn detail_pixels(values: &[f32], scale: f32) -> Vec<u8> {
    values.iter().map(|&v| data::to_u8(0.5 + scale * v)).collect()
}

/// Files and reconstruction error produced by [`decompose_image`].
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub files: Vec<PathBuf>,
    pub max_error: f32,
}

/// Write `level{t}_{ll,lh,hl,hh}.png` for the first `levels` levels plus
/// `input.png` and `reconstruction.png` (the lifting stack's input and its
/// inverse).
pub fn decompose_image(
    model: &mut DawnModel,
    image: &Tensor<f32>,
    levels: usize,
    detail_scale: f32,
    out: &Path,
) -> Result<Decomposition> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (stack_input, bands) = model.decompose(image)?;
    if levels == 0 || levels > bands.len() {
        return Err(Error::Config(format!("levels must be in 1..={}, got {levels}", bands.len())));
    }
    let bands: Vec<SubBands<Tensor<f32>>> = bands.into_iter().take(levels).collect();
    let mut files = Vec::new();
    let mut save = |name: String, h: usize, w: usize, px: Vec<u8>| -> Result<()> {
        let path = out.join(name);
        data::write_gray(&path, w, h, px)?;
        files.push(path);
        Ok(())
    };
    for (t, b) in bands.iter().enumerate() {
        let (h, w, ll) = channel_mean(&b.ll)?;
        save(format!("level{}_ll.png", t + 1), h, w, approximation_pixels(&ll))?;
        for (name, band) in ["lh", "hl", "hh"].iter().zip(b.details()) {
            let (h, w, v) = channel_mean(band)?;
            save(format!("level{}_{name}.png", t + 1), h, w, detail_pixels(&v, detail_scale))?;
        }
    }
    let recon = model.reconstruct(&bands)?;
    let max_error = recon.max_abs_diff(&stack_input);
    let (h, w, v) = channel_mean(&stack_input)?;
    save("input.png".into(), h, w, approximation_pixels(&v))?;
    let (h, w, v) = channel_mean(&recon)?;
    save("reconstruction.png".into(), h, w, approximation_pixels(&v))?;
    Ok(Decomposition { files, max_error })
}

pub fn cmd_decompose(a: &DecomposeArgs) -> Result<i32> {
    let (width, height) = image::image_dimensions(&a.input).map_err(|source| Error::Image {
        path: a.input.clone(),
        source,
    })?;
    let (mut model, size) = match &a.checkpoint {
        Some(ckpt) => {
            if !ckpt.is_file() {
                return Err(Error::Checkpoint(format!("{}: no such file", ckpt.display())));
            }
            let run = config_beside(ckpt, &a.config)?;
            let size = run.model.input_size;
            if (width, height) != (size as u32, size as u32) {
                return Err(Error::Config(format!(
                    "image is {width}x{height}, checkpoint expects {size}x{size}"
                )));
            }
            (DawnModel::load_checkpoint(ckpt, &run.model)?, size)
        }
        None => {
            let size = width.min(height) as usize;
            let config = DawnConfig {
                input_channels: a.channels,
                input_size: size,
                init_channels: a.init_channels,
                levels: a.levels.map_or(Levels::Auto, Levels::Fixed),
                kernel_size: a.kernel_size,
                hidden_layers: a.hidden_layers,
                num_classes: 2,
            };
            let mut model = DawnModel::build(&config, a.seed)?;
            if a.weights == WeightsKind::Predict {
                set_predict_weights(&mut model);
            }
            (model, size)
        }
    };
    let channels = model.config().input_channels;
    let pixels = data::load_image(&a.input, FolderOptions { size, channels })?;
    let image = Tensor::new([1, channels, size, size], pixels)?;
    let levels = a.levels.unwrap_or(model.num_levels());
    let result = decompose_image(&mut model, &image, levels, a.detail_scale, &a.out)?;
    for f in &result.files {
        println!("{}", f.display());
    }
    println!("max reconstruction error {:.3e}", result.max_error);
    Ok(0)
}

/// Linear lifting with zero updaters and identity predictors: each detail is
/// the difference of neighbouring samples.
pub fn set_predict_weights(model: &mut DawnModel) {
    for level in model.net.levels_mut() {
        level.set_linear_mode(true);
    }
    for level in model.net.levels() {
        for step in level.steps() {
            step.updater.fill_zero(&mut model.params);
            step.predictor.fill_identity(&mut model.params);
        }
    }
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let mut ok = true;
    let cfg = GradCheckConfig {
        samples: Some(64),
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    for op in checks::CHECKED_OPS {
        let mut worst: f64 = 0.0;
        for s in 0..a.shapes {
            worst = worst.max(checks::check_op(op, a.seed.wrapping_add(s), &cfg)?.max_rel_error);
        }
        let pass = worst < cfg.tolerance;
        ok &= pass;
        println!("{} op {op:<16} max relative error {worst:.2e}", if pass { "ok  " } else { "FAIL" });
    }
    let r = checks::reconstruction_check(a.trials, a.seed)?;
    let pass = r.max() < 1e-5;
    ok &= pass;
    println!(
        "{} reconstruction ({} trials) step {:.2e} level {:.2e} stack {:.2e}",
        if pass { "ok  " } else { "FAIL" },
        r.trials,
        r.step,
        r.level,
        r.stack
    );
    let model_cfg = GradCheckConfig {
        samples: Some(a.samples),
        ..cfg
    };
    let r = checks::model_gradcheck(&TrainConfig::default(), &model_cfg, a.seed)?;
    ok &= r.passed();
    println!(
        "{} composite loss, toy model ({} coordinates) max relative error {:.2e}",
        if r.passed() { "ok  " } else { "FAIL" },
        r.checked,
        r.max_rel_error
    );
    Ok(if ok { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(45_348), "45,348");
        assert_eq!(thousands(1_363_236), "1,363,236");
    }

    #[test]
    fn run_config_round_trips_through_toml() {
        let mut run = RunConfig {
            train: TrainConfig::recipe(Recipe::Cifar),
            ..RunConfig::default()
        };
        run.train.clip_norm = Some(5.0);
        run.model.levels = Levels::Fixed(2);
        run.data.dir = Some("/data/cifar".into());
        let text = run.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), run);
        assert!(sets_classes(&text));
        assert!(!sets_classes("[train]\nepochs = 3\n"));
    }

    #[test]
    fn detail_mapping_is_mid_gray_at_zero() {
        assert_eq!(detail_pixels(&[0.0, 0.1, -1.0], 10.0), vec![128, 255, 0]);
        assert_eq!(approximation_pixels(&[2.0, 3.0, 4.0]), vec![0, 128, 255]);
        assert_eq!(approximation_pixels(&[1.0, 1.0]), vec![128, 128]);
    }
}
