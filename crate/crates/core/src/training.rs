//! Composite loss, SGD with momentum, step-decay schedule and the train/eval
//! loops.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::model::{DawnModel, ForwardOutput, Mode};
use crate::tensor::ops::huber;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};

/// How the detail-band Huber sum of a level is normalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegNorm {
    /// Divide by the number of detail coefficients in the batch.
    Element,
    /// Divide by the batch size only.
    Batch,
}

/// Named training presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Cifar,
    Kth,
}

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar" => Ok(Recipe::Cifar),
            "kth" => Ok(Recipe::Kth),
            other => Err(Error::Config(format!("unknown recipe `{other}` (expected cifar or kth)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs (1-based) from which the rate is multiplied by `decay_factor` once more.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Weight of the detail-band Huber term.
    pub lambda1: f64,
    /// Weight of the mean-preservation term.
    pub lambda2: f64,
    pub huber_delta: f64,
    pub reg_norm: RegNorm,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub augment: AugmentPolicy,
    /// Run only the first `n` epochs of the schedule.
    pub stop_after: Option<usize>,
    /// Stop once test accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
    /// Record elapsed time in the history; off gives byte-stable CSVs.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.03,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            decay_epochs: Vec::new(),
            decay_factor: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            huber_delta: 1.0,
            reg_norm: RegNorm::Element,
            seed: 0,
            clip_norm: None,
            augment: AugmentPolicy::NONE,
            stop_after: None,
            target_accuracy: None,
            record_time: true,
        }
    }
}

impl TrainConfig {
    pub fn recipe(recipe: Recipe) -> Self {
        match recipe {
            Recipe::Cifar => TrainConfig {
                batch_size: 64,
                epochs: 300,
                decay_epochs: vec![150, 255],
                augment: AugmentPolicy::cifar(),
                ..TrainConfig::default()
            },
            Recipe::Kth => TrainConfig {
                batch_size: 16,
                epochs: 90,
                decay_epochs: vec![30, 60],
                augment: AugmentPolicy {
                    pad: 0,
                    random_crop: false,
                    mirror: true,
                },
                ..TrainConfig::default()
            },
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("decay_epochs must be strictly increasing, got {:?}", self.decay_epochs));
        }
        if self.decay_epochs.iter().any(|&e| e < 1 || e > self.epochs) {
            return bad(format!("decay_epochs must lie in [1, {}], got {:?}", self.epochs, self.decay_epochs));
        }
        if !(self.decay_factor > 0.0) {
            return bad(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("lambda1 and lambda2 must be >= 0, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.huber_delta > 0.0) {
            return bad(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Number of epochs that will actually run.
    pub fn run_epochs(&self) -> usize {
        self.stop_after.map_or(self.epochs, |n| n.min(self.epochs))
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    let mut lr = cfg.lr;
    for _ in 0..drops {
        lr *= cfg.decay_factor;
    }
    lr
}

// -- losses -----------------------------------------------------------------

/// `Σ h(x)` with `h(x) = x²/2` for `|x| <= delta`, `delta·(|x| − delta/2)` beyond.
pub fn huber_sum<T: Scalar>(details: &Tensor<T>, delta: T) -> T {
    details.data().iter().map(|&x| huber(x, delta)).sum()
}

/// Squared difference of the means of a level's input and its LL band.
pub fn mean_reg_term<T: Scalar>(level_input: &Tensor<T>, level_ll: &Tensor<T>) -> T {
    let d = level_input.mean() - level_ll.mean();
    d * d
}

/// Batch-mean negative log-probability of the true class.
pub fn cross_entropy<T: Scalar>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let [b, p] = log_probs.dims2("cross_entropy")?;
    if labels.len() != b {
        return Err(Error::shape("cross_entropy", format!("{} labels for batch {b}", labels.len())));
    }
    let mut total = T::zero();
    for (i, &l) in labels.iter().enumerate() {
        if l >= p {
            return Err(Error::LabelOutOfRange { label: l, classes: p });
        }
        total = total - log_probs.data()[i * p + l];
    }
    Ok(total / T::of(b as f64))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    /// `Σ_l huber_l`, normalised but unweighted.
    pub huber_reg: f64,
    /// `Σ_l mean_l`, unweighted.
    pub mean_reg: f64,
    pub huber_levels: Vec<f64>,
    pub mean_levels: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn recomposed(&self) -> f64 {
        self.cross_entropy + self.lambda1 * self.huber_reg + self.lambda2 * self.mean_reg
    }

    /// Relative gap between `total` and the weighted sum of its terms.
    pub fn additivity_error(&self) -> f64 {
        (self.total - self.recomposed()).abs() / self.total.abs().max(1e-12)
    }

    fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.total += weight * other.total;
        self.cross_entropy += weight * other.cross_entropy;
        self.huber_reg += weight * other.huber_reg;
        self.mean_reg += weight * other.mean_reg;
        self.huber_levels.resize(other.huber_levels.len(), 0.0);
        self.mean_levels.resize(other.mean_levels.len(), 0.0);
        for (a, b) in self.huber_levels.iter_mut().zip(&other.huber_levels) {
            *a += weight * b;
        }
        for (a, b) in self.mean_levels.iter_mut().zip(&other.mean_levels) {
            *a += weight * b;
        }
        self.lambda1 = other.lambda1;
        self.lambda2 = other.lambda2;
    }
}

fn term<T>(r: Result<T>, name: &'static str) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite { op: name },
        e => e,
    })
}

/// Cross-entropy plus `lambda1 · Σ_l huber(D_l) / n` plus
/// `lambda2 · Σ_l (mean(input_l) − mean(LL_l))²`, as one differentiable node.
/// `n` counts the level's detail coefficients or the batch items, per
/// [`RegNorm`].
pub fn composite_loss<T: Scalar>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let batch = g.shape(out.log_probs)[0];
    let ce = term(g.nll(out.log_probs, labels), "cross_entropy")?;
    let delta = T::of(cfg.huber_delta);
    let mut huber_terms = Vec::new();
    let mut mean_terms = Vec::new();
    for level in &out.levels {
        let h = term(
            (|| {
                let mut acc: Option<Var> = None;
                for band in level.bands.details() {
                    let s = g.huber_sum(*band, delta)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, s)?,
                        None => s,
                    });
                }
                let count = match cfg.reg_norm {
                    RegNorm::Element => level.bands.details().iter().map(|b| g.value(**b).len()).sum::<usize>(),
                    RegNorm::Batch => batch,
                };
                g.scale(acc.expect("three detail bands"), T::of(1.0 / count as f64))
            })(),
            "huber",
        )?;
        let m = term(
            (|| {
                let mi = g.mean(level.input)?;
                let mc = g.mean(level.bands.ll)?;
                let d = g.sub(mi, mc)?;
                g.square(d)
            })(),
            "mean",
        )?;
        huber_terms.push(h);
        mean_terms.push(m);
    }
    let mut total = ce;
    let value = |g: &Graph<T>, v: Var| g.value(v).item().to_f64().unwrap_or(f64::NAN);
    for (&h, &m) in huber_terms.iter().zip(&mean_terms) {
        total = term(
            (|| {
                let wh = g.scale(h, T::of(cfg.lambda1))?;
                let wm = g.scale(m, T::of(cfg.lambda2))?;
                let t = g.add(total, wh)?;
                g.add(t, wm)
            })(),
            "total",
        )?;
    }
    let huber_levels: Vec<f64> = huber_terms.iter().map(|&v| value(g, v)).collect();
    let mean_levels: Vec<f64> = mean_terms.iter().map(|&v| value(g, v)).collect();
    let breakdown = LossBreakdown {
        total: value(g, total),
        cross_entropy: value(g, ce),
        huber_reg: huber_levels.iter().sum(),
        mean_reg: mean_levels.iter().sum(),
        huber_levels,
        mean_levels,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
    };
    Ok((total, breakdown))
}

// -- optimizer --------------------------------------------------------------

/// `v ← momentum·v + g; θ ← θ − lr·v`.
pub fn sgd_momentum_step<T: Scalar>(
    theta: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: T,
    momentum: T,
) -> Result<()> {
    if theta.shape() != grad.shape() || theta.shape() != velocity.shape() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!("param {:?}, grad {:?}, velocity {:?}", theta.shape(), grad.shape(), velocity.shape()),
        ));
    }
    for ((t, &g), v) in theta.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g;
        *t = *t - lr * *v;
    }
    Ok(())
}

/// Classical momentum SGD over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar = f32> {
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64) -> Self {
        Sgd {
            momentum,
            clip_norm: None,
            velocity: store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Global L2 norm of the stored gradients.
    pub fn grad_norm(store: &ParamStore<T>) -> f64 {
        store
            .params()
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.velocity.len() != store.params().len() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("{} velocity buffers for {} parameters", self.velocity.len(), store.params().len()),
            ));
        }
        if let Some(max) = self.clip_norm {
            let norm = Self::grad_norm(store);
            if norm > max {
                let f = T::of(max / norm);
                for p in store.params_mut() {
                    p.grad.data_mut().iter_mut().for_each(|g| *g = *g * f);
                }
            }
        }
        let (lr, m) = (T::of(lr), T::of(self.momentum));
        for (p, v) in store.params_mut().iter_mut().zip(&mut self.velocity) {
            sgd_momentum_step(&mut p.value, &p.grad, v, lr, m)?;
        }
        Ok(())
    }
}

// -- evaluation -------------------------------------------------------------

/// Row-wise argmax.
pub fn predictions(log_probs: &Tensor<f32>) -> Result<Vec<usize>> {
    let [_, p] = log_probs.dims2("predictions")?;
    Ok(log_probs
        .data()
        .chunks_exact(p)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let (c, t) = self.per_class[class];
        (t > 0).then(|| c as f64 / t as f64)
    }
}

/// Top-1 accuracy in eval mode.
pub fn evaluate(model: &mut DawnModel, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    let batch_size = batch_size.max(1);
    let mut per_class = vec![(0, 0); data.num_classes()];
    let mut correct = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = data.batch(chunk)?;
        let pred = predictions(&model.predict(&x, Mode::Eval)?)?;
        for (&p, &l) in pred.iter().zip(&labels) {
            per_class[l].1 += 1;
            if p == l {
                per_class[l].0 += 1;
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        correct,
        total: data.len(),
        per_class,
        class_names: data.class_names.clone(),
    })
}

// -- training loop ----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Serialize)]
struct CsvRow {
    epoch: usize,
    lr: f64,
    loss_total: f64,
    loss_ce: f64,
    loss_huber: f64,
    loss_mean: f64,
    train_acc: f64,
    test_acc: Option<f64>,
    wall_seconds: f64,
}

impl From<&EpochRecord> for CsvRow {
    fn from(r: &EpochRecord) -> Self {
        CsvRow {
            epoch: r.epoch,
            lr: r.lr,
            loss_total: r.loss.total,
            loss_ce: r.loss.cross_entropy,
            loss_huber: r.loss.huber_reg,
            loss_mean: r.loss.mean_reg,
            train_acc: r.train_acc,
            test_acc: r.test_acc,
            wall_seconds: r.wall_seconds,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Largest relative additivity gap seen on any training step.
    pub max_additivity_error: f64,
    pub steps: usize,
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.epochs {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Files written by [`train`] into its output directory.
pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Random stream for `(epoch, batch)`; batch `u32::MAX` is the epoch's shuffle.
fn stream_rng(seed: u64, epoch: usize, batch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | batch as u64);
    rng
}

pub type EpochCallback<'a> = Box<dyn FnMut(&EpochRecord) + 'a>;

/// Options for [`train_with`] beyond the configuration.
#[derive(Default)]
pub struct TrainIo<'a> {
    /// Directory for history CSV and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Called after each epoch.
    pub on_epoch: Option<EpochCallback<'a>>,
}

pub fn train(model: &mut DawnModel, train_set: &Dataset, test_set: Option<&Dataset>, cfg: &TrainConfig) -> Result<History> {
    train_with(model, train_set, test_set, cfg, TrainIo::default())
}

/// Joint minimisation of the composite loss over all parameters.
///
/// Each epoch reshuffles from the `(seed, epoch)` stream and augments each
/// batch from its `(seed, epoch, batch)` stream, so results depend only on
/// the configuration. The best checkpoint tracks test accuracy (train
/// accuracy without a test set).
pub fn train_with(
    model: &mut DawnModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut io: TrainIo<'_>,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let classes = model.config().num_classes;
    if train_set.num_classes() > classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model outputs {classes}",
            train_set.num_classes()
        )));
    }
    if let Some(dir) = &io.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut opt = Sgd::new(&model.params, cfg.momentum);
    opt.clip_norm = cfg.clip_norm;
    let mut history = History::default();
    let mut best = f64::NEG_INFINITY;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.run_epochs() {
        let lr = lr_at(epoch, cfg);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, epoch, u32::MAX));
        let mut sum = LossBreakdown::default();
        let mut correct = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, labels) = train_set.batch(idx)?;
            if !cfg.augment.is_identity() {
                x = augment(&x, &cfg.augment, &mut stream_rng(cfg.seed, epoch, b as u32))?;
            }
            let locate = |e: Error| match e {
                Error::NonFinite { op } => Error::NonFiniteLoss { term: op, epoch, batch: b },
                e => e,
            };
            let mut g = Graph::new();
            let xv = g.constant(x).map_err(locate)?;
            let out = model.net.forward(&mut g, &mut model.params, xv, Mode::Train).map_err(locate)?;
            let (loss, br) = composite_loss(&mut g, &out, &labels, cfg).map_err(locate)?;
            g.backward(loss).map_err(locate)?;
            model.params.zero_grad();
            g.accumulate_param_grads(&mut model.params);
            opt.step(&mut model.params, lr)?;

            history.max_additivity_error = history.max_additivity_error.max(br.additivity_error());
            history.steps += 1;
            let pred = predictions(g.value(out.log_probs))?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            sum.accumulate(&br, idx.len() as f64 / train_set.len() as f64);
        }
        let train_acc = correct as f64 / train_set.len() as f64;
        let test_acc = match test_set {
            Some(t) => Some(evaluate(model, t, cfg.batch_size.max(64))?.accuracy()),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: sum,
            train_acc,
            test_acc,
            wall_seconds: if cfg.record_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        let score = test_acc.unwrap_or(train_acc);
        if let Some(dir) = &io.out_dir {
            if score > best {
                model.save_checkpoint(dir.join(BEST_CHECKPOINT))?;
            }
        }
        if score > best {
            best = score;
            history.best_epoch = Some(epoch);
        }
        if let Some(cb) = io.on_epoch.as_mut() {
            cb(&record);
        }
        history.epochs.push(record);
        if let Some(dir) = &io.out_dir {
            history.write_csv(dir.join(HISTORY_FILE))?;
        }
        if cfg.target_accuracy.is_some_and(|t| test_acc.is_some_and(|a| a >= t)) {
            break;
        }
    }
    if let Some(dir) = &io.out_dir {
        model.save_checkpoint(dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_textures, SynthSpec};
    use crate::model::{DawnConfig, Levels};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * b.abs().max(1.0)
    }

    #[test]
    fn huber_examples() {
        let z = Tensor::<f64>::zeros([3, 4]);
        assert_eq!(huber_sum(&z, 1.0), 0.0);
        assert!(close(huber_sum(&Tensor::from_f64([1], &[0.5]).unwrap(), 1.0), 0.125));
        assert!(close(huber_sum(&Tensor::from_f64([2], &[2.0, -3.0]).unwrap(), 1.0), 4.0));
    }

    #[test]
    fn mean_reg_examples() {
        let a = Tensor::<f64>::full([2, 3], 1.0);
        let b = Tensor::<f64>::full([5], 0.5);
        assert_eq!(mean_reg_term(&a, &a), 0.0);
        assert!(close(mean_reg_term(&a, &b), 0.25));
        let c = 3.0;
        let scaled = mean_reg_term(&a.map(|v| v * c), &b.map(|v| v * c));
        assert!(close(scaled, c * c * 0.25));
    }

    #[test]
    fn cross_entropy_examples() {
        let p = 10;
        let uniform = Tensor::<f64>::full([1, p], -(p as f64).ln());
        assert!(close(cross_entropy(&uniform, &[3]).unwrap(), 10f64.ln()));
        let mut confident = vec![-1e9; p];
        confident[4] = 0.0;
        let confident = Tensor::<f64>::new([1, p], confident).unwrap();
        assert!(cross_entropy(&confident, &[4]).unwrap().abs() < 1e-12);
        let two = Tensor::<f64>::from_f64([2, 2], &[-0.1, -2.0, -1.0, -0.5]).unwrap();
        assert!(close(cross_entropy(&two, &[0, 0]).unwrap(), (0.1 + 1.0) / 2.0));
        assert!(matches!(cross_entropy(&two, &[0, 2]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn sgd_examples() {
        let mut t = Tensor::<f64>::zeros([1]);
        let mut v = Tensor::<f64>::zeros([1]);
        let g = Tensor::<f64>::full([1], 1.0);
        sgd_momentum_step(&mut t, &g, &mut v, 0.1, 0.0).unwrap();
        assert!(close(t.item(), -0.1));

        let mut t = Tensor::<f64>::zeros([1]);
        let mut v = Tensor::<f64>::zeros([1]);
        sgd_momentum_step(&mut t, &g, &mut v, 1.0, 0.9).unwrap();
        assert_eq!(t.item(), -1.0);
        sgd_momentum_step(&mut t, &g, &mut v, 1.0, 0.9).unwrap();
        assert!(close(t.item(), -2.9));

        let before = t.clone();
        sgd_momentum_step(&mut t, &Tensor::zeros([1]), &mut v, 1.0, 0.9).unwrap();
        assert!(close(v.item(), 0.9 * 1.9));
        assert!(close(t.item(), before.item() - 0.9 * 1.9));

        let mut bad = Tensor::<f64>::zeros([2]);
        assert!(sgd_momentum_step(&mut bad, &g, &mut v, 1.0, 0.9).is_err());
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut t = Tensor::<f64>::from_f64([3], &[1.0, -2.0, 0.5]).unwrap();
        let mut v = Tensor::<f64>::zeros([3]);
        let g = Tensor::<f64>::from_f64([3], &[0.3, 0.1, -0.7]).unwrap();
        let expect: Vec<f64> = t.data().iter().zip(g.data()).map(|(a, b)| a - 0.05 * b).collect();
        sgd_momentum_step(&mut t, &g, &mut v, 0.05, 0.0).unwrap();
        assert_eq!(t.data(), &expect[..]);
    }

    #[test]
    fn schedule_presets() {
        let c = TrainConfig::recipe(Recipe::Cifar);
        assert_eq!((c.epochs, c.batch_size, c.decay_epochs.clone()), (300, 64, vec![150, 255]));
        assert_eq!(lr_at(1, &c), 0.03);
        assert_eq!(lr_at(149, &c), 0.03);
        assert!(close(lr_at(150, &c), 0.003));
        assert!(close(lr_at(254, &c), 0.003));
        assert!(close(lr_at(255, &c), 0.0003));
        let k = TrainConfig::recipe(Recipe::Kth);
        assert_eq!((k.epochs, k.batch_size), (90, 16));
        assert_eq!(lr_at(29, &k), 0.03);
        assert!(close(lr_at(30, &k), 0.003));
        assert!(close(lr_at(60, &k), 0.0003));
        let flat = TrainConfig::default();
        assert!((1..50).all(|e| lr_at(e, &flat) == flat.lr));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::recipe(Recipe::Cifar);
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { decay_epochs: vec![10, 10], ..ok.clone() },
            TrainConfig { decay_epochs: vec![301], ..ok.clone() },
            TrainConfig { decay_epochs: vec![0], ..ok.clone() },
            TrainConfig { lambda1: -0.1, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn tiny() -> (DawnModel, Dataset) {
        let config = DawnConfig {
            input_size: 16,
            init_channels: 4,
            levels: Levels::Fixed(2),
            num_classes: 4,
            ..DawnConfig::default()
        };
        let (train, _) = synth_textures(&SynthSpec {
            train_per_class: 1,
            size: 16,
            ..SynthSpec::default()
        })
        .unwrap();
        (DawnModel::build(&config, 3).unwrap(), train)
    }

    #[test]
    fn one_epoch_gives_one_finite_row() {
        let (mut model, data) = tiny();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let h = train(&mut model, &data, Some(&data), &cfg).unwrap();
        assert_eq!(h.epochs.len(), 1);
        let r = &h.epochs[0];
        assert!(r.loss.total.is_finite() && r.train_acc.is_finite());
        assert!(h.max_additivity_error < 1e-6);
    }

    #[test]
    fn zero_lambdas_leave_cross_entropy() {
        let (mut model, data) = tiny();
        let cfg = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..TrainConfig::default()
        };
        let mut g = Graph::new();
        let x = g.constant(data.images.clone()).unwrap();
        let out = model.net.forward(&mut g, &mut model.params, x, Mode::Train).unwrap();
        let (loss, br) = composite_loss(&mut g, &out, &data.labels, &cfg).unwrap();
        assert_eq!(g.value(loss).item() as f64, br.cross_entropy);
        assert!(br.huber_reg > 0.0);
    }

    #[test]
    fn non_finite_input_names_the_step() {
        let (mut model, mut data) = tiny();
        data.images.data_mut()[0] = f32::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        match train(&mut model, &data, None, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 1, .. }) => {}
            other => panic!("expected non-finite loss error, got {other:?}"),
        }
    }
}
