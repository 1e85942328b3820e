//! The full classifier: initial Conv-BN-ReLU block, stacked lifting levels,
//! pooled sub-band head and a dense log-softmax classifier.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{Lifting2D, SubBands};
use crate::tensor::checkpoint;
use crate::tensor::init::he_uniform;
use crate::tensor::{BufferId, Graph, Pad2d, ParamId, ParamStore, Scalar, Tensor, Var};

/// Smallest sub-band side the level count is derived for.
pub const MIN_FEATURE_SIZE: usize = 4;

/// Number of decomposition levels for a square input of side `input_size`:
/// `floor(log2(input_size) - log2(4))`.
pub fn compute_levels(input_size: usize) -> Result<usize> {
    if input_size < 2 * MIN_FEATURE_SIZE {
        return Err(Error::Config(format!(
            "input size {input_size} leaves no decomposition level above the {MIN_FEATURE_SIZE}x{MIN_FEATURE_SIZE} floor"
        )));
    }
    let floor_log2 = usize::BITS as usize - 1 - input_size.leading_zeros() as usize;
    Ok(floor_log2 - 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LevelsRepr", into = "LevelsRepr")]
pub enum Levels {
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LevelsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<LevelsRepr> for Levels {
    type Error = String;

    fn try_from(r: LevelsRepr) -> Result<Self, String> {
        match r {
            LevelsRepr::Count(n) => Ok(Levels::Fixed(n)),
            LevelsRepr::Word(w) => w.parse(),
        }
    }
}

impl From<Levels> for LevelsRepr {
    fn from(l: Levels) -> Self {
        match l {
            Levels::Auto => LevelsRepr::Word("auto".into()),
            Levels::Fixed(n) => LevelsRepr::Count(n),
        }
    }
}

impl std::str::FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(Levels::Auto)
        } else {
            s.parse()
                .map(Levels::Fixed)
                .map_err(|_| format!("levels must be `auto` or a count, got `{s}`"))
        }
    }
}

impl fmt::Display for Levels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Levels::Auto => f.write_str("auto"),
            Levels::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DawnConfig {
    pub input_channels: usize,
    /// Side of the square input image.
    pub input_size: usize,
    /// Depth of the initial Conv-BN-ReLU block; 0 removes the block.
    pub init_channels: usize,
    pub levels: Levels,
    pub kernel_size: usize,
    pub hidden_layers: usize,
    pub num_classes: usize,
}

impl Default for DawnConfig {
    fn default() -> Self {
        DawnConfig {
            input_channels: 3,
            input_size: 32,
            init_channels: 16,
            levels: Levels::Auto,
            kernel_size: 3,
            hidden_layers: 1,
            num_classes: 10,
        }
    }
}

impl DawnConfig {
    /// Channel count entering the lifting stack.
    pub fn lifting_channels(&self) -> usize {
        if self.init_channels == 0 {
            self.input_channels
        } else {
            self.init_channels
        }
    }

    /// Validated level count.
    pub fn num_levels(&self) -> Result<usize> {
        let levels = match self.levels {
            Levels::Auto => compute_levels(self.input_size)?,
            Levels::Fixed(0) => 0,
            Levels::Fixed(n) => {
                let max = compute_levels(self.input_size)?;
                if n > max {
                    return Err(Error::Config(format!(
                        "{n} levels requested, at most {max} fit a {0}x{0} input",
                        self.input_size
                    )));
                }
                n
            }
        };
        if levels > 0 && !self.input_size.is_multiple_of(1 << levels) {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{levels}",
                self.input_size
            )));
        }
        Ok(levels)
    }

    pub fn validate(&self) -> Result<usize> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_size", self.input_size),
            ("kernel_size", self.kernel_size),
            ("hidden_layers", self.hidden_layers),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.init_channels > 0 && self.input_size < 2 {
            return Err(Error::Config("initial 3x3 block needs inputs of at least 2x2".into()));
        }
        let levels = self.num_levels()?;
        if levels > 0 {
            // the last vertical steps see half-extents of input_size / 2^levels
            let smallest = self.input_size >> levels;
            let after = self.kernel_size / 2;
            if after >= smallest {
                return Err(Error::Config(format!(
                    "kernel size {} needs reflection padding of {after}, smallest sub-band extent is {smallest}",
                    self.kernel_size
                )));
            }
        }
        Ok(levels)
    }

    /// Width of the pooled feature vector fed to the classifier.
    pub fn head_width(&self) -> Result<usize> {
        let levels = self.num_levels()?;
        Ok(3 * levels * self.lifting_channels() + self.lifting_channels())
    }
}

/// Trainable scalar counts per module.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub initial: usize,
    pub levels: Vec<usize>,
    pub classifier: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.initial + self.levels.iter().sum::<usize>() + self.classifier
    }
}

/// Closed-form parameter count.
///
/// Conventions: initial convolutions carry no bias (batch norm follows),
/// batch norm contributes scale and shift per channel, lifting convolutions
/// and the dense layer are biased. Running statistics are not counted.
pub fn param_count(config: &DawnConfig) -> Result<ParamBreakdown> {
    let levels = config.validate()?;
    let c0 = config.init_channels;
    let initial = if c0 == 0 {
        0
    } else {
        config.input_channels * c0 * 9 + 2 * c0 + c0 * c0 * 9 + 2 * c0
    };
    let c = config.lifting_channels();
    let per_level = Lifting2D::param_count(c, config.kernel_size, config.hidden_layers);
    let width = config.head_width()?;
    Ok(ParamBreakdown {
        initial,
        levels: vec![per_level; levels],
        classifier: width * config.num_classes + config.num_classes,
    })
}

/// Reference trainable-parameter counts for the 64-channel, 100-class,
/// 32x32 RGB configuration, keyed by `(kernel_size, hidden_layers, levels)`.
pub const REFERENCE_COUNTS: [((usize, usize, usize), usize); 10] = [
    ((3, 1, 3), 734_628),
    ((1, 1, 3), 439_716),
    ((2, 1, 3), 587_172),
    ((4, 1, 3), 882_084),
    ((3, 2, 3), 918_564),
    ((3, 3, 3), 1_140_900),
    ((3, 4, 3), 1_363_236),
    ((3, 1, 0), 45_348),
    ((3, 1, 1), 275_108),
    ((3, 1, 2), 504_868),
];

/// The [`REFERENCE_COUNTS`] configurations as full model configs.
pub fn reference_configs() -> Vec<(DawnConfig, usize)> {
    REFERENCE_COUNTS
        .iter()
        .map(|&((k, h, l), count)| {
            (
                DawnConfig {
                    input_channels: 3,
                    input_size: 32,
                    init_channels: 64,
                    levels: Levels::Fixed(l),
                    kernel_size: k,
                    hidden_layers: h,
                    num_classes: 100,
                },
                count,
            )
        })
        .collect()
}

/// Reference count for `config`, when it is one of the reference rows.
pub fn reference_count(config: &DawnConfig) -> Option<usize> {
    if config.input_channels != 3 || config.input_size != 32 || config.init_channels != 64 || config.num_classes != 100 {
        return None;
    }
    let levels = config.num_levels().ok()?;
    REFERENCE_COUNTS
        .iter()
        .find(|((k, h, l), _)| *k == config.kernel_size && *h == config.hidden_layers && *l == levels)
        .map(|&(_, n)| n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct ConvBnRelu {
    weight: ParamId,
    scale: ParamId,
    shift: ParamId,
    running: (BufferId, BufferId),
}

impl ConvBnRelu {
    fn new(store: &mut ParamStore<f32>, name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBnRelu {
            weight: store.add_param(format!("{name}.conv.weight"), he_uniform(rng, &[out_ch, in_ch, 3, 3], in_ch * 9))?,
            scale: store.add_param(format!("{name}.bn.scale"), Tensor::full([out_ch], 1.0))?,
            shift: store.add_param(format!("{name}.bn.shift"), Tensor::zeros([out_ch]))?,
            running: (
                store.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros([out_ch]))?,
                store.add_buffer(format!("{name}.bn.running_var"), Tensor::full([out_ch], 1.0))?,
            ),
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let padded = g.reflect_pad(x, Pad2d::uniform(1))?;
        let w = g.param(store, self.weight);
        let y = g.conv2d(padded, w, None, (1, 1))?;
        let scale = g.param(store, self.scale);
        let shift = g.param(store, self.shift);
        let y = g.batch_norm(y, scale, shift, store, self.running, mode == Mode::Train)?;
        g.relu(y)
    }
}

/// Graph handles produced by one level.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    /// Tensor the level decomposed (previous LL or the initial block output).
    pub input: Var,
    pub bands: SubBands<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub log_probs: Var,
    /// Input to the lifting stack.
    pub stack_input: Var,
    pub levels: Vec<LevelOutput>,
}

/// Architecture: parameter handles only, valid for any store built with the
/// same configuration (including an `f64` copy).
#[derive(Clone, Debug)]
pub struct Dawn {
    config: DawnConfig,
    initial: Vec<ConvBnRelu>,
    levels: Vec<Lifting2D>,
    classifier: (ParamId, ParamId),
}

impl Dawn {
    pub fn config(&self) -> &DawnConfig {
        &self.config
    }

    pub fn levels(&self) -> &[Lifting2D] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Lifting2D] {
        &mut self.levels
    }

    /// Initial block only.
    pub fn stem<T: Scalar>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let shape = g.shape(x);
        let c = &self.config;
        if shape != [shape[0], c.input_channels, c.input_size, c.input_size] || shape.len() != 4 {
            return Err(Error::shape(
                "dawn forward",
                format!(
                    "expected [B, {}, {}, {}], got {shape:?}",
                    c.input_channels, c.input_size, c.input_size
                ),
            ));
        }
        let mut h = x;
        for block in &self.initial {
            h = block.forward(g, store, h, mode)?;
        }
        Ok(h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<ForwardOutput> {
        let stack_input = self.stem(g, store, x, mode)?;
        let mut current = stack_input;
        let mut pooled = Vec::with_capacity(3 * self.levels.len() + 1);
        let mut levels = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let bands = level.forward(g, store, current)?;
            for band in bands.details() {
                pooled.push(g.global_avg_pool(*band)?);
            }
            levels.push(LevelOutput { input: current, bands });
            current = bands.ll;
        }
        pooled.push(g.global_avg_pool(current)?);
        let features = g.concat(&pooled, 1)?;
        let w = g.param(store, self.classifier.0);
        let b = g.param(store, self.classifier.1);
        let logits = g.dense(features, w, b)?;
        let log_probs = g.log_softmax(logits)?;
        Ok(ForwardOutput {
            log_probs,
            stack_input,
            levels,
        })
    }
}

/// Lifting-stack input and the sub-bands of every level.
pub type Decomposed = (Tensor<f32>, Vec<SubBands<Tensor<f32>>>);

/// Architecture plus its `f32` parameters.
#[derive(Clone, Debug)]
pub struct DawnModel {
    pub net: Dawn,
    pub params: ParamStore<f32>,
}

impl DawnModel {
    /// Deterministic construction: He-uniform weights, zero biases, unit
    /// batch-norm scale, all drawn from a ChaCha8 stream seeded with `seed`.
    pub fn build(config: &DawnConfig, seed: u64) -> Result<Self> {
        let num_levels = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut initial = Vec::new();
        if config.init_channels > 0 {
            initial.push(ConvBnRelu::new(&mut store, "initial.block1", config.input_channels, config.init_channels, &mut rng)?);
            initial.push(ConvBnRelu::new(&mut store, "initial.block2", config.init_channels, config.init_channels, &mut rng)?);
        }
        let c = config.lifting_channels();
        let levels = (0..num_levels)
            .map(|t| Lifting2D::new(&mut store, &format!("level{t}"), c, config.kernel_size, config.hidden_layers, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let width = config.head_width()?;
        let classifier = (
            store.add_param("classifier.weight", he_uniform(&mut rng, &[config.num_classes, width], width))?,
            store.add_param("classifier.bias", Tensor::zeros([config.num_classes]))?,
        );
        Ok(DawnModel {
            net: Dawn {
                config: config.clone(),
                initial,
                levels,
                classifier,
            },
            params: store,
        })
    }

    pub fn config(&self) -> &DawnConfig {
        &self.net.config
    }

    pub fn num_levels(&self) -> usize {
        self.net.levels.len()
    }

    /// Class log-probabilities for a batch.
    pub fn predict(&mut self, batch: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone())?;
        let out = self.net.forward(&mut g, &mut self.params, x, mode)?;
        Ok(g.value(out.log_probs).clone())
    }

    /// Sub-bands of every level for a batch (eval mode).
    pub fn decompose(&mut self, batch: &Tensor<f32>) -> Result<Decomposed> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone())?;
        let out = self.net.forward(&mut g, &mut self.params, x, Mode::Eval)?;
        let bands = out.levels.iter().map(|l| l.bands.map(|&v| g.value(v).clone())).collect();
        Ok((g.value(out.stack_input).clone(), bands))
    }

    /// Invert the lifting stack from the deepest LL and all detail bands.
    pub fn reconstruct(&self, bands: &[SubBands<Tensor<f32>>]) -> Result<Tensor<f32>> {
        let last = bands
            .last()
            .ok_or_else(|| Error::shape("reconstruct", "no levels to invert"))?;
        let mut ll = last.ll.clone();
        for (level, b) in self.net.levels[..bands.len()].iter().zip(bands).rev() {
            let sb = SubBands {
                ll: ll.clone(),
                lh: b.lh.clone(),
                hl: b.hl.clone(),
                hh: b.hh.clone(),
            };
            ll = level.inverse_tensor(&self.params, &sb)?;
        }
        Ok(ll)
    }

    /// One line per parameter: `name  shape  count`, in registration order.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for p in self.params.params() {
            let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{}\t[{}]\t{}\n", p.name, shape.join(", "), p.value.len()));
        }
        out
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    /// Build the architecture for `config` and fill it from a checkpoint file.
    pub fn load_checkpoint(path: impl AsRef<Path>, config: &DawnConfig) -> Result<Self> {
        let entries = checkpoint::load(path)?;
        let mut model = DawnModel::build(config, 0)?;
        checkpoint::restore(&mut model.params, &entries)?;
        Ok(model)
    }

    pub fn param_breakdown(&self) -> Result<ParamBreakdown> {
        param_count(&self.net.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_formula() {
        let expect = [(8, 1), (16, 2), (32, 3), (64, 4), (128, 5), (224, 5), (256, 6)];
        for (size, levels) in expect {
            assert_eq!(compute_levels(size).unwrap(), levels, "size {size}");
        }
        assert!(compute_levels(7).is_err());
        assert_eq!(compute_levels(15).unwrap(), 1);
    }

    #[test]
    fn levels_parse_and_serialize() {
        assert_eq!("auto".parse::<Levels>().unwrap(), Levels::Auto);
        assert_eq!("2".parse::<Levels>().unwrap(), Levels::Fixed(2));
        assert!("two".parse::<Levels>().is_err());
        let cfg = DawnConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("levels = \"auto\""));
        let back: DawnConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let fixed: DawnConfig = toml::from_str("levels = 2").unwrap();
        assert_eq!(fixed.levels, Levels::Fixed(2));
    }

    #[test]
    fn config_validation() {
        let mut c = DawnConfig {
            levels: Levels::Fixed(4),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.levels = Levels::Fixed(3);
        assert_eq!(c.validate().unwrap(), 3);
        c.input_size = 24; // auto 2 levels; 24 / 8 is fine but 3 levels > max
        assert!(c.validate().is_err());
        c.levels = Levels::Auto;
        assert_eq!(c.validate().unwrap(), 2);
        c.kernel_size = 13;
        assert!(c.validate().is_err());
        c.kernel_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn build_cifar_like() {
        let cfg = DawnConfig {
            input_channels: 3,
            input_size: 32,
            init_channels: 16,
            levels: Levels::Auto,
            kernel_size: 3,
            hidden_layers: 1,
            num_classes: 10,
        };
        let model = DawnModel::build(&cfg, 1).unwrap();
        assert_eq!(model.num_levels(), 3);
        assert_eq!(cfg.head_width().unwrap(), 160);
        let w = model.params.find_param("classifier.weight").unwrap();
        assert_eq!(model.params.param(w).value.shape(), &[10, 160]);
        assert!(model.params.find_param("level0.horizontal.predictor.conv1.weight").is_some());
        assert!(model.params.find_param("level2.vertical_high.updater.conv_out.bias").is_some());
    }

    #[test]
    fn no_initial_block() {
        let cfg = DawnConfig {
            init_channels: 0,
            ..Default::default()
        };
        assert_eq!(cfg.head_width().unwrap(), 3 * 3 * 3 + 3);
        let model = DawnModel::build(&cfg, 0).unwrap();
        assert_eq!(model.param_breakdown().unwrap().initial, 0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = DawnConfig::default();
        let a = DawnModel::build(&cfg, 42).unwrap();
        let b = DawnModel::build(&cfg, 42).unwrap();
        let c = DawnModel::build(&cfg, 43).unwrap();
        let bits = |m: &DawnModel| -> Vec<u32> {
            m.params.params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn closed_form_count_matches_built_model() {
        for (k, h, l, init) in [(3, 1, 3, 4), (1, 2, 2, 0), (4, 3, 1, 2), (2, 1, 0, 3)] {
            let cfg = DawnConfig {
                input_size: 16,
                init_channels: init,
                levels: Levels::Fixed(l.min(2)),
                kernel_size: k,
                hidden_layers: h,
                num_classes: 5,
                ..Default::default()
            };
            let model = DawnModel::build(&cfg, 0).unwrap();
            assert_eq!(model.params.num_scalars(), param_count(&cfg).unwrap().total(), "{cfg:?}");
        }
    }

    #[test]
    fn reference_l0_is_exact() {
        let (cfg, published) = reference_configs().into_iter().find(|(c, _)| c.levels == Levels::Fixed(0)).unwrap();
        let b = param_count(&cfg).unwrap();
        assert_eq!(b.initial, 1_728 + 128 + 36_864 + 128);
        assert_eq!(b.classifier, 64 * 100 + 100);
        assert_eq!(b.total(), published);
        assert_eq!(reference_count(&cfg), Some(45_348));
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let cfg = DawnConfig::default();
        let mut model = DawnModel::build(&cfg, 3).unwrap();
        let x = Tensor::<f32>::from_f64([2, 3, 32, 32], &(0..6144).map(|v| ((v * 31) % 97) as f64 / 97.0).collect::<Vec<_>>()).unwrap();
        let lp = model.predict(&x, Mode::Train).unwrap();
        assert_eq!(lp.shape(), &[2, 10]);
        for row in lp.data().chunks(10) {
            let s: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let (_, bands) = model.decompose(&x).unwrap();
        for (t, b) in bands.iter().enumerate() {
            let side = 32 >> (t + 1);
            assert_eq!(b.hh.shape(), &[2, 16, side, side]);
        }
        assert!(model.predict(&Tensor::zeros([1, 3, 16, 16]), Mode::Eval).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut model = DawnModel::build(&DawnConfig::default(), 9).unwrap();
        let x = Tensor::<f32>::full([1, 3, 32, 32], 0.3);
        let a = model.predict(&x, Mode::Eval).unwrap();
        let b = model.predict(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn describe_lists_every_parameter() {
        let model = DawnModel::build(&DawnConfig::default(), 0).unwrap();
        let text = model.describe();
        assert_eq!(text.lines().count(), model.params.params().len());
        assert!(text.starts_with("initial.block1.conv.weight\t[16, 3, 3, 3]\t432\n"));
    }
}
