//! Trainable lifting steps and the 2D adaptive lifting scheme.
//!
//! A lifting step splits its input into even and odd polyphase components
//! along one direction and computes
//!
//! ```text
//! c = x_even + U(x_odd)      (approximation)
//! d = x_odd  - P(c)          (detail)
//! ```
//!
//! where the updater `U` and predictor `P` are small convolutional networks.
//! Whatever `U` and `P` compute, the step is undone exactly by
//! `x_odd = d + P(c)`, `x_even = c - U(x_odd)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::init::he_uniform;
use crate::tensor::{Direction, Graph, Pad2d, ParamId, ParamStore, Scalar, Tensor, Var};

/// A convolution with bias, stride 1.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: (usize, usize),
}

impl ConvLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let shape = [out_ch, in_ch, kernel.0, kernel.1];
        let weight = store.add_param(format!("{name}.weight"), he_uniform(rng, &shape, in_ch * kernel.0 * kernel.1))?;
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros([out_ch]))?;
        Ok(ConvLayer { weight, bias, kernel })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), (1, 1))
    }
}

/// Predictor or updater network acting along one direction.
///
/// Structure for `h` hidden convolutions and kernel size `k` on `C` channels:
///
/// ```text
/// (h - 1) x [reflect pad -> conv k-tap, C -> C  -> relu]
///           [reflect pad -> conv k-tap, C -> 2C -> relu]
///            conv 1x1, 2C -> C -> tanh
/// ```
///
/// With `h = 1` this is a single directional convolution doubling the depth
/// followed by the 1x1 output convolution. `linear_mode` replaces relu and
/// tanh with the identity.
#[derive(Clone, Debug)]
pub struct PredictorUpdater {
    pub direction: Direction,
    pub channels: usize,
    pub kernel_size: usize,
    pub hidden_layers: usize,
    /// Directional convolutions in application order; the last doubles the depth.
    pub hidden: Vec<ConvLayer>,
    pub conv_out: ConvLayer,
    pub linear_mode: bool,
}

fn directional_kernel(dir: Direction, k: usize) -> (usize, usize) {
    match dir {
        Direction::Horizontal => (1, k),
        Direction::Vertical => (k, 1),
    }
}

impl PredictorUpdater {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        direction: Direction,
        channels: usize,
        kernel_size: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || kernel_size == 0 || hidden_layers == 0 {
            return Err(Error::Config(format!(
                "{name}: channels, kernel size and hidden layers must be positive"
            )));
        }
        let kernel = directional_kernel(direction, kernel_size);
        let mut hidden = Vec::with_capacity(hidden_layers);
        for i in 1..hidden_layers {
            hidden.push(ConvLayer::new(store, &format!("{name}.conv{i}"), channels, channels, kernel, rng)?);
        }
        hidden.push(ConvLayer::new(
            store,
            &format!("{name}.conv{hidden_layers}"),
            channels,
            2 * channels,
            kernel,
            rng,
        )?);
        let conv_out = ConvLayer::new(store, &format!("{name}.conv_out"), 2 * channels, channels, (1, 1), rng)?;
        Ok(PredictorUpdater {
            direction,
            channels,
            kernel_size,
            hidden_layers,
            hidden,
            conv_out,
            linear_mode: false,
        })
    }

    /// Trainable scalars in one network, without building it.
    pub fn param_count(channels: usize, kernel_size: usize, hidden_layers: usize) -> usize {
        let c = channels;
        let repeated = (hidden_layers - 1) * (c * c * kernel_size + c);
        let expand = 2 * c * c * kernel_size + 2 * c;
        let out = c * 2 * c + c;
        repeated + expand + out
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "predictor/updater",
                format!("expected {} channels, got shape {shape:?}", self.channels),
            ));
        }
        let pad = Pad2d::for_kernel(self.direction, self.kernel_size);
        let mut h = x;
        for layer in &self.hidden {
            let padded = g.reflect_pad(h, pad)?;
            h = layer.apply(g, store, padded)?;
            if !self.linear_mode {
                h = g.relu(h)?;
            }
        }
        let out = self.conv_out.apply(g, store, h)?;
        if self.linear_mode {
            Ok(out)
        } else {
            g.tanh(out)
        }
    }

    fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.hidden.iter().chain(std::iter::once(&self.conv_out))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Set every weight and bias to zero: the network outputs zeros.
    pub fn fill_zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for id in self.param_ids() {
            store.param_mut(id).value.fill(T::zero());
        }
    }

    /// Weights that make the linear-mode network copy its input unchanged
    /// (each channel routed through the centre tap of every convolution).
    pub fn fill_identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.fill_zero(store);
        let centre = (self.kernel_size - 1) / 2;
        let c = self.channels;
        for layer in self.layers() {
            let w = &mut store.param_mut(layer.weight).value;
            let [_, in_ch, kh, kw] = w.dims4("fill_identity").expect("rank-4 weight");
            let (ci, cj) = if layer.kernel == (1, 1) {
                (0, 0)
            } else {
                match self.direction {
                    Direction::Horizontal => (0, centre),
                    Direction::Vertical => (centre, 0),
                }
            };
            for ch in 0..c {
                w.data_mut()[((ch * in_ch + ch) * kh + ci) * kw + cj] = T::one();
            }
        }
    }
}

/// One directional lifting step: update then predict.
#[derive(Clone, Debug)]
pub struct LiftingStep {
    pub direction: Direction,
    pub updater: PredictorUpdater,
    pub predictor: PredictorUpdater,
}

/// Per-step diagnostic losses (reported, not trained on).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticLosses {
    /// `sum (P(c) - x_odd)^2`, equal to the squared norm of the details.
    pub predictor: f64,
    /// `sum (U(x_odd) - (x_odd - x_even))^2`.
    pub updater: f64,
}

impl LiftingStep {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        direction: Direction,
        channels: usize,
        kernel_size: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let updater = PredictorUpdater::new(
            store,
            &format!("{name}.updater"),
            direction,
            channels,
            kernel_size,
            hidden_layers,
            rng,
        )?;
        let predictor = PredictorUpdater::new(
            store,
            &format!("{name}.predictor"),
            direction,
            channels,
            kernel_size,
            hidden_layers,
            rng,
        )?;
        Ok(LiftingStep {
            direction,
            updater,
            predictor,
        })
    }

    pub fn set_linear_mode(&mut self, on: bool) {
        self.updater.linear_mode = on;
        self.predictor.linear_mode = on;
    }

    /// Returns `(approximation, detail)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let even = g.polyphase(x, self.direction, 0)?;
        let odd = g.polyphase(x, self.direction, 1)?;
        let u = self.updater.apply(g, store, odd)?;
        let c = g.add(even, u)?;
        let p = self.predictor.apply(g, store, c)?;
        let d = g.sub(odd, p)?;
        Ok((c, d))
    }

    pub fn inverse<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, c: Var, d: Var) -> Result<Var> {
        if g.shape(c) != g.shape(d) {
            return Err(Error::shape(
                "lifting_step_inverse",
                format!("{:?} vs {:?}", g.shape(c), g.shape(d)),
            ));
        }
        let p = self.predictor.apply(g, store, c)?;
        let odd = g.add(d, p)?;
        let u = self.updater.apply(g, store, odd)?;
        let even = g.sub(c, u)?;
        g.interleave(even, odd, self.direction)
    }

    pub fn forward_tensor<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let (c, d) = self.forward(&mut g, store, xv)?;
        Ok((g.value(c).clone(), g.value(d).clone()))
    }

    pub fn inverse_tensor<T: Scalar>(&self, store: &ParamStore<T>, c: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let cv = g.constant(c.clone())?;
        let dv = g.constant(d.clone())?;
        let x = self.inverse(&mut g, store, cv, dv)?;
        Ok(g.value(x).clone())
    }

    pub fn diagnostic_losses<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<DiagnosticLosses> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let even = g.polyphase(xv, self.direction, 0)?;
        let odd = g.polyphase(xv, self.direction, 1)?;
        let u = self.updater.apply(&mut g, store, odd)?;
        let c = g.add(even, u)?;
        let p = self.predictor.apply(&mut g, store, c)?;
        let sq_dist = |g: &Graph<T>, a: Var, b: Var| -> f64 {
            g.value(a)
                .data()
                .iter()
                .zip(g.value(b).data())
                .map(|(&p, &q)| {
                    let d = (p - q).to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum()
        };
        let predictor = sq_dist(&g, p, odd);
        let gap = g.sub(odd, even)?;
        let updater = sq_dist(&g, u, gap);
        Ok(DiagnosticLosses { predictor, updater })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.updater.param_ids();
        ids.extend(self.predictor.param_ids());
        ids
    }
}

/// The four sub-bands of one 2D decomposition level.
#[derive(Clone, Copy, Debug)]
pub struct SubBands<V> {
    pub ll: V,
    pub lh: V,
    pub hl: V,
    pub hh: V,
}

impl<V> SubBands<V> {
    pub fn details(&self) -> [&V; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> SubBands<U> {
        SubBands {
            ll: f(&self.ll),
            lh: f(&self.lh),
            hl: f(&self.hl),
            hh: f(&self.hh),
        }
    }
}

/// One level: a horizontal step, then independent vertical steps on the
/// low and high horizontal outputs.
#[derive(Clone, Debug)]
pub struct Lifting2D {
    pub horizontal: LiftingStep,
    pub vertical_low: LiftingStep,
    pub vertical_high: LiftingStep,
}

impl Lifting2D {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        channels: usize,
        kernel_size: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut step = |suffix: &str, dir| {
            LiftingStep::new(store, &format!("{name}.{suffix}"), dir, channels, kernel_size, hidden_layers, rng)
        };
        Ok(Lifting2D {
            horizontal: step("horizontal", Direction::Horizontal)?,
            vertical_low: step("vertical_low", Direction::Vertical)?,
            vertical_high: step("vertical_high", Direction::Vertical)?,
        })
    }

    pub fn param_count(channels: usize, kernel_size: usize, hidden_layers: usize) -> usize {
        6 * PredictorUpdater::param_count(channels, kernel_size, hidden_layers)
    }

    pub fn steps(&self) -> [&LiftingStep; 3] {
        [&self.horizontal, &self.vertical_low, &self.vertical_high]
    }

    pub fn set_linear_mode(&mut self, on: bool) {
        self.horizontal.set_linear_mode(on);
        self.vertical_low.set_linear_mode(on);
        self.vertical_high.set_linear_mode(on);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<SubBands<Var>> {
        let (low, high) = self.horizontal.forward(g, store, x)?;
        let (ll, lh) = self.vertical_low.forward(g, store, low)?;
        let (hl, hh) = self.vertical_high.forward(g, store, high)?;
        Ok(SubBands { ll, lh, hl, hh })
    }

    pub fn inverse<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, bands: SubBands<Var>) -> Result<Var> {
        let shape = g.shape(bands.ll).to_vec();
        for v in bands.details() {
            if g.shape(*v) != shape.as_slice() {
                return Err(Error::shape(
                    "lifting2d_inverse",
                    format!("sub-band shapes {shape:?} and {:?}", g.shape(*v)),
                ));
            }
        }
        let low = self.vertical_low.inverse(g, store, bands.ll, bands.lh)?;
        let high = self.vertical_high.inverse(g, store, bands.hl, bands.hh)?;
        self.horizontal.inverse(g, store, low, high)
    }

    pub fn forward_tensor<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<SubBands<Tensor<T>>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone())?;
        let bands = self.forward(&mut g, store, xv)?;
        Ok(bands.map(|&v| g.value(v).clone()))
    }

    pub fn inverse_tensor<T: Scalar>(&self, store: &ParamStore<T>, bands: &SubBands<Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = SubBands {
            ll: g.constant(bands.ll.clone())?,
            lh: g.constant(bands.lh.clone())?,
            hl: g.constant(bands.hl.clone())?,
            hh: g.constant(bands.hh.clone())?,
        };
        let x = self.inverse(&mut g, store, vars)?;
        Ok(g.value(x).clone())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.steps().iter().flat_map(|s| s.param_ids()).collect()
    }
}
