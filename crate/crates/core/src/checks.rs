//! Self-checks shared by the `gradcheck` command and the test suites:
//! per-operation gradient checks, perfect reconstruction and a full-model
//! gradient check of the composite loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lifting::{Lifting2D, LiftingStep};
use crate::model::{DawnConfig, DawnModel, Levels, Mode};
use crate::tensor::gradcheck::{check_graph_fn, grad_check, GradCheckConfig, GradCheckReport};
use crate::tensor::{Direction, Graph, Pad2d, ParamStore, Tensor, Var};
use crate::training::{composite_loss, TrainConfig};

/// Differentiable operations covered by [`check_op`].
pub const CHECKED_OPS: [&str; 20] = [
    "conv2d",
    "conv2d_strided",
    "reflect_pad",
    "avg_pool",
    "batch_norm",
    "relu",
    "tanh",
    "global_avg_pool",
    "dense",
    "log_softmax",
    "concat",
    "polyphase",
    "interleave",
    "huber_sum",
    "cross_entropy",
    "mean",
    "square",
    "add_sub_scale",
    "lifting_step",
    "lifting_2d",
];

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("consistent length")
}

/// Weighted sum with fixed random coefficients, so every output element
/// receives a distinct upstream gradient.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(uniform(&mut rng, &shape, -1.0, 1.0))?;
    let sq = g.square(w)?;
    let prod_like = g.add(v, sq)?;
    let s = g.square(prod_like)?;
    g.sum(s)
}

/// Gradient check of one operation on random shapes drawn from `seed`.
pub fn check_op(op: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=3);
    let h = 2 * rng.gen_range(2..=4);
    let w = 2 * rng.gen_range(2..=4);
    let dir = if rng.gen_bool(0.5) { Direction::Horizontal } else { Direction::Vertical };
    let x = |rng: &mut ChaCha8Rng| uniform(rng, &[b, c, h, w], -1.0, 1.0);
    match op {
        "conv2d" | "conv2d_strided" => {
            let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let o = rng.gen_range(1..=3);
            let stride = if op == "conv2d" { (1, 1) } else { (rng.gen_range(1..=2), rng.gen_range(1..=2)) };
            let mut inputs = vec![x(&mut rng), uniform(&mut rng, &[o, c, kh, kw], -1.0, 1.0), uniform(&mut rng, &[o], -1.0, 1.0)];
            check_graph_fn(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "reflect_pad" => {
            let pad = Pad2d::new(rng.gen_range(0..h / 2), rng.gen_range(0..h / 2), rng.gen_range(0..w / 2), rng.gen_range(0..w / 2));
            let mut inputs = vec![x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let y = g.reflect_pad(v[0], pad)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "avg_pool" => {
            let mut inputs = vec![x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let y = g.avg_pool(v[0], 2)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "batch_norm" => {
            let mut store = ParamStore::<f64>::new();
            let rm = store.add_buffer("rm", Tensor::zeros([c]))?;
            let rv = store.add_buffer("rv", Tensor::full([c], 1.0))?;
            let mut inputs = vec![x(&mut rng), uniform(&mut rng, &[c], 0.5, 1.5), uniform(&mut rng, &[c], -0.5, 0.5)];
            let store = std::cell::RefCell::new(store);
            check_graph_fn(
                |g, v| {
                    let y = g.batch_norm(v[0], v[1], v[2], &mut store.borrow_mut(), (rm, rv), true)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "relu" | "tanh" | "square" | "mean" => {
            // keep values away from the relu kink
            let mut t = x(&mut rng);
            t.data_mut().iter_mut().for_each(|v| {
                if v.abs() < 0.05 {
                    *v += 0.1
                }
            });
            let mut inputs = vec![t];
            let op = op.to_string();
            check_graph_fn(
                |g, v| {
                    let y = match op.as_str() {
                        "relu" => g.relu(v[0])?,
                        "tanh" => g.tanh(v[0])?,
                        "square" => g.square(v[0])?,
                        _ => g.mean(v[0])?,
                    };
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "global_avg_pool" => {
            let mut inputs = vec![x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let y = g.global_avg_pool(v[0])?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "dense" => {
            let (i, o) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
            let mut inputs = vec![
                uniform(&mut rng, &[b, i], -1.0, 1.0),
                uniform(&mut rng, &[o, i], -1.0, 1.0),
                uniform(&mut rng, &[o], -1.0, 1.0),
            ];
            check_graph_fn(
                |g, v| {
                    let y = g.dense(v[0], v[1], v[2])?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "log_softmax" | "cross_entropy" => {
            let p = rng.gen_range(2..=6);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..p)).collect();
            let mut inputs = vec![uniform(&mut rng, &[b, p], -2.0, 2.0)];
            let ce = op == "cross_entropy";
            check_graph_fn(
                |g, v| {
                    let y = g.log_softmax(v[0])?;
                    if ce {
                        g.nll(y, &labels)
                    } else {
                        project(g, y, seed)
                    }
                },
                &mut inputs,
                cfg,
            )
        }
        "concat" => {
            let axis = rng.gen_range(0..4);
            let mut other = vec![b, c, h, w];
            other[axis] = rng.gen_range(1..=3);
            let mut inputs = vec![x(&mut rng), uniform(&mut rng, &other, -1.0, 1.0)];
            check_graph_fn(
                |g, v| {
                    let y = g.concat(&[v[0], v[1]], axis)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "polyphase" => {
            let parity = rng.gen_range(0..2);
            let mut inputs = vec![x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let y = g.polyphase(v[0], dir, parity)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "interleave" => {
            let mut inputs = vec![x(&mut rng), x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let y = g.interleave(v[0], v[1], dir)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "huber_sum" => {
            let delta = rng.gen_range(0.3..1.5);
            let mut t = uniform(&mut rng, &[b, c, h, w], -3.0, 3.0);
            t.data_mut().iter_mut().for_each(|v| {
                if (v.abs() - delta).abs() < 0.01 {
                    *v += 0.05
                }
            });
            let mut inputs = vec![t];
            check_graph_fn(|g, v| g.huber_sum(v[0], delta), &mut inputs, cfg)
        }
        "add_sub_scale" => {
            let k = rng.gen_range(-2.0..2.0);
            let mut inputs = vec![x(&mut rng), x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let s = g.add(v[0], v[1])?;
                    let d = g.sub(s, v[1])?;
                    let d = g.sub(d, v[1])?;
                    let y = g.scale(d, k)?;
                    project(g, y, seed)
                },
                &mut inputs,
                cfg,
            )
        }
        "lifting_step" | "lifting_2d" => {
            let k = rng.gen_range(1..=3);
            let hidden = rng.gen_range(1..=2);
            let mut store32 = ParamStore::<f32>::new();
            let two_d = op == "lifting_2d";
            let step = if two_d {
                None
            } else {
                Some(LiftingStep::new(&mut store32, "s", dir, c, k, hidden, &mut rng)?)
            };
            let level = if two_d { Some(Lifting2D::new(&mut store32, "l", c, k, hidden, &mut rng)?) } else { None };
            randomize_biases(&mut store32, &mut rng);
            let store = store32.cast::<f64>();
            let mut inputs = vec![x(&mut rng)];
            check_graph_fn(
                |g, v| {
                    let outs: Vec<Var> = match (&step, &level) {
                        (Some(s), _) => {
                            let (a, d) = s.forward(g, &store, v[0])?;
                            vec![a, d]
                        }
                        (_, Some(l)) => {
                            let bands = l.forward(g, &store, v[0])?;
                            vec![bands.ll, bands.lh, bands.hl, bands.hh]
                        }
                        _ => unreachable!(),
                    };
                    let mut total = project(g, outs[0], seed)?;
                    for (i, &o) in outs.iter().enumerate().skip(1) {
                        let p = project(g, o, seed + i as u64)?;
                        total = g.add(total, p)?;
                    }
                    Ok(total)
                },
                &mut inputs,
                cfg,
            )
        }
        other => Err(crate::Error::Config(format!("no gradient check for `{other}`"))),
    }
}

/// Give every bias a random value (fresh models start with zero biases).
pub fn randomize_biases<R: Rng + ?Sized>(store: &mut ParamStore<f32>, rng: &mut R) {
    for p in store.params_mut() {
        if p.name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
}

/// Worst reconstruction errors over random inputs and random nonlinear
/// lifting parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconstructionReport {
    pub trials: usize,
    pub step: f32,
    pub level: f32,
    pub stack: f32,
}

impl ReconstructionReport {
    pub fn max(&self) -> f32 {
        self.step.max(self.level).max(self.stack)
    }
}

/// `inverse(forward(x))` against `x` for a single step, one 2D level and a
/// three-level stack, each trial with fresh parameters and inputs.
pub fn reconstruction_check(trials: usize, seed: u64) -> Result<ReconstructionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ReconstructionReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let c = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let hidden = rng.gen_range(1..=2);
        let scale = rng.gen_range(0.1f32..10.0);
        let input = |rng: &mut ChaCha8Rng, shape: [usize; 4]| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("consistent length")
        };
        let mut store = ParamStore::new();
        let dir = if rng.gen_bool(0.5) { Direction::Horizontal } else { Direction::Vertical };
        let step = LiftingStep::new(&mut store, "step", dir, c, k, hidden, &mut rng)?;
        let level = Lifting2D::new(&mut store, "level", c, k, hidden, &mut rng)?;
        let stack = (0..3)
            .map(|t| Lifting2D::new(&mut store, &format!("stack{t}"), c, k, hidden, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        randomize_biases(&mut store, &mut rng);

        let x = input(&mut rng, [2, c, 8, 8]);
        let (a, d) = step.forward_tensor(&store, &x)?;
        report.step = report.step.max(step.inverse_tensor(&store, &a, &d)?.max_abs_diff(&x));

        let x = input(&mut rng, [2, c, 8, 8]);
        let bands = level.forward_tensor(&store, &x)?;
        report.level = report.level.max(level.inverse_tensor(&store, &bands)?.max_abs_diff(&x));

        let x = input(&mut rng, [1, c, 32, 32]);
        let mut all = Vec::new();
        let mut cur = x.clone();
        for l in &stack {
            let b = l.forward_tensor(&store, &cur)?;
            cur = b.ll.clone();
            all.push(b);
        }
        let mut ll = cur;
        for (l, b) in stack.iter().zip(&all).rev() {
            ll = l.inverse_tensor(
                &store,
                &crate::lifting::SubBands {
                    ll,
                    lh: b.lh.clone(),
                    hl: b.hl.clone(),
                    hh: b.hh.clone(),
                },
            )?;
        }
        report.stack = report.stack.max(ll.max_abs_diff(&x));
    }
    Ok(report)
}

/// Toy model used by [`model_gradcheck`]: 16x16 RGB input, 4 initial
/// channels, 2 levels.
pub fn toy_config() -> DawnConfig {
    DawnConfig {
        input_channels: 3,
        input_size: 16,
        init_channels: 4,
        levels: Levels::Fixed(2),
        kernel_size: 3,
        hidden_layers: 1,
        num_classes: 3,
    }
}

/// Composite-loss gradient of every parameter of a toy model on a random
/// `[2, 3, 16, 16]` batch, in 64-bit precision, against central differences
/// on `cfg.samples` coordinates.
pub fn model_gradcheck(train: &TrainConfig, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let config = toy_config();
    let mut model = DawnModel::build(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize_biases(&mut model.params, &mut rng);
    let x: Tensor<f64> = uniform(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let labels = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
    let net = model.net.clone();
    let mut store = model.params.cast::<f64>();
    let mut params: Vec<Tensor<f64>> = store.params().iter().map(|p| p.value.clone()).collect();
    grad_check(
        |values| {
            for (p, v) in store.params_mut().iter_mut().zip(values) {
                p.value = v.clone();
            }
            store.zero_grad();
            let mut g = Graph::new();
            let xv = g.constant(x.clone())?;
            let out = net.forward(&mut g, &mut store, xv, Mode::Train)?;
            let (loss, _) = composite_loss(&mut g, &out, &labels, train)?;
            g.backward(loss)?;
            g.accumulate_param_grads(&mut store);
            let grads = store.params().iter().map(|p| p.grad.clone()).collect();
            Ok((g.value(loss).item(), grads))
        },
        &mut params,
        cfg,
    )
}
