//! Finite-difference verification of analytic gradients, in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Number of coordinates to probe; `None` probes all of them.
    pub samples: Option<usize>,
    /// Denominator floor so that near-zero gradient pairs compare absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-3,
            samples: None,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the analytic gradient returned by `f` with central differences.
///
/// `f` maps parameter values to `(loss, d loss / d params)`. Only the loss is
/// used at perturbed points.
pub fn grad_check<F>(mut f: F, params: &mut [Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    if analytic.len() != params.len()
        || analytic.iter().zip(params.iter()).any(|(g, p)| g.shape() != p.shape())
    {
        return Err(Error::shape("grad_check", "gradient layout does not match parameters"));
    }

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = match cfg.samples {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = rand::seq::index::sample(&mut rng, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for (t, i) in chosen {
        let orig = params[t].data()[i];
        params[t].data_mut()[i] = orig + cfg.epsilon;
        let plus = f(params)?.0;
        params[t].data_mut()[i] = orig - cfg.epsilon;
        let minus = f(params)?.0;
        params[t].data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let a = analytic[t].data()[i];
        let rel = relative_error(a, numeric, cfg.abs_floor);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(Probe {
                tensor: t,
                index: i,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

/// [`grad_check`] for a function expressed as graph operations on `inputs`.
pub fn check_graph_fn<B>(build: B, inputs: &mut [Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check(
        |params| {
            let mut g = Graph::new();
            let vars = params
                .iter()
                .map(|p| g.variable(p.clone()))
                .collect::<Result<Vec<_>>>()?;
            let out = build(&mut g, &vars)?;
            g.backward(out)?;
            let grads = vars
                .iter()
                .zip(params)
                .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            Ok((g.value(out).item(), grads))
        },
        inputs,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut p = vec![Tensor::from_f64([4], &[0.3, -1.2, 2.5, 0.01]).unwrap()];
        let cfg = GradCheckConfig {
            epsilon: 1e-4,
            ..Default::default()
        };
        let report = grad_check(
            |ps| {
                let t = &ps[0];
                Ok((t.data().iter().map(|v| v * v).sum(), vec![t.map(|v| 2.0 * v)]))
            },
            &mut p,
            &cfg,
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut p = vec![Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap()];
        let report = grad_check(|ps| Ok((4.0, vec![Tensor::zeros(ps[0].shape())])), &mut p, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.worst.as_ref().unwrap().numeric, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut p = vec![Tensor::from_f64([2], &[1.0, 2.0]).unwrap()];
        let report = grad_check(
            |ps| Ok((ps[0].data().iter().map(|v| v * v).sum(), vec![ps[0].clone()])),
            &mut p,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert!((report.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_probe_errors() {
        let mut p = vec![Tensor::from_f64([1], &[0.0]).unwrap()];
        let r = grad_check(
            |ps| {
                let v = ps[0].item();
                Ok((if v > 0.0 { f64::INFINITY } else { 0.0 }, vec![Tensor::zeros([1])]))
            },
            &mut p,
            &GradCheckConfig::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sampling_limits_probe_count() {
        let mut p = vec![Tensor::zeros([50]), Tensor::zeros([50])];
        let cfg = GradCheckConfig {
            samples: Some(7),
            ..Default::default()
        };
        let report = check_graph_fn(
            |g, v| {
                let s = g.square(v[0])?;
                g.sum(s)
            },
            &mut p,
            &cfg,
        )
        .unwrap();
        assert_eq!(report.checked, 7);
    }
}
