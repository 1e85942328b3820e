use dawn::checks::{randomize_biases, reconstruction_check};
use dawn::lifting::{Lifting2D, LiftingStep};
use dawn::tensor::{Direction, ParamStore};
use dawn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn hundred_random_trials() {
    let r = reconstruction_check(100, 17).unwrap();
    assert_eq!(r.trials, 100);
    assert!(r.step < 1e-5 && r.level < 1e-5 && r.stack < 1e-5, "{r:?}");
}

/// Reflection index for a padded position `i - before` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// 1D lifting with scalar filters, computed sample by sample.
fn oracle_step(x: &[f64], u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let half = x.len() / 2;
    let even: Vec<f64> = (0..half).map(|i| x[2 * i]).collect();
    let odd: Vec<f64> = (0..half).map(|i| x[2 * i + 1]).collect();
    let filter = |sig: &[f64], taps: &[f64]| -> Vec<f64> {
        let before = ((taps.len() - 1) / 2) as isize;
        (0..sig.len())
            .map(|n| {
                taps.iter()
                    .enumerate()
                    .map(|(j, t)| t * sig[reflect(n as isize + j as isize - before, sig.len())])
                    .sum()
            })
            .collect()
    };
    let c: Vec<f64> = even.iter().zip(filter(&odd, u)).map(|(e, v)| e + v).collect();
    let d: Vec<f64> = odd.iter().zip(filter(&c, p)).map(|(o, v)| o - v).collect();
    (c, d)
}

/// In linear mode a single-channel step with taps routed through the
/// expansion channel equals a classical two-filter lifting ladder.
#[test]
fn linear_step_matches_filter_bank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for dir in [Direction::Horizontal, Direction::Vertical] {
        let mut store = ParamStore::new();
        let mut step = LiftingStep::new(&mut store, "s", dir, 1, 3, 1, &mut rng).unwrap();
        step.set_linear_mode(true);
        let u = [0.25, 0.5, -0.125];
        let p = [-0.5, 1.0, 0.75];
        for (net, taps) in [(&step.updater, u), (&step.predictor, p)] {
            net.fill_zero(&mut store);
            // hidden conv writes the filter into channel 0, output conv reads it back
            let hidden = &net.hidden[0];
            store.param_mut(hidden.weight).value.data_mut()[..3].copy_from_slice(&taps.map(|v| v as f32));
            store.param_mut(net.conv_out.weight).value.data_mut()[0] = 1.0;
        }
        let signal: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64) * 0.3 - 1.0).collect();
        let shape = match dir {
            Direction::Horizontal => [1, 1, 1, 16],
            Direction::Vertical => [1, 1, 16, 1],
        };
        let x = Tensor::new(shape, signal.iter().map(|&v| v as f32).collect()).unwrap();
        let (c, d) = step.forward_tensor(&store, &x).unwrap();
        let (ec, ed) = oracle_step(&signal, &u, &p);
        for (a, b) in c.data().iter().zip(&ec).chain(d.data().iter().zip(&ed)) {
            assert!((*a as f64 - b).abs() < 1e-5, "{dir:?}: {a} vs {b}");
        }
        let back = step.inverse_tensor(&store, &c, &d).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn level_inverts_any_even_shape(
        b in 1usize..3,
        c in 1usize..4,
        h in 2usize..6,
        w in 2usize..6,
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let (h, w) = (2 * h, 2 * w);
        // vertical steps see half of h, horizontal see all of w
        prop_assume!(k / 2 < h / 2 && k / 2 < w / 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let level = Lifting2D::new(&mut store, "l", c, k, 1, &mut rng).unwrap();
        randomize_biases(&mut store, &mut rng);
        let n = b * c * h * w;
        let x = Tensor::new([b, c, h, w], (0..n).map(|i| ((i as f32) * 0.37).sin() * 3.0).collect()).unwrap();
        let bands = level.forward_tensor(&store, &x).unwrap();
        prop_assert_eq!(bands.ll.shape(), &[b, c, h / 2, w / 2]);
        let back = level.inverse_tensor(&store, &bands).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-5);
    }
}
