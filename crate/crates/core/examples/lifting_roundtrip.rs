//! One 2D lifting level with random nonlinear weights: forward, inverse, error.

use dawn::checks::randomize_biases;
use dawn::lifting::Lifting2D;
use dawn::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dawn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let level = Lifting2D::new(&mut store, "level", 3, 3, 2, &mut rng)?;
    randomize_biases(&mut store, &mut rng);

    let x: Vec<f32> = (0..2 * 3 * 16 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new([2, 3, 16, 16], x)?;
    let bands = level.forward_tensor(&store, &x)?;
    for (name, band) in [("LL", &bands.ll), ("LH", &bands.lh), ("HL", &bands.hl), ("HH", &bands.hh)] {
        let energy: f32 = band.data().iter().map(|v| v * v).sum();
        println!("{name} {:?} energy {energy:.3}", band.shape());
    }
    let back = level.inverse_tensor(&store, &bands)?;
    println!("max reconstruction error {:.2e}", back.max_abs_diff(&x));
    Ok(())
}
