use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;

/// He-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let len = shape.iter().product();
    let data = (0..len).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape, data).expect("shape and length agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_and_deterministic() {
        let a = he_uniform(&mut ChaCha8Rng::seed_from_u64(3), &[4, 3, 3, 3], 27);
        let b = he_uniform(&mut ChaCha8Rng::seed_from_u64(3), &[4, 3, 3, 3], 27);
        assert_eq!(a, b);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }
}
