use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// The single generator type used everywhere a random draw is made.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
///
/// Streams never overlap, so consumers that draw from different streams
/// cannot perturb each other's sequences.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_normal<T: Real>(shape: Shape, mean: f64, stddev: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(stddev >= 0.0) || !mean.is_finite() || !stddev.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "normal distribution needs finite mean and stddev >= 0, got mean {mean}, stddev {stddev}"
        )));
    }
    let data = (0..shape.numel())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64(mean + stddev * z)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Draws from `Uniform[lo, hi)`.
pub fn sample_uniform<T: Real>(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Tensor<T> {
    let data = (0..shape.numel())
        .map(|_| T::from_f64(lo + (hi - lo) * rng.gen::<f64>()))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stddev_is_constant() {
        let t: Tensor<f32> = sample_normal(Shape::new(2, 3, 4, 4), 0.25, 0.0, &mut seeded_rng(1)).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn negative_stddev_rejected() {
        let r = sample_normal::<f32>(Shape::SCALAR, 0.0, -1.0, &mut seeded_rng(1));
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn moments_of_a_million_draws() {
        let t: Tensor<f64> =
            sample_normal(Shape::new(1, 1, 1000, 1000), 0.0, 1.0, &mut seeded_rng(7)).unwrap();
        let mean = t.mean_f64();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.005, "stddev {}", var.sqrt());
    }

    #[test]
    fn same_seed_same_tensor() {
        let s = Shape::new(2, 1, 8, 8);
        let a: Tensor<f32> = sample_normal(s, 0.0, 1.0, &mut seeded_rng(42)).unwrap();
        let b: Tensor<f32> = sample_normal(s, 0.0, 1.0, &mut seeded_rng(42)).unwrap();
        assert_eq!(a, b);
        let c: Tensor<f32> = sample_normal(s, 0.0, 1.0, &mut stream_rng(42, 1)).unwrap();
        assert_ne!(a, c);
    }
}
