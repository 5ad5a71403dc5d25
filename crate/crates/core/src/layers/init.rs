use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::Tensor;

/// `√(1/fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in.max(1) as f64).sqrt()
}

/// `U(−bound, bound)` entries.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    if bound == 0.0 {
        return Tensor::zeros(rows, cols);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// `N(0, std²)` entries.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}
