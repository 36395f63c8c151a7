//! Minimal neural-network building blocks with hand-written backward passes.

mod adam;
mod gru;
mod mlp;
pub mod persist;

pub use adam::Adam;
pub use gru::{Gru, GruStep};
pub use mlp::{Activation, Dense, Mlp, MlpTrace};

use crate::scalar::Real;

/// Anything holding trainable parameters as flat slices in a fixed order.
pub trait Parameters<T: Real> {
    fn slices(&self) -> Vec<&[T]>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flat(&self) -> Vec<T> {
        self.slices().concat()
    }

    /// Euclidean norm of the difference to another parameter set of the same shape.
    fn distance(&self, other: &Self) -> T
    where
        Self: Sized,
    {
        self.slices()
            .iter()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)))
            .sum::<T>()
            .sqrt()
    }
}

/// Uniform initialisation in `±scale`.
pub(crate) fn uniform<T: Real, R: rand::Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-scale..=scale))).collect()
}
