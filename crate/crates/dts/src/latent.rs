//! Latent states on the denoising trajectory and the noise-prediction
//! interface both sampling strategies call into.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DtsError, Result};

/// One token on a denoising trajectory: a latent vector tied to a timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// Latent vector, length d.
    pub x: Vec<f64>,
    /// Diffusion timestep in `[0, T]`.
    pub t: usize,
}

impl LatentState {
    /// Create a state, rejecting non-finite entries.
    pub fn new(x: Vec<f64>, t: usize) -> Result<Self> {
        ensure_finite(&x, "latent state")?;
        Ok(LatentState { x, t })
    }

    /// Draw x_T from a standard normal with a deterministic seeded generator.
    pub fn standard_normal(d: usize, t: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        LatentState { x, t }
    }

    /// Dimension of the latent vector.
    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// The noise predictor ε̂(x, t). Implementations must be deterministic:
/// identical inputs yield bit-identical outputs, and `evaluate_batch` must
/// equal element-wise `evaluate` regardless of batch composition.
pub trait EpsilonPredictor: Sync {
    /// Latent dimension this predictor operates on.
    fn dim(&self) -> usize;

    /// Predict the noise component of `x` at timestep `t` (1 ≤ t ≤ T).
    fn evaluate(&self, x: &[f64], t: usize) -> Result<Vec<f64>>;

    /// Predict for a whole batch. One call here counts as one forward pass
    /// in the cost model, whatever the batch size.
    fn evaluate_batch(&self, queries: &[(&[f64], usize)]) -> Result<Vec<Vec<f64>>> {
        queries.iter().map(|&(x, t)| self.evaluate(x, t)).collect()
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DtsError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

pub(crate) fn ensure_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DtsError::Numeric(format!("{what} contains non-finite values")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_rejects_non_finite() {
        assert!(LatentState::new(vec![0.0, f64::NAN], 5).is_err());
        assert!(LatentState::new(vec![0.0, f64::INFINITY], 5).is_err());
        assert!(LatentState::new(vec![0.0, 1.0], 5).is_ok());
    }

    #[test]
    fn test_standard_normal_deterministic() {
        let a = LatentState::standard_normal(8, 100, 42);
        let b = LatentState::standard_normal(8, 100, 42);
        assert_eq!(a, b);
        let c = LatentState::standard_normal(8, 100, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn test_l2_distance() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(l2_distance(&[0.0], &[0.0, 1.0]).is_err());
    }
}
