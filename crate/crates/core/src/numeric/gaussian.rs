use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{ensure, Result};

/// Draws `mu + sigma ∘ ε` with `ε ~ N(0, I)`.
pub fn sample_gaussian(mu: &Tensor, sigma: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    ensure!(
        mu.len() == sigma.len(),
        "mu has length {}, sigma has length {}",
        mu.len(),
        sigma.len()
    );
    ensure!(
        sigma.data().iter().all(|&s| s > 0.0),
        "sigma must be strictly positive"
    );
    let z = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(m, s)| m + s * rng.normal())
        .collect();
    Ok(Tensor::vector(z))
}

/// Reparameterized sample on the tape; gradients flow to `mu` and `sigma`.
pub fn reparameterize(tape: &mut Tape, mu: Var, sigma: Var, eps: &[f64]) -> Var {
    let e = tape.input(eps);
    let scaled = tape.mul(sigma, e);
    tape.add(mu, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_returns_mu() {
        let mu = Tensor::vector(vec![0.25, -1.0, 3.0]);
        let sigma = Tensor::vector(vec![1e-12; 3]);
        let z = sample_gaussian(&mu, &sigma, &mut Rng::seed(0)).unwrap();
        for (a, b) in z.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let mu = Tensor::vector(vec![0.0, 0.0]);
        let sigma = Tensor::vector(vec![1.0, 0.0]);
        assert!(sample_gaussian(&mu, &sigma, &mut Rng::seed(0)).is_err());
    }

    #[test]
    fn same_seed_same_draw() {
        let mu = Tensor::vector(vec![0.0; 4]);
        let sigma = Tensor::vector(vec![1.0; 4]);
        let a = sample_gaussian(&mu, &sigma, &mut Rng::seed(9)).unwrap();
        let b = sample_gaussian(&mu, &sigma, &mut Rng::seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn moments_of_standard_normal() {
        let n = 100_000;
        let mu = Tensor::vector(vec![0.0; n]);
        let sigma = Tensor::vector(vec![1.0; n]);
        let z = sample_gaussian(&mu, &sigma, &mut Rng::seed(2024)).unwrap();
        let mean = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }
}
