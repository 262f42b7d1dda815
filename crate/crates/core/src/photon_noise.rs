//! Poisson photon statistics of the optical source.
//!
//! During each observation window of a '1' bit the source delivers `f` photons
//! with `f ~ Poisson(lambda)`, and the intensity seen by the receptors is
//! `f X` with `X = x_on / lambda`, so the mean intensity stays at `x_on` and
//! only the fluctuation scale depends on `lambda`. A '0' bit emits nothing.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

pub fn snr_of_lambda(lambda: f64) -> f64 {
    lambda.sqrt()
}

pub fn lambda_of_snr(snr: f64) -> f64 {
    snr * snr
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonModel {
    lambda: f64,
    x_on: f64,
}

impl PhotonModel {
    pub fn new(lambda: f64, x_on: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                key: "lambda".into(),
                message: format!("mean photon count must be finite and nonnegative, got {lambda}"),
            });
        }
        if !(x_on >= 0.0 && x_on.is_finite()) {
            return Err(Error::NegativeIntensity(x_on));
        }
        Ok(Self { lambda, x_on })
    }

    pub fn from_snr(snr: f64, x_on: f64) -> Result<Self> {
        if snr.is_nan() || snr < 0.0 {
            return Err(Error::InvalidParameter {
                key: "snr".into(),
                message: format!("snr must be nonnegative, got {snr}"),
            });
        }
        Self::new(lambda_of_snr(snr), x_on)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn x_on(&self) -> f64 {
        self.x_on
    }

    pub fn snr(&self) -> f64 {
        snr_of_lambda(self.lambda)
    }

    /// Lumens contributed by one photon; zero when `lambda = 0`.
    pub fn per_photon_intensity(&self) -> f64 {
        if self.lambda > 0.0 {
            self.x_on / self.lambda
        } else {
            0.0
        }
    }

    pub fn intensity_of_count(&self, photons: u64) -> f64 {
        photons as f64 * self.per_photon_intensity()
    }

    pub fn sample_photon_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.lambda == 0.0 {
            return 0;
        }
        // lambda is positive and finite, checked in `new`
        let dist = Poisson::new(self.lambda).expect("valid Poisson mean");
        dist.sample(rng) as u64
    }

    pub fn sample_intensity<R: Rng + ?Sized>(&self, bit: bool, rng: &mut R) -> f64 {
        if bit {
            self.intensity_of_count(self.sample_photon_count(rng))
        } else {
            0.0
        }
    }

    /// Truncated Poisson pmf covering all but a negligible tail (terms below
    /// 1e-18 are dropped on both sides), renormalised to unit mass.
    pub fn count_support(&self) -> PhotonSupport {
        PhotonSupport::poisson(self.lambda)
    }
}

/// Photon counts `first..first + weights.len()` with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonSupport {
    pub first: u64,
    pub weights: Vec<f64>,
}

impl PhotonSupport {
    const CUTOFF: f64 = 1e-18;

    pub fn poisson(lambda: f64) -> Self {
        if lambda == 0.0 {
            return Self {
                first: 0,
                weights: vec![1.0],
            };
        }
        let mode = lambda.floor() as u64;
        let peak = (mode as f64 * lambda.ln() - lambda - ln_factorial(mode)).exp();

        let mut left = Vec::new();
        let mut term = peak;
        let mut f = mode;
        while f > 0 {
            term *= f as f64 / lambda;
            f -= 1;
            if term < Self::CUTOFF {
                break;
            }
            left.push(term);
        }
        let first = mode - left.len() as u64;

        let mut weights: Vec<f64> = left.into_iter().rev().collect();
        weights.push(peak);
        let mut term = peak;
        let mut f = mode;
        loop {
            f += 1;
            term *= lambda / f as f64;
            if term < Self::CUTOFF {
                break;
            }
            weights.push(term);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { first, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, count: u64) -> bool {
        count >= self.first && count < self.first + self.weights.len() as u64
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.first + i as u64, w))
    }
}

/// `ln(n!)`, exact summation up to 256 and a Stirling series beyond.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    if n <= 256 {
        return (2..=n).map(|i| (i as f64).ln()).sum();
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn snr_lambda_values() {
        assert_eq!(snr_of_lambda(100.0), 10.0);
        assert_eq!(snr_of_lambda(0.0), 0.0);
        assert_abs_diff_eq!(snr_of_lambda(2.0), std::f64::consts::SQRT_2, epsilon = 1e-15);
        assert_eq!(lambda_of_snr(10.0), 100.0);
        assert_eq!(lambda_of_snr(0.0), 0.0);
        assert_eq!(lambda_of_snr(3.0), 9.0);
    }

    #[test]
    fn dark_bit_is_zero() {
        let model = PhotonModel::new(4.0, 1.0).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..100 {
            assert_eq!(model.sample_intensity(false, &mut rng), 0.0);
            assert!(model.sample_intensity(true, &mut rng) >= 0.0);
        }
    }

    #[test]
    fn zero_lambda_never_emits() {
        let model = PhotonModel::new(0.0, 1.0).unwrap();
        let mut rng = stream(3, 1);
        assert_eq!(model.sample_intensity(true, &mut rng), 0.0);
        assert_eq!(model.count_support().weights, vec![1.0]);
    }

    #[test]
    fn invalid_models() {
        assert!(PhotonModel::new(-1.0, 1.0).is_err());
        assert!(PhotonModel::new(f64::NAN, 1.0).is_err());
        assert!(PhotonModel::new(1.0, -1.0).is_err());
        assert!(PhotonModel::from_snr(-2.0, 1.0).is_err());
    }

    #[test]
    fn ln_factorial_branches_agree() {
        let exact: f64 = (2..=300u64).map(|i| (i as f64).ln()).sum();
        assert_abs_diff_eq!(ln_factorial(300), exact, epsilon = 1e-9);
        assert_abs_diff_eq!(ln_factorial(5), 120f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn support_matches_pmf() {
        for lambda in [0.5, 4.0, 50.0, 1e4] {
            let support = PhotonSupport::poisson(lambda);
            let total: f64 = support.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
            let mean: f64 = support.iter().map(|(f, w)| f as f64 * w).sum();
            assert_abs_diff_eq!(mean, lambda, epsilon = 1e-9 * lambda.max(1.0));
            let var: f64 = support.iter().map(|(f, w)| (f as f64 - mean).powi(2) * w).sum();
            assert_abs_diff_eq!(var, lambda, epsilon = 1e-8 * lambda.max(1.0));
        }
        let small = PhotonSupport::poisson(4.0);
        assert_eq!(small.first, 0);
        assert_abs_diff_eq!(small.weights[2], 8.0 * (-4.0f64).exp(), epsilon = 1e-15);
    }
}
