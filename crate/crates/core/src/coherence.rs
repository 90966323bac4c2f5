//! Across-latitude dependence of the spectral innovations.
//!
//! At each wavenumber the band-to-band coherence follows a unit-variance
//! AR(1) process in latitude with coefficient
//! `φ(c) = ξ / {1 + 4 sin²(πc/N)}^τ`, either shared by all transitions
//! (stationary) or with transition-specific pairs inside the tropics
//! (nonstationary).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoherenceError {
    #[error("invalid coherence pair: {0}")]
    InvalidPair(String),
}

/// One (ξ, τ) pair; guarantees `|φ(c)| < 1` for every wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherencePair {
    pub xi: f64,
    pub tau: f64,
}

impl CoherencePair {
    pub fn new(xi: f64, tau: f64) -> Result<Self, CoherenceError> {
        if !(0.0..1.0).contains(&xi) || !xi.is_finite() {
            return Err(CoherenceError::InvalidPair(format!("xi = {xi} outside [0, 1)")));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(CoherenceError::InvalidPair(format!("tau = {tau} negative")));
        }
        Ok(Self { xi, tau })
    }

    /// Independence across bands.
    pub fn independent() -> Self {
        Self { xi: 0.0, tau: 0.0 }
    }

    /// φ(c) = ξ / {1 + 4 sin²(πc/N)}^τ.
    pub fn value(&self, c: usize, n_lon: usize) -> f64 {
        coherence_value(self, c, n_lon)
    }
}

/// φ(c) = ξ / {1 + 4 sin²(πc/N)}^τ.
pub fn coherence_value(pair: &CoherencePair, c: usize, n_lon: usize) -> f64 {
    let s = (PI * c as f64 / n_lon as f64).sin();
    pair.xi / (1.0 + 4.0 * s * s).powf(pair.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoherenceMode {
    Stationary,
    Nonstationary,
}

/// Latitudinal coherence profile. The AR(1) recursion runs south to north;
/// the transition from band `m` to band `m + 1` uses the tropical pair keyed
/// by `m` when present (nonstationary mode only), otherwise the global pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatitudeCoherenceProfile {
    pub mode: CoherenceMode,
    pub global: CoherencePair,
    /// Transition-specific pairs keyed by the lower band index of the pair.
    pub tropical: BTreeMap<usize, CoherencePair>,
    /// Tropics boundary in degrees used when the profile was built.
    pub tropic_bound_deg: f64,
}

impl LatitudeCoherenceProfile {
    pub fn stationary(global: CoherencePair) -> Self {
        Self {
            mode: CoherenceMode::Stationary,
            global,
            tropical: BTreeMap::new(),
            tropic_bound_deg: DEFAULT_TROPIC_BOUND_DEG,
        }
    }

    pub fn nonstationary(
        global: CoherencePair,
        tropical: BTreeMap<usize, CoherencePair>,
        tropic_bound_deg: f64,
    ) -> Self {
        Self { mode: CoherenceMode::Nonstationary, global, tropical, tropic_bound_deg }
    }

    /// Pair governing the transition from band `m` to band `m + 1`.
    pub fn step_pair(&self, m: usize) -> &CoherencePair {
        match self.mode {
            CoherenceMode::Stationary => &self.global,
            CoherenceMode::Nonstationary => self.tropical.get(&m).unwrap_or(&self.global),
        }
    }

    /// AR(1) step coefficient for the transition `m → m + 1` at wavenumber `c`.
    pub fn step_value(&self, m: usize, c: usize, n_lon: usize) -> f64 {
        coherence_value(self.step_pair(m), c, n_lon)
    }

    pub fn tropical_band_count(&self) -> usize {
        self.tropical.len()
    }
}

/// Default tropics boundary (degrees latitude).
pub const DEFAULT_TROPIC_BOUND_DEG: f64 = 23.0;

/// Correlation between the spectral innovations of two bands at one
/// wavenumber: the product of the AR(1) step coefficients along the chain.
pub fn cross_band_correlation(
    profile: &LatitudeCoherenceProfile,
    m: usize,
    m_other: usize,
    c: usize,
    n_lon: usize,
) -> f64 {
    let (lo, hi) = if m <= m_other { (m, m_other) } else { (m_other, m) };
    let mut rho = 1.0;
    for step in lo..hi {
        rho *= profile.step_value(step, c, n_lon);
    }
    rho
}

/// Innovation standard deviation of the latitudinal AR(1) recursion at band
/// `m` (recursion order, south to north): `√(1 − φ_m(c)²)` with the step
/// coefficient of the transition into band `m`; the first band starts the
/// chain with unit standard deviation.
pub fn latitude_innovation_sd(
    profile: &LatitudeCoherenceProfile,
    m: usize,
    c: usize,
    n_lon: usize,
) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let phi = profile.step_value(m - 1, c, n_lon);
    (1.0 - phi * phi).sqrt()
}

/// Correlation matrix of the spectral innovations over a contiguous range of
/// bands at one wavenumber; the exact covariance of the AR(1) recursion with
/// unit marginal variances.
pub fn coherence_covariance(
    profile: &LatitudeCoherenceProfile,
    n_bands: usize,
    c: usize,
    n_lon: usize,
) -> Array2<f64> {
    let mut cov = Array2::<f64>::eye(n_bands);
    for i in 0..n_bands {
        let mut rho = 1.0;
        for j in (i + 1)..n_bands {
            rho *= profile.step_value(j - 1, c, n_lon);
            cov[[i, j]] = rho;
            cov[[j, i]] = rho;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn coherence_value_hand_checks() {
        let pair = CoherencePair::new(0.8, 1.0).unwrap();
        assert_abs_diff_eq!(coherence_value(&pair, 0, 8), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(coherence_value(&pair, 2, 8), 0.8 / 3.0, epsilon = 1e-14);
        let flat = CoherencePair::new(0.55, 0.0).unwrap();
        for c in 0..8 {
            assert_abs_diff_eq!(coherence_value(&flat, c, 8), 0.55, epsilon = 1e-15);
        }
    }

    #[test]
    fn pair_validation() {
        assert!(CoherencePair::new(1.0, 0.5).is_err());
        assert!(CoherencePair::new(-0.1, 0.5).is_err());
        assert!(CoherencePair::new(0.5, -0.5).is_err());
        assert!(CoherencePair::new(0.999, 0.0).is_ok());
    }

    #[test]
    fn stationary_correlation_is_markov_power() {
        let profile =
            LatitudeCoherenceProfile::stationary(CoherencePair::new(0.5, 0.3).unwrap());
        let phi = profile.step_value(0, 3, 16);
        assert_abs_diff_eq!(cross_band_correlation(&profile, 2, 2, 3, 16), 1.0);
        assert_abs_diff_eq!(cross_band_correlation(&profile, 1, 2, 3, 16), phi, epsilon = 1e-15);
        assert_abs_diff_eq!(
            cross_band_correlation(&profile, 0, 3, 3, 16),
            phi.powi(3),
            epsilon = 1e-15
        );
        // symmetric in the band arguments
        assert_abs_diff_eq!(
            cross_band_correlation(&profile, 3, 0, 3, 16),
            cross_band_correlation(&profile, 0, 3, 3, 16),
            epsilon = 1e-15
        );
    }

    #[test]
    fn nonstationary_correlation_multiplies_step_values() {
        let mut tropical = BTreeMap::new();
        // constant-in-c pairs so the chain product is easy to check
        tropical.insert(0usize, CoherencePair::new(0.5, 0.0).unwrap());
        tropical.insert(1usize, CoherencePair::new(0.4, 0.0).unwrap());
        let profile = LatitudeCoherenceProfile::nonstationary(
            CoherencePair::new(0.9, 0.0).unwrap(),
            tropical,
            23.0,
        );
        assert_abs_diff_eq!(cross_band_correlation(&profile, 0, 2, 5, 8), 0.2, epsilon = 1e-15);
        // transitions outside the tropical map use the global pair
        assert_abs_diff_eq!(cross_band_correlation(&profile, 2, 3, 5, 8), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn innovation_sd_pythagoras() {
        let profile =
            LatitudeCoherenceProfile::stationary(CoherencePair::new(0.6, 0.0).unwrap());
        assert_abs_diff_eq!(latitude_innovation_sd(&profile, 0, 2, 8), 1.0);
        assert_abs_diff_eq!(latitude_innovation_sd(&profile, 3, 2, 8), 0.8, epsilon = 1e-14);
        let indep = LatitudeCoherenceProfile::stationary(CoherencePair::independent());
        assert_abs_diff_eq!(latitude_innovation_sd(&indep, 2, 1, 8), 1.0);
    }

    #[test]
    fn covariance_matches_markov_powers() {
        let profile =
            LatitudeCoherenceProfile::stationary(CoherencePair::new(0.5, 0.0).unwrap());
        let cov = coherence_covariance(&profile, 3, 0, 8);
        let expect = [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(cov[[i, j]], expect[i][j], epsilon = 1e-15);
            }
        }
        let single = coherence_covariance(&profile, 1, 0, 8);
        assert_eq!(single.dim(), (1, 1));
        assert_abs_diff_eq!(single[[0, 0]], 1.0);
    }

    #[test]
    fn recursion_monte_carlo_reproduces_covariance() {
        let mut tropical = BTreeMap::new();
        tropical.insert(1usize, CoherencePair::new(0.85, 0.4).unwrap());
        let profile = LatitudeCoherenceProfile::nonstationary(
            CoherencePair::new(0.6, 0.2).unwrap(),
            tropical,
            23.0,
        );
        let n_bands = 4;
        let c = 2;
        let n_lon = 12;
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = Array2::<f64>::zeros((n_bands, n_bands));
        let mut chain = vec![0.0; n_bands];
        for _ in 0..draws {
            for m in 0..n_bands {
                let z: f64 = StandardNormal.sample(&mut rng);
                chain[m] = if m == 0 {
                    z
                } else {
                    let phi = profile.step_value(m - 1, c, n_lon);
                    phi * chain[m - 1] + (1.0 - phi * phi).sqrt() * z
                };
            }
            for i in 0..n_bands {
                for j in 0..n_bands {
                    acc[[i, j]] += chain[i] * chain[j];
                }
            }
        }
        acc /= draws as f64;
        let expect = coherence_covariance(&profile, n_bands, c, n_lon);
        let se = 3.0 / (draws as f64).sqrt();
        for i in 0..n_bands {
            for j in 0..n_bands {
                assert!(
                    (acc[[i, j]] - expect[[i, j]]).abs() < 3.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    acc[[i, j]],
                    expect[[i, j]]
                );
            }
        }
    }
}
