//! Discrete sphere-time grid, ensemble tensors, land masks, and the
//! mean/anomaly decomposition used by every later stage.
//!
//! Latitudes are stored south to north; longitudes are implicit and equally
//! spaced, `ℓ_n = 2πn/N`. Ensemble values are a 4-D tensor indexed
//! `(band, longitude, time, realization)`. All types are immutable after
//! construction and safe to share read-only across parallel workers.

use ndarray::{Array2, Array3, Array4, ArrayView1, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field shape {found:?} does not match grid shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize, usize),
        found: (usize, usize, usize, usize),
    },
    #[error("non-finite value at (band {0}, lon {1}, time {2}, realization {3})")]
    NonFinite(usize, usize, usize, usize),
    #[error("anomalies undefined for single realization")]
    SingleRealization,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
}

/// The discrete latitude × longitude × time × realization grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    latitudes: Vec<f64>,
    n_lon: usize,
    n_time: usize,
    n_real: usize,
}

impl SphereGrid {
    /// Build a grid from latitudes in radians (strictly increasing, inside
    /// the open interval (−π/2, π/2)) and counts of longitudes, time steps
    /// and realizations.
    pub fn new(
        latitudes: Vec<f64>,
        n_lon: usize,
        n_time: usize,
        n_real: usize,
    ) -> Result<Self, GridError> {
        if latitudes.is_empty() {
            return Err(GridError::InvalidGrid("need at least one latitude band".into()));
        }
        if n_lon < 2 {
            return Err(GridError::InvalidGrid("need at least two longitudes".into()));
        }
        if n_time < 3 {
            return Err(GridError::InvalidGrid(
                "need at least three time steps (second-order temporal filter)".into(),
            ));
        }
        if n_real < 2 {
            return Err(GridError::InvalidGrid(
                "need at least two realizations (anomalies are undefined otherwise)".into(),
            ));
        }
        for (i, &lat) in latitudes.iter().enumerate() {
            if !lat.is_finite() || lat <= -PI / 2.0 || lat >= PI / 2.0 {
                return Err(GridError::InvalidGrid(format!(
                    "latitude {i} = {lat} outside (-pi/2, pi/2)"
                )));
            }
            if i > 0 && lat <= latitudes[i - 1] {
                return Err(GridError::InvalidGrid(format!(
                    "latitudes must be strictly increasing (band {i})"
                )));
            }
        }
        Ok(Self { latitudes, n_lon, n_time, n_real })
    }

    /// Grid with `m` equally spaced latitudes spanning `lat_range_deg`.
    pub fn equally_spaced_deg(
        m: usize,
        lat_range_deg: (f64, f64),
        n_lon: usize,
        n_time: usize,
        n_real: usize,
    ) -> Result<Self, GridError> {
        if m == 0 {
            return Err(GridError::InvalidGrid("need at least one latitude band".into()));
        }
        let (lo, hi) = lat_range_deg;
        let lats = (0..m)
            .map(|i| {
                let frac = if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
                (lo + frac * (hi - lo)) * PI / 180.0
            })
            .collect();
        Self::new(lats, n_lon, n_time, n_real)
    }

    pub fn n_lat(&self) -> usize {
        self.latitudes.len()
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// Usable time slices after the second-order temporal filter.
    pub fn n_time_eff(&self) -> usize {
        self.n_time - 2
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    pub fn latitude_deg(&self, m: usize) -> f64 {
        self.latitudes[m] * 180.0 / PI
    }

    /// Longitude of index `n` in radians, `ℓ_n = 2πn/N`.
    pub fn longitude(&self, n: usize) -> f64 {
        2.0 * PI * (n % self.n_lon) as f64 / self.n_lon as f64
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_lat(), self.n_lon, self.n_time, self.n_real)
    }

    pub fn n_values(&self) -> usize {
        self.n_lat() * self.n_lon * self.n_time * self.n_real
    }
}

/// An ensemble of space-time fields over a [`SphereGrid`].
#[derive(Debug, Clone)]
pub struct EnsembleField {
    grid: SphereGrid,
    values: Array4<f64>,
}

impl EnsembleField {
    pub fn new(grid: SphereGrid, values: Array4<f64>) -> Result<Self, GridError> {
        check_shape_and_finite(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn values(&self) -> ArrayView4<'_, f64> {
        self.values.view()
    }
}

/// Ensemble anomalies `D_r = T_r − T̄`; sums to zero over realizations at
/// every site and time.
#[derive(Debug, Clone)]
pub struct AnomalyField {
    grid: SphereGrid,
    values: Array4<f64>,
}

impl AnomalyField {
    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn values(&self) -> ArrayView4<'_, f64> {
        self.values.view()
    }
}

fn check_shape_and_finite(grid: &SphereGrid, values: &Array4<f64>) -> Result<(), GridError> {
    let expected = grid.shape();
    let d = values.dim();
    if d != expected {
        return Err(GridError::ShapeMismatch { expected, found: d });
    }
    for ((m, n, k, r), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(GridError::NonFinite(m, n, k, r));
        }
    }
    Ok(())
}

/// Pointwise mean over the realization axis. This is also the restricted
/// generalized-least-squares estimator of the ensemble mean field.
pub fn ensemble_mean(field: &EnsembleField) -> Array3<f64> {
    field.values().mean_axis(Axis(3)).expect("n_real >= 2")
}

/// Subtract the ensemble mean from each realization.
pub fn anomalies(field: &EnsembleField) -> Result<AnomalyField, GridError> {
    if field.grid().n_real() < 2 {
        return Err(GridError::SingleRealization);
    }
    let mean = ensemble_mean(field);
    let mut values = field.values.clone();
    for r in 0..field.grid().n_real() {
        let mut slab = values.index_axis_mut(Axis(3), r);
        slab -= &mean;
    }
    Ok(AnomalyField { grid: field.grid.clone(), values })
}

/// Binary land indicator on the latitude × longitude grid (1 = land).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandMask {
    values: Array2<u8>,
}

impl LandMask {
    pub fn new(values: Array2<u8>) -> Result<Self, GridError> {
        if values.iter().any(|&v| v > 1) {
            return Err(GridError::InvalidMask("mask entries must be 0 or 1".into()));
        }
        Ok(Self { values })
    }

    pub fn n_lat(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_lon(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, m: usize) -> ArrayView1<'_, u8> {
        self.values.row(m)
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn is_land(&self, m: usize, n: usize) -> bool {
        self.values[[m, n]] == 1
    }
}

/// Descriptors for synthetic mask generation (test and demo fixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "kebab-case")]
pub enum MaskPattern {
    AllLand,
    AllOcean,
    /// Land on the western half of every band: longitudes `n < ceil(N/2)`.
    HalfSplit,
    /// Explicit half-open land intervals `[start, end)` per band.
    Blocks { intervals: Vec<Vec<(usize, usize)>> },
    /// Independent Bernoulli(p) land indicator, seeded.
    Random { p: f64, seed: u64 },
}

/// Deterministic mask for deterministic descriptors; seeded reproducible
/// mask for the random descriptor.
pub fn synthetic_mask(m: usize, n: usize, pattern: &MaskPattern) -> Result<LandMask, GridError> {
    if m == 0 || n == 0 {
        return Err(GridError::InvalidMask("mask dimensions must be positive".into()));
    }
    let mut values = Array2::<u8>::zeros((m, n));
    match pattern {
        MaskPattern::AllOcean => {}
        MaskPattern::AllLand => values.fill(1),
        MaskPattern::HalfSplit => {
            let cut = n.div_ceil(2);
            for mut row in values.rows_mut() {
                for j in 0..cut {
                    row[j] = 1;
                }
            }
        }
        MaskPattern::Blocks { intervals } => {
            if intervals.len() != m {
                return Err(GridError::InvalidMask(format!(
                    "expected {m} interval lists, got {}",
                    intervals.len()
                )));
            }
            for (band, list) in intervals.iter().enumerate() {
                for &(start, end) in list {
                    if start >= end || end > n {
                        return Err(GridError::InvalidMask(format!(
                            "band {band}: interval [{start}, {end}) is malformed for {n} longitudes"
                        )));
                    }
                    for j in start..end {
                        values[[band, j]] = 1;
                    }
                }
            }
        }
        MaskPattern::Random { p, seed } => {
            if !(0.0..=1.0).contains(p) {
                return Err(GridError::InvalidMask(format!("probability {p} outside [0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(2);
            for v in values.iter_mut() {
                *v = u8::from(rng.gen_bool(*p));
            }
        }
    }
    LandMask::new(values)
}
