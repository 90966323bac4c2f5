//! Per-site AR(2) temporal structure: Yule–Walker estimation pooled across
//! realizations, whitening of anomalies into spatial innovations, and the
//! forward recursion used when generating surrogate runs.

use crate::grid::AnomalyField;
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("zero-variance site")]
    ZeroVariance,
    #[error("zero-variance site at (band {band}, lon {lon})")]
    ZeroVarianceSite { band: usize, lon: usize },
    #[error("series too short: need at least {need} time steps, got {got}")]
    SeriesTooShort { need: usize, got: usize },
    #[error("shape mismatch: params are {params:?}, field is {field:?}")]
    ShapeMismatch { params: (usize, usize), field: (usize, usize) },
    #[error("non-stationary coefficients at (band {band}, lon {lon})")]
    NonStationary { band: usize, lon: usize },
}

/// AR(2) coefficients and innovation standard deviation for one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar2Site {
    pub phi1: f64,
    pub phi2: f64,
    pub sigma: f64,
}

impl Ar2Site {
    /// Stationarity triangle: `phi2 + phi1 < 1`, `phi2 - phi1 < 1`,
    /// `|phi2| < 1`.
    pub fn is_stationary(&self) -> bool {
        self.phi1 + self.phi2 < 1.0 && self.phi2 - self.phi1 < 1.0 && self.phi2.abs() < 1.0
    }

    /// Stationary variance of the AR(2) process driven by innovations with
    /// standard deviation `innovation_sd`.
    pub fn stationary_variance(&self, innovation_sd: f64) -> f64 {
        let s2 = innovation_sd * innovation_sd;
        let p1 = self.phi1;
        let p2 = self.phi2;
        s2 * (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2) * (1.0 - p2) - p1 * p1))
    }

    /// Autocovariance sequence of the process up to `max_lag`.
    pub fn autocovariances(&self, innovation_sd: f64, max_lag: usize) -> Vec<f64> {
        let g0 = self.stationary_variance(innovation_sd);
        let mut acov = vec![0.0; max_lag + 1];
        acov[0] = g0;
        if max_lag >= 1 {
            acov[1] = self.phi1 / (1.0 - self.phi2) * g0;
        }
        for h in 2..=max_lag {
            acov[h] = self.phi1 * acov[h - 1] + self.phi2 * acov[h - 2];
        }
        acov
    }
}

/// AR(2) parameters for every grid site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    sites: Vec<Ar2Site>,
    n_lat: usize,
    n_lon: usize,
}

impl TemporalParams {
    pub fn new(sites: Array2<Ar2Site>) -> Self {
        let (n_lat, n_lon) = sites.dim();
        Self { sites: sites.into_iter().collect(), n_lat, n_lon }
    }

    pub fn from_fn(n_lat: usize, n_lon: usize, f: impl Fn(usize, usize) -> Ar2Site) -> Self {
        Self::new(Array2::from_shape_fn((n_lat, n_lon), |(m, n)| f(m, n)))
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn site(&self, m: usize, n: usize) -> &Ar2Site {
        &self.sites[m * self.n_lon + n]
    }

    pub fn all_stationary(&self) -> bool {
        self.sites.iter().all(Ar2Site::is_stationary)
    }

    /// Σ log σ over all sites, a constant of the conditional likelihoods.
    pub fn log_sigma_sum(&self) -> f64 {
        self.sites.iter().map(|s| s.sigma.ln()).sum()
    }
}

/// Whitened innovations with `K − 2` usable time slices.
#[derive(Debug, Clone)]
pub struct InnovationField {
    values: Array4<f64>,
}

impl InnovationField {
    pub fn new(values: Array4<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> ArrayView4<'_, f64> {
        self.values.view()
    }

    pub fn n_lat(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_lon(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_time_eff(&self) -> usize {
        self.values.dim().2
    }

    pub fn n_real(&self) -> usize {
        self.values.dim().3
    }
}

/// Solve the order-2 Yule–Walker system from autocovariances at lags 0..2.
/// Returns `(phi1, phi2, innovation variance)`.
pub fn yule_walker_ar2(g0: f64, g1: f64, g2: f64) -> (f64, f64, f64) {
    let det = g0 * g0 - g1 * g1;
    let (phi1, phi2) = if det.abs() < 1e-300 {
        (0.0, 0.0)
    } else {
        ((g0 * g1 - g1 * g2) / det, (g0 * g2 - g1 * g1) / det)
    };
    let sigma2 = g0 - phi1 * g1 - phi2 * g2;
    (phi1, phi2, sigma2)
}

const TRIANGLE_MARGIN: f64 = 1e-4;

/// Euclidean projection onto the stationarity triangle shrunk by a small
/// margin, so downstream filters stay invertible.
pub fn project_to_stationary(phi1: f64, phi2: f64) -> (f64, f64) {
    let b = 1.0 - TRIANGLE_MARGIN;
    let inside = |p1: f64, p2: f64| p1 + p2 <= b && p2 - p1 <= b && p2 >= -b;
    if inside(phi1, phi2) {
        return (phi1, phi2);
    }
    // vertices of the shrunk triangle
    let verts = [(2.0 * b, -b), (-2.0 * b, -b), (0.0, b)];
    let mut best = verts[0];
    let mut best_d = f64::INFINITY;
    // project onto each edge segment, keep the nearest feasible point
    for i in 0..3 {
        let (x1, y1) = verts[i];
        let (x2, y2) = verts[(i + 1) % 3];
        let (dx, dy) = (x2 - x1, y2 - y1);
        let t = (((phi1 - x1) * dx + (phi2 - y1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        let (px, py) = (x1 + t * dx, y1 + t * dy);
        let d = (phi1 - px).powi(2) + (phi2 - py).powi(2);
        if d < best_d {
            best_d = d;
            best = (px, py);
        }
    }
    best
}

/// Fit an AR(2) model to one site's series by Yule–Walker on empirical
/// autocovariances pooled across realizations (lag-adjusted denominators).
/// Non-stationary solutions are projected into the stationarity triangle and
/// the innovation standard deviation is floored at a small multiple of the
/// series standard deviation.
pub fn fit_ar2_site(series: ArrayView2<'_, f64>) -> Result<Ar2Site, TemporalError> {
    let (k, r) = series.dim();
    if k < 5 {
        return Err(TemporalError::SeriesTooShort { need: 5, got: k });
    }
    let mut acov = [0.0; 3];
    for (h, a) in acov.iter_mut().enumerate() {
        let mut total = 0.0;
        for rr in 0..r {
            let col = series.index_axis(Axis(1), rr);
            let mut s = 0.0;
            for t in 0..k - h {
                s += col[t] * col[t + h];
            }
            total += s / (k - h) as f64;
        }
        *a = total / r as f64;
    }
    if acov[0] <= 0.0 || !acov[0].is_finite() {
        return Err(TemporalError::ZeroVariance);
    }
    let (p1, p2, _) = yule_walker_ar2(acov[0], acov[1], acov[2]);
    let (phi1, phi2) = project_to_stationary(p1, p2);
    let sigma2 = acov[0] - phi1 * acov[1] - phi2 * acov[2];
    let floor = 1e-8 * acov[0].sqrt();
    let sigma = sigma2.max(0.0).sqrt().max(floor);
    Ok(Ar2Site { phi1, phi2, sigma })
}

/// Apply the inverse AR(2) filter site by site:
/// `H_k = (ε_k − φ1 ε_{k−1} − φ2 ε_{k−2}) / σ` for `k = 2..K`. The output
/// drops the first two time slices.
pub fn whiten_values(
    values: ArrayView4<'_, f64>,
    params: &TemporalParams,
) -> Result<InnovationField, TemporalError> {
    let (m, n, k, r) = values.dim();
    if (params.n_lat(), params.n_lon()) != (m, n) {
        return Err(TemporalError::ShapeMismatch {
            params: (params.n_lat(), params.n_lon()),
            field: (m, n),
        });
    }
    if k < 3 {
        return Err(TemporalError::SeriesTooShort { need: 3, got: k });
    }
    let mut out = Array4::<f64>::zeros((m, n, k - 2, r));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(mi, mut band)| {
            for ni in 0..n {
                let site = params.site(mi, ni);
                for ri in 0..r {
                    for ki in 2..k {
                        let e0 = values[[mi, ni, ki, ri]];
                        let e1 = values[[mi, ni, ki - 1, ri]];
                        let e2 = values[[mi, ni, ki - 2, ri]];
                        band[[ni, ki - 2, ri]] =
                            (e0 - site.phi1 * e1 - site.phi2 * e2) / site.sigma;
                    }
                }
            }
        });
    Ok(InnovationField::new(out))
}

/// Whiten ensemble anomalies into spatial innovations.
pub fn whiten(
    anomalies: &AnomalyField,
    params: &TemporalParams,
) -> Result<InnovationField, TemporalError> {
    whiten_values(anomalies.values(), params)
}

/// Run the AR(2) recursion forward site by site,
/// `ε_k = φ1 ε_{k−1} + φ2 ε_{k−2} + σ H_k`, starting from rest and
/// discarding the first `burn_in` outputs.
pub fn colorize(
    innovations: ArrayView4<'_, f64>,
    params: &TemporalParams,
    burn_in: usize,
) -> Result<Array4<f64>, TemporalError> {
    let (m, n, k, r) = innovations.dim();
    if (params.n_lat(), params.n_lon()) != (m, n) {
        return Err(TemporalError::ShapeMismatch {
            params: (params.n_lat(), params.n_lon()),
            field: (m, n),
        });
    }
    assert!(burn_in < k, "burn-in must leave at least one output slice");
    for mi in 0..m {
        for ni in 0..n {
            if !params.site(mi, ni).is_stationary() {
                return Err(TemporalError::NonStationary { band: mi, lon: ni });
            }
        }
    }
    let k_out = k - burn_in;
    let mut out = Array4::<f64>::zeros((m, n, k_out, r));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(mi, mut band)| {
            for ni in 0..n {
                let site = params.site(mi, ni);
                for ri in 0..r {
                    let mut prev1 = 0.0;
                    let mut prev2 = 0.0;
                    for ki in 0..k {
                        let eps = site.phi1 * prev1
                            + site.phi2 * prev2
                            + site.sigma * innovations[[mi, ni, ki, ri]];
                        prev2 = prev1;
                        prev1 = eps;
                        if ki >= burn_in {
                            band[[ni, ki - burn_in, ri]] = eps;
                        }
                    }
                }
            }
        });
    Ok(out)
}
