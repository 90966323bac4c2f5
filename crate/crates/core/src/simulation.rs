//! Surrogate-run generation and compression accounting.
//!
//! A surrogate run is built in five steps: draw latitudinal innovations
//! with variances `1 − φ(c)²`, run the AR(1) recursion across bands, mix
//! into longitude space through the band transfer functions, color through
//! the per-site AR(2) filters, and add the smoothed ensemble-mean trend.
//! Realizations use independent counter-based random substreams, so output
//! is reproducible and independent of scheduling order.

use crate::grid::GridError;
use crate::linalg::{cholesky_solve_many, Cholesky};
use crate::reml::{FitError, FittedModel, Variant};
use crate::spectral::band_covariance;
use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("penalty weight {0} outside (0, 1]")]
    InvalidLambda(f64),
    #[error("trend fitting needs at least four time steps, got {0}")]
    TooFewTimeSteps(usize),
    #[error("need at least one surrogate run")]
    RunsRequired,
    #[error("non-stationary temporal parameters at (band {band}, lon {lon})")]
    NonStationary { band: usize, lon: usize },
    #[error("trend shape {found:?} does not match the model grid {expected:?}")]
    TrendShape { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("spline knot policy needs at least two knots")]
    TooFewKnots,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Smoothed per-site mean trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendField {
    pub values: Array3<f64>,
    pub lambda: f64,
}

/// Default penalty weight of the trend spline.
pub const DEFAULT_TREND_LAMBDA: f64 = 0.01;

/// Number of AR(2) spin-up steps discarded when generating surrogates.
pub const COLORIZE_BURN_IN: usize = 200;

/// Fit the per-site smoothing spline minimizing
/// `λ Σ (mean − x)² + (1 − λ) Σ (Δ²x)²` on the discrete time grid. The
/// system matrix is shared by all sites, so it is factored once.
pub fn fit_trend(mean: ArrayView3<'_, f64>, lambda: f64) -> Result<TrendField, SimulationError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(SimulationError::InvalidLambda(lambda));
    }
    let (m, n, k) = mean.dim();
    if k < 4 {
        return Err(SimulationError::TooFewTimeSteps(k));
    }

    // system: lambda I + (1 - lambda) D'D with D the second-difference matrix
    let mut system = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        system[[i, i]] = lambda;
    }
    let w = 1.0 - lambda;
    for row in 0..k - 2 {
        let idx = [row, row + 1, row + 2];
        let coef = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                system[[idx[a], idx[b]]] += w * coef[a] * coef[b];
            }
        }
    }
    let chol = Cholesky::new(system.view()).expect("spline system is positive definite");

    let mut rhs = Array2::<f64>::zeros((k, m * n));
    for mi in 0..m {
        for ni in 0..n {
            for ki in 0..k {
                rhs[[ki, mi * n + ni]] = lambda * mean[[mi, ni, ki]];
            }
        }
    }
    let solved = cholesky_solve_many(&chol, rhs.view()).expect("dimensions match");
    let mut values = Array3::<f64>::zeros((m, n, k));
    for mi in 0..m {
        for ni in 0..n {
            for ki in 0..k {
                values[[mi, ni, ki]] = solved[[ki, mi * n + ni]];
            }
        }
    }
    Ok(TrendField { values, lambda })
}

/// Storage policy for the trend component of a compressed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "knots")]
pub enum TrendPolicy {
    StoreFull,
    SplineKnots(usize),
}

/// Natural cubic spline interpolation through `(x_i, y_i)` evaluated at `x`.
fn natural_cubic_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert!(n >= 2);
    if n == 2 {
        let t = (x - xs[0]) / (xs[1] - xs[0]);
        return ys[0] + t * (ys[1] - ys[0]);
    }
    // second derivatives from the standard tridiagonal system
    let mut m2 = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[i] = 2.0 * (h0 + h1);
        off[i] = h1;
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    // Thomas algorithm on the interior unknowns
    for i in 2..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let factor = h0 / diag[i - 1];
        diag[i] -= factor * off[i - 1];
        rhs[i] -= factor * rhs[i - 1];
    }
    for i in (1..n - 1).rev() {
        let upper = if i + 1 < n - 1 { m2[i + 1] } else { 0.0 };
        m2[i] = (rhs[i] - off[i] * upper) / diag[i];
    }
    // locate the interval
    let mut j = n - 2;
    for i in 0..n - 1 {
        if x <= xs[i + 1] {
            j = i;
            break;
        }
    }
    let h = xs[j + 1] - xs[j];
    let a = (xs[j + 1] - x) / h;
    let b = (x - xs[j]) / h;
    a * ys[j]
        + b * ys[j + 1]
        + ((a * a * a - a) * m2[j] + (b * b * b - b) * m2[j + 1]) * h * h / 6.0
}

/// Apply a storage policy to a trend: full storage returns it unchanged,
/// the knot policy subsamples each site trajectory at evenly spaced knots
/// and rebuilds it by natural cubic interpolation.
pub fn degrade_trend(
    trend: &TrendField,
    policy: &TrendPolicy,
) -> Result<TrendField, SimulationError> {
    match policy {
        TrendPolicy::StoreFull => Ok(trend.clone()),
        TrendPolicy::SplineKnots(knots) => {
            let (m, n, k) = trend.values.dim();
            if *knots < 2 {
                return Err(SimulationError::TooFewKnots);
            }
            if *knots >= k {
                return Ok(trend.clone());
            }
            let xs: Vec<f64> = (0..*knots)
                .map(|i| (i as f64 * (k - 1) as f64 / (*knots - 1) as f64).round())
                .collect();
            let mut values = Array3::<f64>::zeros((m, n, k));
            for mi in 0..m {
                for ni in 0..n {
                    let ys: Vec<f64> =
                        xs.iter().map(|&x| trend.values[[mi, ni, x as usize]]).collect();
                    for ki in 0..k {
                        values[[mi, ni, ki]] = natural_cubic_eval(&xs, &ys, ki as f64);
                    }
                }
            }
            Ok(TrendField { values, lambda: trend.lambda })
        }
    }
}

/// A generated surrogate ensemble, reproducible from the model, trend, seed
/// and run count.
#[derive(Debug, Clone)]
pub struct SurrogateEnsemble {
    pub values: Array4<f64>,
    pub seed: u64,
}

const STREAM_SPATIAL: u64 = 1;

fn substream(kind: u64, realization: usize, band: usize) -> u64 {
    (kind << 56) | (((realization as u64) & 0xffff_ffff) << 16) | ((band as u64) & 0xffff)
}

/// Synthesis context shared by all realizations.
struct SpatialGenerator {
    n_lat: usize,
    n_lon: usize,
    variant: Variant,
    /// Per band: 2N × N mixing matrix (latents → longitudes), absent for
    /// the independence variant.
    mixers: Vec<Array2<f64>>,
    /// AR(1) step coefficient into each band and the matching innovation
    /// standard deviation, per wavenumber.
    step_phi: Vec<Vec<f64>>,
    step_sd: Vec<Vec<f64>>,
}

impl SpatialGenerator {
    fn new(model: &FittedModel) -> Result<Self, SimulationError> {
        let n_lat = model.grid.n_lat();
        let n_lon = model.grid.n_lon();
        let mut mixers = Vec::new();
        let mut step_phi = vec![vec![0.0; n_lon]; n_lat];
        let mut step_sd = vec![vec![1.0; n_lon]; n_lat];
        if model.variant != Variant::Ind {
            for m in 0..n_lat {
                let transfer = model.transfer(m)?;
                let f = transfer.values();
                let mut mix = Array2::<f64>::zeros((2 * n_lon, n_lon));
                for nn in 0..n_lon {
                    let lon = model.grid.longitude(nn);
                    for c in 0..n_lon {
                        let angle = lon * c as f64;
                        mix[[c, nn]] = f[[nn, c]] * angle.cos();
                        mix[[n_lon + c, nn]] = f[[nn, c]] * angle.sin();
                    }
                }
                mixers.push(mix);
                if m > 0 {
                    for c in 0..n_lon {
                        let phi = model.coherence.step_value(m - 1, c, n_lon);
                        step_phi[m][c] = phi;
                        step_sd[m][c] = (1.0 - phi * phi).sqrt();
                    }
                }
            }
        }
        Ok(Self { n_lat, n_lon, variant: model.variant, mixers, step_phi, step_sd })
    }

    /// Spatial innovation slices for one realization: (band, lon, slice).
    fn realization(&self, r: usize, n_slices: usize, seed: u64) -> Array3<f64> {
        let n = self.n_lon;
        let mut out = Array3::<f64>::zeros((self.n_lat, n, n_slices));
        if self.variant == Variant::Ind {
            for m in 0..self.n_lat {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(substream(STREAM_SPATIAL, r, m));
                for k in 0..n_slices {
                    for nn in 0..n {
                        out[[m, nn, k]] = StandardNormal.sample(&mut rng);
                    }
                }
            }
            return out;
        }
        // latent chain across bands, per wavenumber, cosine and sine halves
        let mut latent = Array2::<f64>::zeros((n_slices, 2 * n));
        for m in 0..self.n_lat {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(substream(STREAM_SPATIAL, r, m));
            for k in 0..n_slices {
                for c in 0..n {
                    let ea: f64 = StandardNormal.sample(&mut rng);
                    let eb: f64 = StandardNormal.sample(&mut rng);
                    if m == 0 {
                        latent[[k, c]] = ea;
                        latent[[k, n + c]] = eb;
                    } else {
                        let phi = self.step_phi[m][c];
                        let sd = self.step_sd[m][c];
                        latent[[k, c]] = phi * latent[[k, c]] + sd * ea;
                        latent[[k, n + c]] = phi * latent[[k, n + c]] + sd * eb;
                    }
                }
            }
            let mixed = latent.dot(&self.mixers[m]); // (n_slices, n)
            for k in 0..n_slices {
                for nn in 0..n {
                    out[[m, nn, k]] = mixed[[k, nn]];
                }
            }
        }
        out
    }
}

/// Simulate unit-scale spatial innovation fields from the model's spectral
/// and coherence parameters: shape (band, lon, slice, realization).
pub fn simulate_innovations(
    model: &FittedModel,
    n_slices: usize,
    n_real: usize,
    seed: u64,
) -> Result<Array4<f64>, SimulationError> {
    let generator = SpatialGenerator::new(model)?;
    let slabs: Vec<Array3<f64>> = (0..n_real)
        .into_par_iter()
        .map(|r| generator.realization(r, n_slices, seed))
        .collect();
    let mut out = Array4::<f64>::zeros((generator.n_lat, generator.n_lon, n_slices, n_real));
    for (r, slab) in slabs.iter().enumerate() {
        out.index_axis_mut(Axis(3), r).assign(slab);
    }
    Ok(out)
}

/// Generate surrogate ensemble runs: spatial innovations, AR(2) coloring
/// with a discarded burn-in, plus the trend. Realizations are generated in
/// parallel from independent substreams.
pub fn simulate_surrogates(
    model: &FittedModel,
    trend: &TrendField,
    n_runs: usize,
    seed: u64,
) -> Result<SurrogateEnsemble, SimulationError> {
    if n_runs < 1 {
        return Err(SimulationError::RunsRequired);
    }
    let grid = &model.grid;
    let (m, n, k) = (grid.n_lat(), grid.n_lon(), grid.n_time());
    if trend.values.dim() != (m, n, k) {
        return Err(SimulationError::TrendShape {
            expected: (m, n, k),
            found: trend.values.dim(),
        });
    }
    for mi in 0..m {
        for ni in 0..n {
            if !model.temporal.site(mi, ni).is_stationary() {
                return Err(SimulationError::NonStationary { band: mi, lon: ni });
            }
        }
    }
    let generator = SpatialGenerator::new(model)?;
    let n_slices = k + COLORIZE_BURN_IN;

    let slabs: Vec<Array3<f64>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let innov = generator.realization(r, n_slices, seed);
            let mut slab = Array3::<f64>::zeros((m, n, k));
            for mi in 0..m {
                for ni in 0..n {
                    let site = model.temporal.site(mi, ni);
                    let mut prev1 = 0.0;
                    let mut prev2 = 0.0;
                    for ki in 0..n_slices {
                        let eps = site.phi1 * prev1
                            + site.phi2 * prev2
                            + site.sigma * innov[[mi, ni, ki]];
                        prev2 = prev1;
                        prev1 = eps;
                        if ki >= COLORIZE_BURN_IN {
                            let kk = ki - COLORIZE_BURN_IN;
                            slab[[mi, ni, kk]] = trend.values[[mi, ni, kk]] + eps;
                        }
                    }
                }
            }
            slab
        })
        .collect();

    let mut values = Array4::<f64>::zeros((m, n, k, n_runs));
    for (r, slab) in slabs.iter().enumerate() {
        values.index_axis_mut(Axis(3), r).assign(slab);
    }
    Ok(SurrogateEnsemble { values, seed })
}

/// Stationary variance of the surrogate process at every site: the AR(2)
/// closed form driven by the site's innovation standard deviation scaled by
/// the band covariance diagonal.
pub fn implied_site_variances(model: &FittedModel) -> Result<Array2<f64>, SimulationError> {
    let (m, n) = (model.grid.n_lat(), model.grid.n_lon());
    let mut out = Array2::<f64>::zeros((m, n));
    for mi in 0..m {
        let diag: Vec<f64> = if model.variant == Variant::Ind {
            vec![1.0; n]
        } else {
            let cov = band_covariance(&model.transfer(mi)?);
            (0..n).map(|ni| cov[[ni, ni]]).collect()
        };
        for ni in 0..n {
            let site = model.temporal.site(mi, ni);
            out[[mi, ni]] = site.stationary_variance(site.sigma * diag[ni].sqrt());
        }
    }
    Ok(out)
}

/// Itemized storage accounting of a fitted model against the raw ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionReport {
    pub spatial_params: usize,
    pub temporal_params: usize,
    pub trend_values: usize,
    pub data_values: usize,
    /// (spatial + temporal) / data.
    pub parameter_ratio: f64,
    /// (spatial + temporal + trend) / data.
    pub total_ratio: f64,
}

/// Count stored numbers for a model of the given dimensions: spatial
/// parameters by variant, three temporal parameters per site, and the trend
/// under the chosen storage policy, against M·N·K·R raw values.
pub fn compression_report(
    variant: Variant,
    tropical_band_count: usize,
    dims: (usize, usize, usize, usize),
    policy: &TrendPolicy,
) -> CompressionReport {
    let (m, n, k, r) = dims;
    let spatial = crate::reml::parameter_count(variant, m, tropical_band_count);
    let temporal = 3 * m * n;
    let trend = match policy {
        TrendPolicy::StoreFull => m * n * k,
        TrendPolicy::SplineKnots(knots) => m * n * (*knots).min(k),
    };
    let data = m * n * k * r;
    CompressionReport {
        spatial_params: spatial,
        temporal_params: temporal,
        trend_values: trend,
        data_values: data,
        parameter_ratio: (spatial + temporal) as f64 / data as f64,
        total_ratio: (spatial + temporal + trend) as f64 / data as f64,
    }
}

/// Convenience wrapper taking the dimensions from a fitted model.
pub fn compression_report_for(model: &FittedModel, policy: &TrendPolicy) -> CompressionReport {
    compression_report(
        model.variant,
        model.tropical_band_count(),
        model.grid.shape(),
        policy,
    )
}
