//! Restricted-likelihood model fitting: the three-step conditional pipeline,
//! model variants, parameter counting and information criteria.
//!
//! Step 1 estimates the per-site temporal filters assuming spatially
//! independent innovations; step 2 estimates the longitudinal spectral
//! parameters band by band assuming independence across latitude; step 3
//! estimates the latitudinal coherence with the earlier steps held fixed,
//! warm-started from independent fits of every adjacent band pair.

mod likelihood;
mod step2;
mod step3;

pub use likelihood::NegloglikParts;
pub use step2::{fit_step2, Step2Result};
pub use step3::{fit_step3_coherence, Step3Result};

use crate::coherence::{CoherencePair, LatitudeCoherenceProfile, DEFAULT_TROPIC_BOUND_DEG};
use crate::grid::{anomalies, AnomalyField, EnsembleField, GridError, LandMask, SphereGrid};
use crate::linalg::Cholesky;
use crate::spectral::{
    evolutionary_transfer, BandSpectralParams, SpectralError, TransferFunction,
};
use crate::temporal::{
    fit_ar2_site, whiten, InnovationField, TemporalError, TemporalParams,
};
use likelihood::{
    assemble_full_covariance, axial_spectrum, cross_power_matrix, InnovationStats,
};
use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("covariance block is not positive definite: {block}")]
    NonPositiveDefinite { block: String },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
}

/// Spatial model variants, ordered from most to least restrictive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Spatially independent innovations.
    Ind,
    /// Axially symmetric spectra, stationary coherence.
    Ax,
    /// Land/ocean evolutionary spectrum, stationary coherence.
    EvSt,
    /// Land/ocean evolutionary spectrum, latitudinally varying coherence in
    /// the tropics.
    EvNst,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Ind => "ind",
            Variant::Ax => "ax",
            Variant::EvSt => "ev-st",
            Variant::EvNst => "ev-nst",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ind" => Ok(Variant::Ind),
            "ax" => Ok(Variant::Ax),
            "ev-st" => Ok(Variant::EvSt),
            "ev-nst" => Ok(Variant::EvNst),
            other => Err(format!("unknown variant '{other}' (expected ind|ax|ev-st|ev-nst)")),
        }
    }
}

/// Fit configuration. Defaults follow the reference pipeline: simplex
/// function tolerance 1e-8, integer boundary-shift search over −3..3, three
/// starting points per optimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub variant: Variant,
    /// Simplex function tolerance.
    pub f_tol: f64,
    /// Simplex iteration cap per start.
    pub max_iter: usize,
    /// Inclusive search range for the integer boundary shift g.
    pub g_min: i64,
    pub g_max: i64,
    /// Number of starting points per optimization (1..=3).
    pub n_starts: usize,
    /// Tropics boundary in degrees for the nonstationary coherence.
    pub tropic_bound_deg: f64,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::EvNst,
            f_tol: 1e-8,
            max_iter: 400,
            g_min: -3,
            g_max: 3,
            n_starts: 3,
            tropic_bound_deg: DEFAULT_TROPIC_BOUND_DEG,
            threads: None,
        }
    }
}

impl FitConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, ..Default::default() }
    }

    fn validate(&self, n_lon: usize) -> Result<(), FitError> {
        if !(self.f_tol > 0.0) {
            return Err(FitError::InvalidConfig("f_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.g_min > self.g_max {
            return Err(FitError::InvalidConfig("empty g range".into()));
        }
        let half = n_lon as f64 / 2.0;
        if (self.g_min.unsigned_abs().max(self.g_max.unsigned_abs()) as f64) >= half {
            return Err(FitError::InvalidConfig(format!(
                "g range [{}, {}] exceeds |g| < N/2 = {half}",
                self.g_min, self.g_max
            )));
        }
        if self.n_starts == 0 {
            return Err(FitError::InvalidConfig("need at least one starting point".into()));
        }
        if self.tropic_bound_deg.is_nan() || self.tropic_bound_deg < 0.0 {
            return Err(FitError::InvalidConfig("tropic bound must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline step. Excluded from serialized models so
/// repeated fits produce byte-identical parameter files.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    pub step1_s: f64,
    pub step2_s: f64,
    pub step3_s: f64,
    pub total_s: f64,
}

/// Per-step likelihood values, per-band comparisons, warnings and timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Conditional negative restricted loglikelihood after step 1 (spatial
    /// independence).
    pub step1_negloglik: f64,
    /// Sum of band negative loglikelihoods at the fitted longitudinal
    /// parameters (step-2 conditional total).
    pub step2_negloglik: Option<f64>,
    /// Full negative restricted loglikelihood at the fitted model.
    pub full_negloglik: f64,
    /// Per-band negative loglikelihood of the axially symmetric warm-start
    /// fit.
    pub band_negloglik_ax: Vec<f64>,
    /// Per-band negative loglikelihood at the variant's fitted parameters.
    pub band_negloglik: Vec<f64>,
    /// Adjacent-pair coherence estimates from the two-band stage.
    pub pairwise: Vec<CoherencePair>,
    pub warnings: Vec<String>,
    /// Effective observation count M·N·(K−2)·(R−1).
    pub n_obs: usize,
    #[serde(skip, default)]
    pub timings: StepTimings,
}

/// The complete fitted parameter bundle: the compressed representation of an
/// ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub variant: Variant,
    pub grid: SphereGrid,
    pub mask: LandMask,
    pub temporal: TemporalParams,
    /// Per-band longitudinal parameters; empty for the independence variant.
    pub bands: Vec<BandSpectralParams>,
    pub coherence: LatitudeCoherenceProfile,
    pub fit_report: FitReport,
}

impl FittedModel {
    /// Transfer function of band `m` (spatial variants only).
    pub fn transfer(&self, m: usize) -> Result<TransferFunction, FitError> {
        if self.variant == Variant::Ind {
            return Err(FitError::VariantMismatch(
                "the independence variant has no spectral parameters".into(),
            ));
        }
        Ok(evolutionary_transfer(&self.bands[m], self.mask.row(m), self.grid.n_lon())?)
    }

    pub fn tropical_band_count(&self) -> usize {
        self.coherence.tropical_band_count()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self.variant, self.grid.n_lat(), self.tropical_band_count())
    }

    /// Effective observation count used by the information criterion.
    pub fn n_obs(&self) -> usize {
        let g = &self.grid;
        g.n_lat() * g.n_lon() * g.n_time_eff() * (g.n_real() - 1)
    }

    pub fn bic(&self) -> f64 {
        bic(self.fit_report.full_negloglik, self.parameter_count(), self.n_obs())
    }
}

/// Spatial parameter counts per variant, excluding the temporal parameters:
/// 0 for independence, 3M + 2 for the axially symmetric model, 8M + 2 for
/// the evolutionary spectrum with stationary coherence, plus two per
/// tropical band for the nonstationary coherence.
pub fn parameter_count(variant: Variant, n_lat: usize, tropical_band_count: usize) -> usize {
    match variant {
        Variant::Ind => 0,
        Variant::Ax => 3 * n_lat + 2,
        Variant::EvSt => 8 * n_lat + 2,
        Variant::EvNst => 8 * n_lat + 2 + 2 * tropical_band_count,
    }
}

/// Information criterion on the larger-is-better loglikelihood scale:
/// `−2·negloglik − p·log n_obs`.
pub fn bic(negloglik: f64, p: usize, n_obs: usize) -> f64 {
    -2.0 * negloglik - (p as f64) * (n_obs as f64).ln()
}

/// Step 1: per-site AR(2) fits pooled across realizations, parallel over
/// sites. The innovation standard deviations estimated from anomalies are
/// rescaled by √(R/(R−1)) so they refer to the process scale: ensemble
/// anomalies carry only (R−1)/R of the process variance, and correcting here
/// keeps the whitened innovations and every later stage on a calibrated
/// scale.
pub fn fit_step1_temporal(anoms: &AnomalyField) -> Result<TemporalParams, FitError> {
    let grid = anoms.grid();
    if grid.n_time() < 5 {
        return Err(FitError::Temporal(TemporalError::SeriesTooShort {
            need: 5,
            got: grid.n_time(),
        }));
    }
    let (m, n) = (grid.n_lat(), grid.n_lon());
    let inflation = (grid.n_real() as f64 / (grid.n_real() as f64 - 1.0)).sqrt();
    let values = anoms.values();
    let rows: Vec<Result<Vec<crate::temporal::Ar2Site>, FitError>> = (0..m)
        .into_par_iter()
        .map(|mi| {
            let mut row = Vec::with_capacity(n);
            for ni in 0..n {
                let series = values.slice(s![mi, ni, .., ..]);
                let mut site = fit_ar2_site(series).map_err(|e| match e {
                    TemporalError::ZeroVariance => {
                        FitError::Temporal(TemporalError::ZeroVarianceSite { band: mi, lon: ni })
                    }
                    other => FitError::Temporal(other),
                })?;
                site.sigma *= inflation;
                row.push(site);
            }
            Ok(row)
        })
        .collect();
    let mut sites = Vec::with_capacity(m * n);
    for row in rows {
        sites.extend(row?);
    }
    Ok(TemporalParams::new(
        ndarray::Array2::from_shape_vec((m, n), sites).expect("site count matches grid"),
    ))
}

/// Full negative restricted loglikelihood of whitened innovations under a
/// variant's spatial structure, decomposed into its parts.
pub fn negloglik_parts(
    innov: &InnovationField,
    temporal: &TemporalParams,
    bands: &[BandSpectralParams],
    mask: &LandMask,
    profile: &LatitudeCoherenceProfile,
    variant: Variant,
) -> Result<NegloglikParts, FitError> {
    let stats = InnovationStats::new(innov);
    negloglik_parts_from_stats(&stats, temporal, bands, mask, profile, variant)
}

pub(crate) fn negloglik_parts_from_stats(
    stats: &InnovationStats,
    temporal: &TemporalParams,
    bands: &[BandSpectralParams],
    mask: &LandMask,
    profile: &LatitudeCoherenceProfile,
    variant: Variant,
) -> Result<NegloglikParts, FitError> {
    let (m, n) = (stats.n_lat, stats.n_lon);
    let log_sigma_sum = temporal.log_sigma_sum();
    let base = NegloglikParts {
        spatial_logdet: 0.0,
        quad: 0.0,
        log_sigma_sum,
        dim: m * n,
        k_eff: stats.k_eff,
        n_real: stats.n_real,
    };
    match variant {
        Variant::Ind => {
            let quad: f64 = (0..m).map(|mi| stats.band_sum_sq(mi)).sum();
            Ok(NegloglikParts { quad, ..base })
        }
        Variant::Ax => {
            if bands.len() != m {
                return Err(FitError::VariantMismatch(format!(
                    "expected {m} band parameter sets, got {}",
                    bands.len()
                )));
            }
            if let Some(bad) = bands.iter().position(|b| !b.is_axial()) {
                return Err(FitError::VariantMismatch(format!(
                    "band {bad} violates the axial-symmetry constraint"
                )));
            }
            let spectra: Vec<Vec<f64>> =
                bands.iter().map(|b| axial_spectrum(&b.land, n)).collect();
            let cross = cross_power_matrix(stats, 0, m);
            let (logdet, quad) = likelihood::multiband_circulant_terms(
                &spectra,
                profile,
                &cross,
                &stats.spec_power,
                n,
                (0, m),
            )
            .ok_or_else(|| FitError::NonPositiveDefinite {
                block: "axially symmetric spectral block".into(),
            })?;
            Ok(NegloglikParts { spatial_logdet: logdet, quad, ..base })
        }
        Variant::EvSt | Variant::EvNst => {
            if bands.len() != m {
                return Err(FitError::VariantMismatch(format!(
                    "expected {m} band parameter sets, got {}",
                    bands.len()
                )));
            }
            let gs: Vec<_> = (0..m)
                .map(|mi| {
                    let transfer = evolutionary_transfer(&bands[mi], mask.row(mi), n)?;
                    Ok::<_, SpectralError>(likelihood::synthesis_matrix(&transfer, &stats.trig))
                })
                .collect::<Result<_, _>>()?;
            let cov = assemble_full_covariance(&gs, profile, n);
            let chol = Cholesky::new(cov.view()).map_err(|e| FitError::NonPositiveDefinite {
                block: format!("full spatial covariance ({e})"),
            })?;
            let scatter = stats.stacked_scatter(0, m);
            Ok(NegloglikParts {
                spatial_logdet: chol.log_det(),
                quad: chol.trace_solve(scatter.view()),
                ..base
            })
        }
    }
}

/// Full negative restricted loglikelihood (see [`negloglik_parts`]).
pub fn full_negloglik(
    innov: &InnovationField,
    temporal: &TemporalParams,
    bands: &[BandSpectralParams],
    mask: &LandMask,
    profile: &LatitudeCoherenceProfile,
    variant: Variant,
) -> Result<f64, FitError> {
    Ok(negloglik_parts(innov, temporal, bands, mask, profile, variant)?.total())
}

/// Fit the full pipeline: anomalies, temporal step, band step, coherence
/// step, with each stage conditioning on the previous estimates.
pub fn fit(
    field: &EnsembleField,
    mask: &LandMask,
    config: &FitConfig,
) -> Result<FittedModel, FitError> {
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| FitError::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| fit_inner(field, mask, config)),
        None => fit_inner(field, mask, config),
    }
}

fn fit_inner(
    field: &EnsembleField,
    mask: &LandMask,
    config: &FitConfig,
) -> Result<FittedModel, FitError> {
    let grid = field.grid();
    config.validate(grid.n_lon())?;
    if mask.n_lat() != grid.n_lat() || mask.n_lon() != grid.n_lon() {
        return Err(FitError::Grid(GridError::InvalidMask(format!(
            "mask is {}x{}, grid is {}x{}",
            mask.n_lat(),
            mask.n_lon(),
            grid.n_lat(),
            grid.n_lon()
        ))));
    }

    let t_total = Instant::now();
    let anoms = anomalies(field)?;

    let t1 = Instant::now();
    let temporal = fit_step1_temporal(&anoms)?;
    let innov = whiten(&anoms, &temporal)?;
    let stats = InnovationStats::new(&innov);
    let step1_s = t1.elapsed().as_secs_f64();

    let independent = LatitudeCoherenceProfile::stationary(CoherencePair::independent());
    let step1_negloglik = negloglik_parts_from_stats(
        &stats,
        &temporal,
        &[],
        mask,
        &independent,
        Variant::Ind,
    )?
    .total();

    let n_obs = grid.n_lat() * grid.n_lon() * grid.n_time_eff() * (grid.n_real() - 1);

    if config.variant == Variant::Ind {
        let total_s = t_total.elapsed().as_secs_f64();
        return Ok(FittedModel {
            variant: Variant::Ind,
            grid: grid.clone(),
            mask: mask.clone(),
            temporal,
            bands: Vec::new(),
            coherence: independent,
            fit_report: FitReport {
                step1_negloglik,
                step2_negloglik: None,
                full_negloglik: step1_negloglik,
                band_negloglik_ax: Vec::new(),
                band_negloglik: Vec::new(),
                pairwise: Vec::new(),
                warnings: Vec::new(),
                n_obs,
                timings: StepTimings { step1_s, step2_s: 0.0, step3_s: 0.0, total_s },
            },
        });
    }

    let t2 = Instant::now();
    let step2 = step2::fit_step2_from_stats(&stats, mask, &temporal, config)?;
    let step2_s = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let step3 =
        step3::fit_step3_from_stats(&stats, &step2.bands, mask, &temporal, grid, config)?;
    let step3_s = t3.elapsed().as_secs_f64();

    let mut warnings = step2.warnings;
    warnings.extend(step3.warnings);

    let total_s = t_total.elapsed().as_secs_f64();
    Ok(FittedModel {
        variant: config.variant,
        grid: grid.clone(),
        mask: mask.clone(),
        temporal,
        bands: step2.bands,
        coherence: step3.profile,
        fit_report: FitReport {
            step1_negloglik,
            step2_negloglik: Some(step2.band_negloglik.iter().sum()),
            full_negloglik: step3.negloglik,
            band_negloglik_ax: step2.band_negloglik_ax,
            band_negloglik: step2.band_negloglik,
            pairwise: step3.pairwise,
            warnings,
            n_obs,
            timings: StepTimings { step1_s, step2_s, step3_s, total_s },
        },
    })
}
