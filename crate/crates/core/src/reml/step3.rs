//! Step 3: latitudinal coherence, with the temporal and longitudinal
//! parameters held fixed.
//!
//! Every adjacent band pair is first fit independently (parallel over
//! pairs). The stationary mode then maximizes the full multi-band
//! likelihood over a single global (ξ, τ); the nonstationary mode plugs the
//! pairwise estimates in for tropical transitions and maximizes over the
//! shared extra-tropical pair. Under axial symmetry the objective
//! factorizes over wavenumbers; otherwise the stacked spatial covariance is
//! factored densely.

use super::likelihood::{
    assemble_full_covariance, axial_spectrum, cross_power_matrix, multiband_circulant_terms,
    pair_index, scale_columns, synthesis_matrix, InnovationStats, NegloglikParts,
};
use super::{FitConfig, FitError, Variant};
use crate::coherence::{CoherencePair, LatitudeCoherenceProfile};
use crate::grid::{LandMask, SphereGrid};
use crate::linalg::Cholesky;
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::spectral::evolutionary_transfer;
use crate::temporal::{InnovationField, TemporalParams};
use ndarray::{s, Array2};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Fitted coherence profile with the pairwise stage estimates and the full
/// negative loglikelihood at the final parameters.
#[derive(Debug, Clone)]
pub struct Step3Result {
    pub profile: LatitudeCoherenceProfile,
    /// Adjacent-pair estimates, entry `m` for the transition `m → m + 1`.
    pub pairwise: Vec<CoherencePair>,
    /// Full negative restricted loglikelihood at the fitted model.
    pub negloglik: f64,
    pub warnings: Vec<String>,
}

const XI_BOUNDARY: f64 = 1.0 - 1e-6;

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t.clamp(-30.0, 30.0)).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

fn pair_from_theta(t: &[f64]) -> Option<CoherencePair> {
    if t[1].abs() > 40.0 {
        return None;
    }
    CoherencePair::new(sigmoid(t[0]), t[1].exp()).ok()
}

fn theta_from_pair(p: &CoherencePair) -> [f64; 2] {
    [logit(p.xi), p.tau.max(1e-9).ln()]
}

fn logdet_weight(k_eff: usize, n_real: usize) -> f64 {
    (n_real as f64 - 1.0) / 2.0 * k_eff as f64
}

/// Spatial structures shared by the objectives; the variant decides which
/// branch is populated.
struct SpatialContext {
    /// Axial path: per-band spectra and the cross-spectral scatter.
    spectra: Option<Vec<Vec<f64>>>,
    cross_power: Option<Array2<f64>>,
    /// Dense path: per-band synthesis matrices and the stacked scatter.
    gs: Option<Vec<Array2<f64>>>,
    full_scatter: Option<Array2<f64>>,
}

impl SpatialContext {
    fn axial(&self) -> bool {
        self.spectra.is_some()
    }
}

fn full_terms(
    ctx: &SpatialContext,
    stats: &InnovationStats,
    profile: &LatitudeCoherenceProfile,
) -> Option<(f64, f64)> {
    if ctx.axial() {
        multiband_circulant_terms(
            ctx.spectra.as_ref().unwrap(),
            profile,
            ctx.cross_power.as_ref().unwrap(),
            &stats.spec_power,
            stats.n_lon,
            (0, stats.n_lat),
        )
    } else {
        let gs = ctx.gs.as_ref().unwrap();
        let cov = assemble_full_covariance(gs, profile, stats.n_lon);
        let chol = Cholesky::new(cov.view()).ok()?;
        let quad = chol.trace_solve(ctx.full_scatter.as_ref().unwrap().view());
        Some((chol.log_det(), quad))
    }
}

/// Two-band negative loglikelihood terms (log-determinant and quadratic
/// form) for the pair `(m, m+1)` at a candidate coherence pair.
fn pair_terms(
    ctx: &SpatialContext,
    stats: &InnovationStats,
    m: usize,
    pair: &CoherencePair,
    pair_scatter: Option<&Array2<f64>>,
) -> Option<(f64, f64)> {
    let n = stats.n_lon;
    if ctx.axial() {
        let spectra = ctx.spectra.as_ref().unwrap();
        let nf = n as f64;
        let mut logdet = 0.0;
        let mut quad = 0.0;
        let cross = ctx.cross_power.as_ref().unwrap();
        for c in 0..n {
            let sa = nf * spectra[m][c];
            let sb = nf * spectra[m + 1][c];
            let phi = pair.value(c, n);
            let b = (sa * sb).sqrt() * phi;
            let det = sa * sb - b * b;
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            logdet += det.ln();
            let p_aa = stats.spec_power[m][c];
            let p_bb = stats.spec_power[m + 1][c];
            let p_ab = cross[[pair_index(m, m + 1), c]];
            quad += (sb * p_aa - 2.0 * b * p_ab + sa * p_bb) / det / nf;
        }
        Some((logdet, quad))
    } else {
        let gs = ctx.gs.as_ref().unwrap();
        let phi: Vec<f64> = (0..n).map(|c| pair.value(c, n)).collect();
        let mut cov = Array2::<f64>::zeros((2 * n, 2 * n));
        cov.slice_mut(s![0..n, 0..n]).assign(&gs[m].dot(&gs[m].t()));
        cov.slice_mut(s![n..2 * n, n..2 * n]).assign(&gs[m + 1].dot(&gs[m + 1].t()));
        let x = scale_columns(&gs[m], &phi).dot(&gs[m + 1].t());
        cov.slice_mut(s![0..n, n..2 * n]).assign(&x);
        cov.slice_mut(s![n..2 * n, 0..n]).assign(&x.t().to_owned());
        let chol = Cholesky::new(cov.view()).ok()?;
        let quad = chol.trace_solve(pair_scatter.expect("dense pair needs a scatter").view());
        Some((chol.log_det(), quad))
    }
}

fn coherence_starts(extra: &[CoherencePair], n_starts: usize) -> Vec<[f64; 2]> {
    let mut starts: Vec<[f64; 2]> = extra.iter().map(theta_from_pair).collect();
    for (xi, tau) in [(0.5f64, 0.5f64), (0.85, 0.25), (0.2, 1.0)] {
        if starts.len() >= n_starts.max(extra.len() + 1) {
            break;
        }
        starts.push([logit(xi), tau.ln()]);
    }
    starts
}

fn minimize_pair(
    objective: impl Fn(&CoherencePair) -> f64,
    starts: &[[f64; 2]],
    config: &FitConfig,
) -> (CoherencePair, f64, bool) {
    let opts = SimplexOptions { f_tol: config.f_tol, max_iter: config.max_iter, init_step: 0.7 };
    let wrapped = |t: &[f64]| match pair_from_theta(t) {
        Some(p) => objective(&p),
        None => f64::INFINITY,
    };
    let mut best: Option<(crate::optimize::SimplexResult, CoherencePair)> = None;
    for start in starts {
        let res = nelder_mead(wrapped, start, &opts);
        if let Some(p) = pair_from_theta(&res.x) {
            if best.as_ref().is_none_or(|(b, _)| res.f < b.f) {
                best = Some((res, p));
            }
        }
    }
    let (res, pair) = best.expect("at least one feasible start");
    (pair, res.f, res.converged)
}

/// Median of the pairwise estimates, a robust start for the global stage.
fn median_pair(pairs: &[CoherencePair]) -> Option<CoherencePair> {
    if pairs.is_empty() {
        return None;
    }
    let mut xis: Vec<f64> = pairs.iter().map(|p| p.xi).collect();
    let mut taus: Vec<f64> = pairs.iter().map(|p| p.tau).collect();
    xis.sort_by(f64::total_cmp);
    taus.sort_by(f64::total_cmp);
    let mid = pairs.len() / 2;
    CoherencePair::new(xis[mid].min(XI_BOUNDARY), taus[mid]).ok()
}

/// Fit the latitudinal coherence given fitted longitudinal parameters.
pub fn fit_step3_coherence(
    innov: &InnovationField,
    bands: &[crate::spectral::BandSpectralParams],
    mask: &LandMask,
    temporal: &TemporalParams,
    grid: &SphereGrid,
    config: &FitConfig,
) -> Result<Step3Result, FitError> {
    let stats = InnovationStats::new(innov);
    fit_step3_from_stats(&stats, bands, mask, temporal, grid, config)
}

pub(crate) fn fit_step3_from_stats(
    stats: &InnovationStats,
    bands: &[crate::spectral::BandSpectralParams],
    mask: &LandMask,
    temporal: &TemporalParams,
    grid: &SphereGrid,
    config: &FitConfig,
) -> Result<Step3Result, FitError> {
    let n_lat = stats.n_lat;
    let n_lon = stats.n_lon;
    let mut warnings = Vec::new();

    let axial_path = config.variant == Variant::Ax;
    let ctx = if axial_path {
        if let Some(bad) = bands.iter().position(|b| !b.is_axial()) {
            return Err(FitError::VariantMismatch(format!(
                "band {bad} violates the axial-symmetry constraint"
            )));
        }
        SpatialContext {
            spectra: Some(bands.iter().map(|b| axial_spectrum(&b.land, n_lon)).collect()),
            cross_power: Some(cross_power_matrix(stats, 0, n_lat)),
            gs: None,
            full_scatter: None,
        }
    } else {
        let gs: Vec<Array2<f64>> = bands
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let transfer = evolutionary_transfer(b, mask.row(m), n_lon)?;
                Ok::<_, FitError>(synthesis_matrix(&transfer, &stats.trig))
            })
            .collect::<Result<_, _>>()?;
        // the dense path carries synthesis matrices and the stacked scatter
        SpatialContext {
            spectra: None,
            cross_power: None,
            gs: Some(gs),
            full_scatter: Some(stats.stacked_scatter(0, n_lat)),
        }
    };

    let w = logdet_weight(stats.k_eff, stats.n_real);

    // -- pairwise stage, parallel over adjacent pairs --------------------
    let pair_results: Vec<(CoherencePair, bool, bool)> = (0..n_lat.saturating_sub(1))
        .into_par_iter()
        .map(|m| {
            let pair_scatter =
                if ctx.axial() { None } else { Some(stats.stacked_scatter(m, 2)) };
            let objective = |p: &CoherencePair| match pair_terms(
                &ctx,
                stats,
                m,
                p,
                pair_scatter.as_ref(),
            ) {
                Some((logdet, quad)) => w * logdet + 0.5 * quad,
                None => f64::INFINITY,
            };
            let starts = coherence_starts(&[], config.n_starts);
            let (mut pair, _, converged) = minimize_pair(objective, &starts, config);
            let clamped = pair.xi > XI_BOUNDARY;
            if clamped {
                pair = CoherencePair::new(XI_BOUNDARY, pair.tau).expect("boundary pair valid");
            }
            (pair, converged, clamped)
        })
        .collect();

    let mut pairwise = Vec::with_capacity(pair_results.len());
    for (m, (pair, converged, clamped)) in pair_results.iter().enumerate() {
        if !converged {
            warnings.push(format!("pair ({m}, {}): coherence fit hit the iteration cap", m + 1));
        }
        if *clamped {
            warnings.push(format!(
                "pair ({m}, {}): coherence hit the xi boundary and was clamped",
                m + 1
            ));
        }
        pairwise.push(*pair);
    }

    // -- global stage -----------------------------------------------------
    let full_obj = |profile: &LatitudeCoherenceProfile| match full_terms(&ctx, stats, profile) {
        Some((logdet, quad)) => w * logdet + 0.5 * quad,
        None => f64::INFINITY,
    };

    let mut global_starts: Vec<CoherencePair> = Vec::new();
    if let Some(med) = median_pair(&pairwise) {
        global_starts.push(med);
    }

    let (profile, converged) = if n_lat < 2 {
        (LatitudeCoherenceProfile::stationary(CoherencePair::independent()), true)
    } else if config.variant == Variant::EvNst {
        let tropical: BTreeMap<usize, CoherencePair> = pairwise
            .iter()
            .enumerate()
            .filter(|(m, _)| grid.latitude_deg(*m).abs() < config.tropic_bound_deg)
            .map(|(m, p)| (m, *p))
            .collect();
        // warm-start chain: fit the stationary profile first, then the
        // extra-tropical pair with the tropical transitions plugged in
        let starts = coherence_starts(&global_starts, config.n_starts);
        let (stationary_pair, _, _) = minimize_pair(
            |p| full_obj(&LatitudeCoherenceProfile::stationary(*p)),
            &starts,
            config,
        );
        let nst_starts = coherence_starts(
            &[stationary_pair].iter().chain(global_starts.iter()).copied().collect::<Vec<_>>(),
            config.n_starts,
        );
        let (global, _, converged) = minimize_pair(
            |p| {
                full_obj(&LatitudeCoherenceProfile::nonstationary(
                    *p,
                    tropical.clone(),
                    config.tropic_bound_deg,
                ))
            },
            &nst_starts,
            config,
        );
        (
            LatitudeCoherenceProfile::nonstationary(
                global,
                tropical,
                config.tropic_bound_deg,
            ),
            converged,
        )
    } else {
        let starts = coherence_starts(&global_starts, config.n_starts);
        let (global, _, converged) = minimize_pair(
            |p| full_obj(&LatitudeCoherenceProfile::stationary(*p)),
            &starts,
            config,
        );
        (LatitudeCoherenceProfile::stationary(global), converged)
    };
    if !converged {
        warnings.push("global coherence fit hit the iteration cap".into());
    }

    let (logdet, quad) = full_terms(&ctx, stats, &profile).ok_or_else(|| {
        FitError::NonPositiveDefinite { block: "full spatial covariance".into() }
    })?;
    let negloglik = NegloglikParts {
        spatial_logdet: logdet,
        quad,
        log_sigma_sum: temporal.log_sigma_sum(),
        dim: n_lat * n_lon,
        k_eff: stats.k_eff,
        n_real: stats.n_real,
    }
    .total();

    Ok(Step3Result { profile, pairwise, negloglik, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_transform_round_trips() {
        let p = CoherencePair::new(0.73, 0.41).unwrap();
        let t = theta_from_pair(&p);
        let back = pair_from_theta(&t).unwrap();
        assert!((back.xi - p.xi).abs() < 1e-9);
        assert!((back.tau - p.tau).abs() < 1e-9);
    }

    #[test]
    fn median_pair_is_componentwise() {
        let pairs = vec![
            CoherencePair::new(0.2, 0.9).unwrap(),
            CoherencePair::new(0.5, 0.1).unwrap(),
            CoherencePair::new(0.8, 0.4).unwrap(),
        ];
        let med = median_pair(&pairs).unwrap();
        assert!((med.xi - 0.5).abs() < 1e-12);
        assert!((med.tau - 0.4).abs() < 1e-12);
        assert!(median_pair(&[]).is_none());
    }
}
