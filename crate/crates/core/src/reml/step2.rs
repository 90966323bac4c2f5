//! Step 2: longitudinal spectral parameters, one latitude band at a time.
//!
//! Each band maximizes its restricted loglikelihood over the Matérn-like
//! regime parameters (log scale), the taper range (logit scale) and the
//! integer boundary shift (exhaustive search). The axially symmetric
//! constrained fit runs first on the circulant fast path and warm-starts the
//! evolutionary fit, which makes the per-band loglikelihood ordering between
//! the two variants hold by construction.

use super::likelihood::{
    axial_spectrum, band_circulant_terms, band_dense_terms, synthesis_matrix, InnovationStats,
    NegloglikParts,
};
use super::{FitConfig, FitError, Variant};
use crate::grid::LandMask;
use crate::linalg::Cholesky;
use crate::optimize::{nelder_mead, SimplexOptions, SimplexResult};
use crate::spectral::{
    convolve_indicator, matern_like_spectrum, modified_indicator, taper_kernel,
    transfer_from_modulation, BandSpectralParams, MaternSpectrumParams, TaperParams,
};
use crate::temporal::{InnovationField, TemporalParams};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Fitted longitudinal parameters with the per-band loglikelihood record.
#[derive(Debug, Clone)]
pub struct Step2Result {
    pub bands: Vec<BandSpectralParams>,
    /// Negative loglikelihood per band at the fitted parameters.
    pub band_negloglik: Vec<f64>,
    /// Negative loglikelihood per band of the axially symmetric fit.
    pub band_negloglik_ax: Vec<f64>,
    pub warnings: Vec<String>,
}

const PARAM_BOUND: f64 = 40.0;

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t.clamp(-30.0, 30.0)).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn matern_from_logs(t: &[f64]) -> Option<MaternSpectrumParams> {
    if t.iter().any(|v| v.abs() > PARAM_BOUND) {
        return None;
    }
    MaternSpectrumParams::new(t[0].exp(), t[1].exp(), t[2].exp()).ok()
}

/// Weight of the logdet term: (R−1)/2 · K_eff.
fn logdet_weight(k_eff: usize, n_real: usize) -> f64 {
    (n_real as f64 - 1.0) / 2.0 * k_eff as f64
}

struct BandContext<'a> {
    stats: &'a InnovationStats,
    band: usize,
    log_sigma_row: f64,
}

impl BandContext<'_> {
    fn n_lon(&self) -> usize {
        self.stats.n_lon
    }

    fn report(&self, spatial_logdet: f64, quad: f64) -> f64 {
        NegloglikParts {
            spatial_logdet,
            quad,
            log_sigma_sum: self.log_sigma_row,
            dim: self.n_lon(),
            k_eff: self.stats.k_eff,
            n_real: self.stats.n_real,
        }
        .total()
    }
}

fn ax_objective(theta: &[f64], ctx: &BandContext<'_>) -> f64 {
    let Some(p) = matern_from_logs(theta) else {
        return f64::INFINITY;
    };
    let spectrum = axial_spectrum(&p, ctx.n_lon());
    match band_circulant_terms(&spectrum, &ctx.stats.spec_power[ctx.band], ctx.n_lon()) {
        Some((logdet, quad)) => {
            logdet_weight(ctx.stats.k_eff, ctx.stats.n_real) * logdet + 0.5 * quad
        }
        None => f64::INFINITY,
    }
}

/// Data-driven starting values: level from the mean empirical spectrum,
/// spread variants with rougher and smoother smoothness.
fn ax_starts(ctx: &BandContext<'_>, n_starts: usize) -> Vec<[f64; 3]> {
    let n = ctx.n_lon() as f64;
    let n_vec = ctx.stats.n_vectors() as f64;
    let mean_power: f64 =
        ctx.stats.spec_power[ctx.band].iter().sum::<f64>() / (ctx.n_lon() as f64);
    let mean_spec = (mean_power / (n_vec * n)).max(1e-12);
    let mut starts = Vec::new();
    for (alpha0, nu0) in [(0.5, 1.0), (0.8, 0.4), (0.3, 2.0)] {
        let p = MaternSpectrumParams::new(1.0, alpha0, nu0).expect("valid start");
        let mean_shape: f64 = (0..ctx.n_lon())
            .map(|c| matern_like_spectrum(c, &p, ctx.n_lon()))
            .sum::<f64>()
            / (ctx.n_lon() as f64);
        let phi0 = mean_spec / mean_shape;
        starts.push([phi0.ln(), alpha0.ln(), nu0.ln()]);
        if starts.len() == n_starts {
            break;
        }
    }
    starts
}

struct AxFit {
    params: MaternSpectrumParams,
    negloglik: f64,
    converged: bool,
}

fn fit_band_ax(ctx: &BandContext<'_>, config: &FitConfig) -> AxFit {
    let opts = SimplexOptions { f_tol: config.f_tol, max_iter: config.max_iter, init_step: 0.5 };
    let mut best: Option<SimplexResult> = None;
    for start in ax_starts(ctx, config.n_starts) {
        let res = nelder_mead(|t| ax_objective(t, ctx), &start, &opts);
        if best.as_ref().is_none_or(|b| res.f < b.f) {
            best = Some(res);
        }
    }
    let best = best.expect("at least one start");
    let params = matern_from_logs(&best.x).expect("optimum stays inside bounds");
    let spectrum = axial_spectrum(&params, ctx.n_lon());
    let (logdet, quad) =
        band_circulant_terms(&spectrum, &ctx.stats.spec_power[ctx.band], ctx.n_lon())
            .expect("optimum is positive definite");
    AxFit { params, negloglik: ctx.report(logdet, quad), converged: best.converged }
}

fn ev_objective(theta: &[f64], indicator: &[u8], ctx: &BandContext<'_>) -> f64 {
    let Some(land) = matern_from_logs(&theta[0..3]) else {
        return f64::INFINITY;
    };
    let Some(ocean) = matern_from_logs(&theta[3..6]) else {
        return f64::INFINITY;
    };
    let gamma = 2.0 * PI * sigmoid(theta[6]);
    let Ok(kernel) = taper_kernel(ctx.n_lon(), gamma) else {
        return f64::INFINITY;
    };
    let modulation = convolve_indicator(indicator, &kernel);
    let params = BandSpectralParams { land, ocean, taper: TaperParams::identity() };
    let transfer = transfer_from_modulation(&params, &modulation, ctx.n_lon());
    let g = synthesis_matrix(&transfer, &ctx.stats.trig);
    let cov = g.dot(&g.t());
    match band_dense_terms(cov.view(), ctx.stats.scatter[ctx.band].view()) {
        Some((logdet, quad)) => {
            logdet_weight(ctx.stats.k_eff, ctx.stats.n_real) * logdet + 0.5 * quad
        }
        None => f64::INFINITY,
    }
}

/// Starting points for the evolutionary fit. The first start copies the
/// axially symmetric solution into both regimes, which evaluates to exactly
/// the constrained optimum and guarantees the nested-model ordering.
fn ev_starts(ax: &MaternSpectrumParams, n_lon: usize, n_starts: usize) -> Vec<[f64; 7]> {
    let spacing = 2.0 * PI / n_lon as f64;
    let gamma_t = |mult: f64| logit((mult * spacing).min(PI) / (2.0 * PI));
    let base = [ax.phi.ln(), ax.alpha.ln(), ax.nu.ln()];
    let mut starts = vec![[
        base[0], base[1], base[2], base[0], base[1], base[2], gamma_t(3.0),
    ]];
    if n_starts > 1 {
        starts.push([
            base[0],
            base[1] + 0.3,
            base[2] + (0.6f64).ln(),
            base[0],
            base[1] - 0.3,
            base[2] + (1.6f64).ln(),
            gamma_t(2.0),
        ]);
    }
    if n_starts > 2 {
        starts.push([
            base[0] + (1.5f64).ln(),
            base[1] + (1.5f64).ln(),
            base[2] + (0.7f64).ln(),
            base[0] - (1.5f64).ln(),
            base[1] - (1.5f64).ln(),
            base[2] + (1.4f64).ln(),
            gamma_t(5.0),
        ]);
    }
    starts
}

struct EvFit {
    params: BandSpectralParams,
    negloglik: f64,
    converged: bool,
    annihilated: bool,
}

fn fit_band_ev(ctx: &BandContext<'_>, ax: &AxFit, config: &FitConfig, mask: &LandMask) -> EvFit {
    let row = mask.row(ctx.band);
    let opts = SimplexOptions { f_tol: config.f_tol, max_iter: config.max_iter, init_step: 0.4 };
    let starts = ev_starts(&ax.params, ctx.n_lon(), config.n_starts);

    let mut best: Option<(i64, SimplexResult)> = None;
    for g in config.g_min..=config.g_max {
        let indicator = modified_indicator(row, g);
        for start in &starts {
            let res = nelder_mead(|t| ev_objective(t, &indicator, ctx), start, &opts);
            if best.as_ref().is_none_or(|(_, b)| res.f < b.f) {
                best = Some((g, res));
            }
        }
    }
    let (g, best) = best.expect("nonempty g range");

    let land = matern_from_logs(&best.x[0..3]).expect("optimum stays inside bounds");
    let ocean = matern_from_logs(&best.x[3..6]).expect("optimum stays inside bounds");
    let gamma = 2.0 * PI * sigmoid(best.x[6]);
    let taper = TaperParams::new(g, gamma).expect("gamma inside [0, 2pi)");
    let params = BandSpectralParams { land, ocean, taper };

    let indicator = modified_indicator(row, g);
    let annihilated = indicator.iter().all(|&v| v == 0) && row.iter().any(|&v| v == 1);
    let kernel = taper_kernel(ctx.n_lon(), gamma).expect("gamma validated");
    let modulation = convolve_indicator(&indicator, &kernel);
    let transfer = transfer_from_modulation(&params, &modulation, ctx.n_lon());
    let gmat = synthesis_matrix(&transfer, &ctx.stats.trig);
    let cov = gmat.dot(&gmat.t());
    let (logdet, quad) = Cholesky::new(cov.view())
        .map(|chol| (chol.log_det(), chol.trace_solve(ctx.stats.scatter[ctx.band].view())))
        .expect("optimum is positive definite");
    EvFit { params, negloglik: ctx.report(logdet, quad), converged: best.converged, annihilated }
}

/// Fit the longitudinal parameters of every band, parallel over bands.
pub fn fit_step2(
    innov: &InnovationField,
    mask: &LandMask,
    temporal: &TemporalParams,
    config: &FitConfig,
) -> Result<Step2Result, FitError> {
    let stats = InnovationStats::new(innov);
    fit_step2_from_stats(&stats, mask, temporal, config)
}

pub(crate) fn fit_step2_from_stats(
    stats: &InnovationStats,
    mask: &LandMask,
    temporal: &TemporalParams,
    config: &FitConfig,
) -> Result<Step2Result, FitError> {
    config.validate(stats.n_lon)?;
    if config.variant == Variant::Ind {
        return Err(FitError::VariantMismatch(
            "the independence variant has no longitudinal parameters".into(),
        ));
    }
    let n_lat = stats.n_lat;
    let per_band: Vec<(BandSpectralParams, f64, f64, Vec<String>)> = (0..n_lat)
        .into_par_iter()
        .map(|m| {
            let log_sigma_row: f64 =
                (0..stats.n_lon).map(|n| temporal.site(m, n).sigma.ln()).sum();
            let ctx = BandContext { stats, band: m, log_sigma_row };
            let ax = fit_band_ax(&ctx, config);
            let mut warnings = Vec::new();
            if !ax.converged {
                warnings.push(format!("band {m}: axially symmetric fit hit the iteration cap"));
            }
            let row = mask.row(m);
            let uniform = row.iter().all(|&v| v == 1) || row.iter().all(|&v| v == 0);
            let (params, negloglik) = match config.variant {
                Variant::Ax => (BandSpectralParams::axial(ax.params), ax.negloglik),
                _ if uniform => (BandSpectralParams::axial(ax.params), ax.negloglik),
                _ => {
                    let ev = fit_band_ev(&ctx, &ax, config, mask);
                    if !ev.converged {
                        warnings
                            .push(format!("band {m}: evolutionary fit hit the iteration cap"));
                    }
                    if ev.annihilated {
                        warnings.push(format!(
                            "band {m}: boundary shift g = {} removed all land; land weight is zero",
                            ev.params.taper.shift
                        ));
                    }
                    (ev.params, ev.negloglik)
                }
            };
            (params, negloglik, ax.negloglik, warnings)
        })
        .collect();

    let mut result = Step2Result {
        bands: Vec::with_capacity(n_lat),
        band_negloglik: Vec::with_capacity(n_lat),
        band_negloglik_ax: Vec::with_capacity(n_lat),
        warnings: Vec::new(),
    };
    for (params, negloglik, ax_negloglik, warns) in per_band {
        result.bands.push(params);
        result.band_negloglik.push(negloglik);
        result.band_negloglik_ax.push(ax_negloglik);
        result.warnings.extend(warns);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_are_inverse_pairs() {
        for p in [0.01, 0.3, 0.77, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        let p = MaternSpectrumParams::new(1.7, 0.4, 2.2).unwrap();
        let t = [p.phi.ln(), p.alpha.ln(), p.nu.ln()];
        let back = matern_from_logs(&t).unwrap();
        assert!((back.phi - p.phi).abs() < 1e-12);
        assert!((back.alpha - p.alpha).abs() < 1e-12);
        assert!((back.nu - p.nu).abs() < 1e-12);
        assert!(matern_from_logs(&[50.0, 0.0, 0.0]).is_none());
    }
}
