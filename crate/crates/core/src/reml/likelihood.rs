//! Restricted-likelihood evaluators for the conditional approximations.
//!
//! Every evaluation reduces to the same shape: with `R` anomaly vectors per
//! time slice, spatial covariance `C` per slice and per-site innovation
//! standard deviations on the diagonal of `S`, the negative restricted
//! loglikelihood of the whitened innovations is
//!
//! ```text
//! K_eff·d·(R−1)/2·log 2π + (R−1)/2·K_eff·(log|C| + 2 Σ log σ)
//!   + K_eff·d/2·log R + ½ Σ_{r,k} hᵀ C⁻¹ h
//! ```
//!
//! Under the band-independence approximation `C` is block-diagonal over
//! bands and the terms decompose into band sums. Under axial symmetry each
//! block is circulant, the discrete Fourier basis diagonalizes it, and the
//! whole evaluation factorizes over wavenumbers.

use crate::coherence::LatitudeCoherenceProfile;
use crate::linalg::Cholesky;
use crate::spectral::{matern_like_spectrum, MaternSpectrumParams, TransferFunction};
use crate::temporal::InnovationField;
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use std::f64::consts::PI;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Decomposed negative restricted loglikelihood, kept apart for tests and
/// reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegloglikParts {
    /// Spatial log-determinant per time slice, Σ over blocks of log|C|.
    pub spatial_logdet: f64,
    /// Total quadratic form Σ_{r,k} hᵀ C⁻¹ h.
    pub quad: f64,
    /// Σ log σ over all sites in the evaluated blocks.
    pub log_sigma_sum: f64,
    /// Spatial dimension of the evaluated blocks.
    pub dim: usize,
    pub k_eff: usize,
    pub n_real: usize,
}

impl NegloglikParts {
    pub fn total(&self) -> f64 {
        let d = self.dim as f64;
        let ke = self.k_eff as f64;
        let r = self.n_real as f64;
        ke * d * (r - 1.0) / 2.0 * LN_2PI
            + (r - 1.0) / 2.0 * ke * (self.spatial_logdet + 2.0 * self.log_sigma_sum)
            + ke * d / 2.0 * r.ln()
            + 0.5 * self.quad
    }
}

/// Cosine/sine tables on the longitude circle: entry `[n][c]` is
/// `cos(2πnc/N)` / `sin(2πnc/N)`.
#[derive(Debug, Clone)]
pub(crate) struct TrigTables {
    pub cos: Array2<f64>,
    pub sin: Array2<f64>,
}

impl TrigTables {
    pub fn new(n_lon: usize) -> Self {
        let mut cos = Array2::<f64>::zeros((n_lon, n_lon));
        let mut sin = Array2::<f64>::zeros((n_lon, n_lon));
        for n in 0..n_lon {
            for c in 0..n_lon {
                let angle = 2.0 * PI * ((n * c) % n_lon) as f64 / n_lon as f64;
                cos[[n, c]] = angle.cos();
                sin[[n, c]] = angle.sin();
            }
        }
        Self { cos, sin }
    }
}

/// Sufficient statistics of an innovation field for the spatial likelihoods:
/// per-band data matrices, scatter matrices, and discrete Fourier
/// coefficients.
#[derive(Debug)]
pub(crate) struct InnovationStats {
    pub n_lat: usize,
    pub n_lon: usize,
    pub k_eff: usize,
    pub n_real: usize,
    /// Per band: N × (K_eff·R) matrix with one innovation vector per column.
    pub rows: Vec<Array2<f64>>,
    /// Per band: N × N scatter Σ h hᵀ.
    pub scatter: Vec<Array2<f64>>,
    /// Per band: (K_eff·R) × N real part of the DFT coefficients.
    pub dft_re: Vec<Array2<f64>>,
    /// Per band: (K_eff·R) × N imaginary part of the DFT coefficients.
    pub dft_im: Vec<Array2<f64>>,
    /// Per band: spectral power P(c) = Σ |h̃(c)|².
    pub spec_power: Vec<Vec<f64>>,
    pub trig: TrigTables,
}

impl InnovationStats {
    pub fn new(innov: &InnovationField) -> Self {
        let (n_lat, n_lon, k_eff, n_real) = innov.values().dim();
        let trig = TrigTables::new(n_lon);
        let n_vec = k_eff * n_real;
        let values = innov.values();

        let per_band: Vec<_> = (0..n_lat)
            .into_par_iter()
            .map(|m| {
                let mut x = Array2::<f64>::zeros((n_lon, n_vec));
                for n in 0..n_lon {
                    for k in 0..k_eff {
                        for r in 0..n_real {
                            x[[n, k * n_real + r]] = values[[m, n, k, r]];
                        }
                    }
                }
                let scatter = x.dot(&x.t());
                let xt = x.t();
                let re = xt.dot(&trig.cos);
                let im = xt.dot(&trig.sin);
                let mut power = vec![0.0; n_lon];
                for v in 0..n_vec {
                    for c in 0..n_lon {
                        power[c] += re[[v, c]] * re[[v, c]] + im[[v, c]] * im[[v, c]];
                    }
                }
                (x, scatter, re, im, power)
            })
            .collect();

        let mut rows = Vec::with_capacity(n_lat);
        let mut scatter = Vec::with_capacity(n_lat);
        let mut dft_re = Vec::with_capacity(n_lat);
        let mut dft_im = Vec::with_capacity(n_lat);
        let mut spec_power = Vec::with_capacity(n_lat);
        for (x, sc, re, im, p) in per_band {
            rows.push(x);
            scatter.push(sc);
            dft_re.push(re);
            dft_im.push(im);
            spec_power.push(p);
        }
        Self { n_lat, n_lon, k_eff, n_real, rows, scatter, dft_re, dft_im, spec_power, trig }
    }

    pub fn n_vectors(&self) -> usize {
        self.k_eff * self.n_real
    }

    /// Σ h² over one band (quadratic form against the identity).
    pub fn band_sum_sq(&self, m: usize) -> f64 {
        self.scatter[m].diag().sum()
    }

    /// Real part of the cross-spectral scatter between two bands:
    /// `Σ_v Re{h̃_a(c) conj(h̃_b(c))}` for every wavenumber.
    pub fn cross_spec_power(&self, a: usize, b: usize) -> Vec<f64> {
        let n_vec = self.n_vectors();
        let mut out = vec![0.0; self.n_lon];
        let (ra, ia) = (&self.dft_re[a], &self.dft_im[a]);
        let (rb, ib) = (&self.dft_re[b], &self.dft_im[b]);
        for v in 0..n_vec {
            for c in 0..self.n_lon {
                out[c] += ra[[v, c]] * rb[[v, c]] + ia[[v, c]] * ib[[v, c]];
            }
        }
        out
    }

    /// Stacked scatter over a contiguous band range (dimension `len·N`).
    pub fn stacked_scatter(&self, start: usize, len: usize) -> Array2<f64> {
        let n = self.n_lon;
        let mut out = Array2::<f64>::zeros((len * n, len * n));
        for a in 0..len {
            for b in a..len {
                let block = if a == b {
                    self.scatter[start + a].clone()
                } else {
                    self.rows[start + a].dot(&self.rows[start + b].t())
                };
                out.slice_mut(s![a * n..(a + 1) * n, b * n..(b + 1) * n]).assign(&block);
                if a != b {
                    out.slice_mut(s![b * n..(b + 1) * n, a * n..(a + 1) * n])
                        .assign(&block.t().to_owned());
                }
            }
        }
        out
    }
}

/// Band-weighted trigonometric synthesis matrix `G` (N × 2N): columns
/// `c` and `N + c` hold `F[n][c]·cos(cℓ_n)` and `F[n][c]·sin(cℓ_n)`.
/// The within-band covariance is `G Gᵀ` and cross-band blocks are
/// `G_a diag(ρ(c)) G_bᵀ` with the coherence repeated over both halves.
pub(crate) fn synthesis_matrix(transfer: &TransferFunction, trig: &TrigTables) -> Array2<f64> {
    let n = transfer.n_lon();
    let f = transfer.values();
    let mut g = Array2::<f64>::zeros((n, 2 * n));
    for row in 0..n {
        for c in 0..n {
            g[[row, c]] = f[[row, c]] * trig.cos[[row, c]];
            g[[row, n + c]] = f[[row, c]] * trig.sin[[row, c]];
        }
    }
    g
}

/// Scale the latent columns of a synthesis matrix by per-wavenumber weights
/// (applied to both the cosine and sine halves).
pub(crate) fn scale_columns(g: &Array2<f64>, weights: &[f64]) -> Array2<f64> {
    let n = weights.len();
    debug_assert_eq!(g.ncols(), 2 * n);
    let mut out = g.clone();
    for c in 0..n {
        let w = weights[c];
        out.column_mut(c).mapv_inplace(|v| v * w);
        out.column_mut(n + c).mapv_inplace(|v| v * w);
    }
    out
}

/// Dense within-band evaluation: log|C| and tr(C⁻¹ S) from a Cholesky
/// factorization of the band covariance.
pub(crate) fn band_dense_terms(
    cov: ArrayView2<'_, f64>,
    scatter: ArrayView2<'_, f64>,
) -> Option<(f64, f64)> {
    let chol = Cholesky::new(cov).ok()?;
    let logdet = chol.log_det();
    let quad = chol.trace_solve(scatter);
    if logdet.is_finite() && quad.is_finite() {
        Some((logdet, quad))
    } else {
        None
    }
}

/// Circulant fast path for an axially symmetric band: eigenvalues are
/// `N·s(c)`, the quadratic form splits over the spectral powers.
pub(crate) fn band_circulant_terms(
    spectrum: &[f64],
    spec_power: &[f64],
    n_lon: usize,
) -> Option<(f64, f64)> {
    let nf = n_lon as f64;
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for c in 0..n_lon {
        let s = spectrum[c];
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        logdet += (nf * s).ln();
        quad += spec_power[c] / s;
    }
    quad /= nf * nf;
    if logdet.is_finite() && quad.is_finite() {
        Some((logdet, quad))
    } else {
        None
    }
}

/// Evaluate the axially symmetric spectrum of a band over all wavenumbers.
pub(crate) fn axial_spectrum(params: &MaternSpectrumParams, n_lon: usize) -> Vec<f64> {
    (0..n_lon).map(|c| matern_like_spectrum(c, params, n_lon)).collect()
}

/// Multi-band axially symmetric evaluation, factorized over wavenumbers:
/// per wavenumber the band vector of DFT coefficients is Gaussian with
/// covariance `N·D_f R(c) D_f` where `R(c)` is the coherence correlation
/// matrix. Returns (log|C|, quad) for the stacked bands.
pub(crate) fn multiband_circulant_terms(
    spectra: &[Vec<f64>],
    profile: &LatitudeCoherenceProfile,
    cross_power: &Array2<f64>,
    band_power: &[Vec<f64>],
    n_lon: usize,
    band_range: (usize, usize),
) -> Option<(f64, f64)> {
    let (start, len) = band_range;
    let nf = n_lon as f64;
    let per_c: Vec<Option<(f64, f64)>> = (0..n_lon)
        .into_par_iter()
        .map(|c| {
            let mut sigma = Array2::<f64>::zeros((len, len));
            for a in 0..len {
                let sa = spectra[start + a][c];
                if !(sa > 0.0) || !sa.is_finite() {
                    return None;
                }
                sigma[[a, a]] = nf * sa;
                let mut rho = 1.0;
                for b in (a + 1)..len {
                    rho *= profile.step_value(start + b - 1, c, n_lon);
                    let sb = spectra[start + b][c];
                    let v = nf * (sa * sb).sqrt() * rho;
                    sigma[[a, b]] = v;
                    sigma[[b, a]] = v;
                }
            }
            let chol = Cholesky::new(sigma.view()).ok()?;
            // cross-spectral scatter at this wavenumber
            let mut p = Array2::<f64>::zeros((len, len));
            for a in 0..len {
                p[[a, a]] = band_power[start + a][c];
                for b in (a + 1)..len {
                    let v = cross_power[[pair_index(start + a, start + b), c]];
                    p[[a, b]] = v;
                    p[[b, a]] = v;
                }
            }
            Some((chol.log_det(), chol.trace_solve(p.view()) / nf))
        })
        .collect();
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for term in per_c {
        let (l, q) = term?;
        logdet += l;
        quad += q;
    }
    Some((logdet, quad))
}

// The multiband path needs Re cross-spectra for every ordered band pair;
// callers flatten them into a matrix indexed by this triangular scheme.
pub(crate) fn pair_index(a: usize, b: usize) -> usize {
    debug_assert!(a < b);
    b * (b - 1) / 2 + a
}

/// Cross-spectral scatter for every band pair in a contiguous range, rows
/// indexed by [`pair_index`] (indices relative to `start`).
pub(crate) fn cross_power_matrix(
    stats: &InnovationStats,
    start: usize,
    len: usize,
) -> Array2<f64> {
    let n_pairs = len * len.saturating_sub(1) / 2;
    let mut out = Array2::<f64>::zeros((n_pairs, stats.n_lon));
    let pairs: Vec<(usize, usize)> =
        (0..len).flat_map(|b| (0..b).map(move |a| (a, b))).collect();
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| stats.cross_spec_power(start + a, start + b))
        .collect();
    for (&(a, b), row) in pairs.iter().zip(rows) {
        for c in 0..stats.n_lon {
            out[[pair_index(a, b), c]] = row[c];
        }
    }
    out
}

/// Stacked spatial covariance over all bands: within-band blocks `G_m G_mᵀ`
/// and cross blocks `G_a diag(ρ_ab(c)) G_bᵀ` with the coherence chain
/// products as weights.
pub(crate) fn assemble_full_covariance(
    gs: &[Array2<f64>],
    profile: &LatitudeCoherenceProfile,
    n_lon: usize,
) -> Array2<f64> {
    let m = gs.len();
    let n = n_lon;
    let mut cov = Array2::<f64>::zeros((m * n, m * n));
    for a in 0..m {
        let diag = gs[a].dot(&gs[a].t());
        cov.slice_mut(s![a * n..(a + 1) * n, a * n..(a + 1) * n]).assign(&diag);
        let mut rho = vec![1.0; n];
        for b in (a + 1)..m {
            for (c, r) in rho.iter_mut().enumerate() {
                *r *= profile.step_value(b - 1, c, n);
            }
            let scaled = scale_columns(&gs[a], &rho);
            let block = scaled.dot(&gs[b].t());
            cov.slice_mut(s![a * n..(a + 1) * n, b * n..(b + 1) * n]).assign(&block);
            cov.slice_mut(s![b * n..(b + 1) * n, a * n..(a + 1) * n])
                .assign(&block.t().to_owned());
        }
    }
    cov
}
