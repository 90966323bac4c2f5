//! Evolutionary spectrum across longitude: Matérn-like spectral regimes for
//! land and ocean, blended by a tapered land indicator, and the within-band
//! covariance the transfer function implies.
//!
//! For a latitude band with `N` longitudes the transfer function is
//!
//! ```text
//! f_n(c) = b(n)·√s_land(c) + (1 − b(n))·√s_ocean(c)
//! ```
//!
//! where `s_j(c) = φ_j / {α_j² + 4 sin²(πc/N)}^{ν_j + 1/2}` and `b` is the
//! land indicator, shifted by an integer number of grid points at each
//! land/ocean transition and smoothed by circular convolution with a
//! unit-mass cosine taper. The spectra are defined as squared moduli; the
//! transfer takes the positive square root, which makes the implied
//! covariance real with entries `Σ_c f_i(c) f_j(c) cos(c(ℓ_i − ℓ_j))`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid spectrum parameter: {0}")]
    InvalidParameter(String),
    #[error("taper range {0} outside [0, 2*pi)")]
    TaperRange(f64),
    #[error("boundary shift |{g}| must be below N/2 = {half}")]
    ShiftTooLarge { g: i64, half: f64 },
}

/// Parameters of one Matérn-like circular spectral regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternSpectrumParams {
    /// Spectrum scale φ > 0.
    pub phi: f64,
    /// Inverse range α > 0.
    pub alpha: f64,
    /// Smoothness ν > 0.
    pub nu: f64,
}

impl MaternSpectrumParams {
    pub fn new(phi: f64, alpha: f64, nu: f64) -> Result<Self, SpectralError> {
        for (name, v) in [("phi", phi), ("alpha", alpha), ("nu", nu)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SpectralError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { phi, alpha, nu })
    }
}

/// Land/ocean transition shape: boundary shift in grid points and the range
/// of the cosine taper used to smooth the shifted indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaperParams {
    /// Signed boundary shift g in grid points (dilation when positive,
    /// erosion when negative).
    pub shift: i64,
    /// Taper range γ in radians, inside [0, 2π).
    pub range: f64,
}

impl TaperParams {
    pub fn new(shift: i64, range: f64) -> Result<Self, SpectralError> {
        if !range.is_finite() || !(0.0..2.0 * PI).contains(&range) {
            return Err(SpectralError::TaperRange(range));
        }
        Ok(Self { shift, range })
    }

    pub fn identity() -> Self {
        Self { shift: 0, range: 0.0 }
    }

    pub fn validate_for(&self, n_lon: usize) -> Result<(), SpectralError> {
        let half = n_lon as f64 / 2.0;
        if (self.shift.unsigned_abs() as f64) >= half {
            return Err(SpectralError::ShiftTooLarge { g: self.shift, half });
        }
        Ok(())
    }
}

/// Longitudinal parameters of one latitude band: the two spectral regimes
/// and the transition taper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpectralParams {
    pub land: MaternSpectrumParams,
    pub ocean: MaternSpectrumParams,
    pub taper: TaperParams,
}

impl BandSpectralParams {
    /// Axially symmetric band: both regimes share `params`, taper inert.
    pub fn axial(params: MaternSpectrumParams) -> Self {
        Self { land: params, ocean: params, taper: TaperParams::identity() }
    }

    /// Whether the band satisfies the axial-symmetry constraint.
    pub fn is_axial(&self) -> bool {
        self.land == self.ocean
    }
}

/// Per-longitude transfer function values `F[n][c]`, nonnegative, with the
/// wavenumber symmetry `F[n][c] = F[n][N−c]`.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    values: Array2<f64>,
}

impl TransferFunction {
    pub fn n_lon(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn at(&self, n: usize, c: usize) -> f64 {
        self.values[[n, c]]
    }
}

/// Matérn-like circular spectrum `φ / {α² + 4 sin²(πc/N)}^{ν + 1/2}`.
pub fn matern_like_spectrum(c: usize, p: &MaternSpectrumParams, n_lon: usize) -> f64 {
    let s = (PI * c as f64 / n_lon as f64).sin();
    p.phi / (p.alpha * p.alpha + 4.0 * s * s).powf(p.nu + 0.5)
}

/// Tapered-cosine window on the circle of circumference 2π: cosine rise on
/// `[0, γ/2]`, flat one on `[γ/2, 2π − γ/2]`, cosine fall to the end. A zero
/// range degenerates to the constant one.
pub fn tukey_window(offset: f64, gamma: f64) -> Result<f64, SpectralError> {
    if !gamma.is_finite() || !(0.0..2.0 * PI).contains(&gamma) {
        return Err(SpectralError::TaperRange(gamma));
    }
    if gamma == 0.0 {
        return Ok(1.0);
    }
    let x = offset.rem_euclid(2.0 * PI);
    let half = gamma / 2.0;
    Ok(if x < half {
        0.5 * (1.0 - (2.0 * PI * x / gamma).cos())
    } else if x > 2.0 * PI - half {
        0.5 * (1.0 - (2.0 * PI * (2.0 * PI - x) / gamma).cos())
    } else {
        1.0
    })
}

/// Shift every land/ocean transition of a mask row by `g` grid points:
/// circular dilation of the land set for positive `g`, erosion for negative.
pub fn modified_indicator(mask_row: ArrayView1<'_, u8>, g: i64) -> Vec<u8> {
    let n = mask_row.len();
    if g == 0 {
        return mask_row.to_vec();
    }
    let dist = g.unsigned_abs() as usize;
    let mut out = vec![0u8; n];
    if g > 0 {
        // land plus everything within `g` of land
        for i in 0..n {
            out[i] = u8::from(circular_within(&mask_row, i, dist, 1));
        }
    } else {
        // land minus everything within |g| of ocean
        for i in 0..n {
            out[i] = u8::from(mask_row[i] == 1 && !circular_within(&mask_row, i, dist, 0));
        }
    }
    out
}

fn circular_within(row: &ArrayView1<'_, u8>, i: usize, dist: usize, value: u8) -> bool {
    let n = row.len();
    for d in 0..=dist.min(n / 2) {
        if row[(i + d) % n] == value || row[(i + n - d) % n] == value {
            return true;
        }
    }
    false
}

/// Smoothing kernel for the land indicator: cosine bump of total width γ,
/// sampled at grid lags and normalized to unit sum. The bump is the
/// complement of [`tukey_window`] near zero offset; a range below the grid
/// spacing degenerates to a discrete delta.
pub(crate) fn taper_kernel(n_lon: usize, gamma: f64) -> Result<Vec<f64>, SpectralError> {
    let mut kernel = vec![0.0; n_lon];
    kernel[0] = 1.0;
    if gamma > 0.0 {
        for (d, k) in kernel.iter_mut().enumerate().skip(1) {
            let lag = 2.0 * PI * d as f64 / n_lon as f64;
            *k = 1.0 - tukey_window(lag, gamma)?;
        }
    }
    let total: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= total;
    }
    Ok(kernel)
}

/// Land-regime weight `b(n) ∈ [0, 1]`: the shifted indicator smoothed by
/// circular convolution with the unit-sum taper kernel. All-land rows map to
/// ones, all-ocean rows to zeros.
pub fn land_modulation(
    mask_row: ArrayView1<'_, u8>,
    taper: &TaperParams,
) -> Result<Vec<f64>, SpectralError> {
    taper.validate_for(mask_row.len())?;
    let indicator = modified_indicator(mask_row, taper.shift);
    let kernel = taper_kernel(mask_row.len(), taper.range)?;
    Ok(convolve_indicator(&indicator, &kernel))
}

pub(crate) fn convolve_indicator(indicator: &[u8], kernel: &[f64]) -> Vec<f64> {
    let n = indicator.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (d, &k) in kernel.iter().enumerate() {
            if indicator[(i + n - d) % n] == 1 {
                acc += k;
            }
        }
        *o = acc.clamp(0.0, 1.0);
    }
    out
}

/// Transfer function of one band: for each longitude, the land-weight mix of
/// the positive square roots of the two regime spectra.
pub fn evolutionary_transfer(
    params: &BandSpectralParams,
    mask_row: ArrayView1<'_, u8>,
    n_lon: usize,
) -> Result<TransferFunction, SpectralError> {
    assert_eq!(mask_row.len(), n_lon, "mask row length must equal longitude count");
    let b = land_modulation(mask_row, &params.taper)?;
    Ok(transfer_from_modulation(params, &b, n_lon))
}

/// Transfer function from a precomputed land-weight row. Used by the band
/// optimizer, which holds the shifted indicator fixed while the continuous
/// parameters move.
pub(crate) fn transfer_from_modulation(
    params: &BandSpectralParams,
    modulation: &[f64],
    n_lon: usize,
) -> TransferFunction {
    let mut values = Array2::<f64>::zeros((n_lon, n_lon));
    let mut root_land = vec![0.0; n_lon];
    let mut root_ocean = vec![0.0; n_lon];
    for c in 0..n_lon {
        root_land[c] = matern_like_spectrum(c, &params.land, n_lon).sqrt();
        root_ocean[c] = matern_like_spectrum(c, &params.ocean, n_lon).sqrt();
    }
    for n in 0..n_lon {
        let b = modulation[n];
        for c in 0..n_lon {
            values[[n, c]] = b * root_land[c] + (1.0 - b) * root_ocean[c];
        }
    }
    TransferFunction { values }
}

/// Within-band covariance implied by a transfer function:
/// `C[i][j] = Σ_c F[i][c] F[j][c] cos(c(ℓ_i − ℓ_j))`. Symmetric positive
/// semidefinite by construction; circulant when the band is axially
/// symmetric.
pub fn band_covariance(transfer: &TransferFunction) -> Array2<f64> {
    let n = transfer.n_lon();
    let f = transfer.values();
    // cos(c (l_i - l_j)) depends only on (i - j) mod n
    let mut cos_lag = Array2::<f64>::zeros((n, n));
    for d in 0..n {
        for c in 0..n {
            cos_lag[[d, c]] = (2.0 * PI * (c * d) as f64 / n as f64).cos();
        }
    }
    let mut cov = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let d = i - j;
            let mut acc = 0.0;
            for c in 0..n {
                acc += f[[i, c]] * f[[j, c]] * cos_lag[[d, c]];
            }
            cov[[i, j]] = acc;
            cov[[j, i]] = acc;
        }
    }
    cov
}
