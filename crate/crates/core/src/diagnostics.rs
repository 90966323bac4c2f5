//! Empirical and model-implied diagnostics: tapered land/ocean
//! periodograms and east–west / north–south contrast variances.

use crate::grid::LandMask;
use crate::reml::{FitError, FittedModel, Variant};
use crate::spectral::{band_covariance, land_modulation, TaperParams};
use crate::temporal::InnovationField;
use ndarray::{Array2, ArrayView2, ArrayView3};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("taper is identically zero")]
    ZeroTaper,
    #[error("taper length {taper} does not match {n_lon} longitudes")]
    TaperLength { taper: usize, n_lon: usize },
    #[error("normalizing standard deviation at (band {0}, lon {1}) is not positive")]
    BadNormalizer(usize, usize),
    #[error("mask is {mask:?}, field is {field:?}")]
    MaskShape { mask: (usize, usize), field: (usize, usize) },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Periodogram of a tapered band, averaged over time:
/// `(1/K) Σ_k (p(h)/N) |Σ_n h(ℓ_n) x(n,k) e^{−i ℓ_n c}|²` with the taper
/// normalization `p(h) = N / Σ h²` so a flat taper reproduces the ordinary
/// periodogram.
pub fn tapered_periodogram(
    data: ArrayView2<'_, f64>,
    taper: &[f64],
) -> Result<Vec<f64>, DiagnosticsError> {
    let (n, k) = data.dim();
    if taper.len() != n {
        return Err(DiagnosticsError::TaperLength { taper: taper.len(), n_lon: n });
    }
    let energy: f64 = taper.iter().map(|h| h * h).sum();
    if energy == 0.0 {
        return Err(DiagnosticsError::ZeroTaper);
    }
    let norm = n as f64 / energy; // p(h)
    let mut out = vec![0.0; n];
    for c in 0..n {
        let mut acc = 0.0;
        for ki in 0..k {
            let mut re = 0.0;
            let mut im = 0.0;
            for ni in 0..n {
                let angle = 2.0 * PI * (ni * c) as f64 / n as f64;
                let v = taper[ni] * data[[ni, ki]];
                re += v * angle.cos();
                im -= v * angle.sin();
            }
            acc += re * re + im * im;
        }
        out[c] = acc * norm / (n as f64) / (k as f64);
    }
    Ok(out)
}

/// Land and ocean periodograms of one band; a regime with no support under
/// its taper is flagged absent.
#[derive(Debug, Clone)]
pub struct BandPeriodograms {
    pub land: Option<Vec<f64>>,
    pub ocean: Option<Vec<f64>>,
}

/// Per-band land/ocean periodograms of a difference field, normalized by
/// optional per-site standard deviations. The tapers are smooth, supported
/// strictly inside their regime: the regime indicator is eroded by half the
/// taper width and smoothed with the cosine kernel of range
/// `taper_spacings` grid spacings.
pub fn landocean_periodograms(
    diff: ArrayView3<'_, f64>,
    mask: &LandMask,
    normalizers: Option<ArrayView2<'_, f64>>,
    taper_spacings: f64,
) -> Result<Vec<BandPeriodograms>, DiagnosticsError> {
    let (m, n, k) = diff.dim();
    if (mask.n_lat(), mask.n_lon()) != (m, n) {
        return Err(DiagnosticsError::MaskShape {
            mask: (mask.n_lat(), mask.n_lon()),
            field: (m, n),
        });
    }
    if let Some(sds) = normalizers {
        for ((mi, ni), &s) in sds.indexed_iter() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(DiagnosticsError::BadNormalizer(mi, ni));
            }
        }
    }
    let spacing = 2.0 * PI / n as f64;
    let erosion = -((taper_spacings / 2.0).ceil() as i64);
    let taper = TaperParams::new(erosion, (taper_spacings * spacing).min(2.0 * PI - 1e-9))
        .map_err(FitError::from)?;
    taper.validate_for(n).map_err(FitError::from)?;

    let mut out = Vec::with_capacity(m);
    for mi in 0..m {
        let mut normalized = Array2::<f64>::zeros((n, k));
        for ni in 0..n {
            let s = normalizers.map_or(1.0, |sd| sd[[mi, ni]]);
            for ki in 0..k {
                normalized[[ni, ki]] = diff[[mi, ni, ki]] / s;
            }
        }
        let land_row = mask.row(mi).to_owned();
        let ocean_row = land_row.mapv(|v| 1 - v);
        let mut result = BandPeriodograms { land: None, ocean: None };
        for (row, slot) in
            [(land_row.view(), &mut result.land), (ocean_row.view(), &mut result.ocean)]
        {
            let h = land_modulation(row, &taper).map_err(FitError::from)?;
            if h.iter().any(|&v| v > 0.0) {
                *slot = Some(tapered_periodogram(normalized.view(), &h)?);
            }
        }
        out.push(result);
    }
    Ok(out)
}

/// Contrast variances on the innovation scale. Undefined entries (the
/// north–south row of the southernmost band) are NaN.
#[derive(Debug, Clone)]
pub struct ContrastReport {
    /// East–west squared-difference means, circular in longitude.
    pub ew: Array2<f64>,
    /// North–south squared-difference means; band 0 is undefined.
    pub ns: Array2<f64>,
    /// Per-band longitude averages.
    pub ew_lat_mean: Vec<f64>,
    pub ns_lat_mean: Vec<f64>,
    /// Per-longitude band averages.
    pub ew_lon_mean: Vec<f64>,
    pub ns_lon_mean: Vec<f64>,
}

fn finish_report(ew: Array2<f64>, ns: Array2<f64>) -> ContrastReport {
    let (m, n) = ew.dim();
    let ew_lat_mean: Vec<f64> = (0..m).map(|mi| ew.row(mi).mean().unwrap()).collect();
    let ns_lat_mean: Vec<f64> = (0..m)
        .map(|mi| if mi == 0 { f64::NAN } else { ns.row(mi).mean().unwrap() })
        .collect();
    let ew_lon_mean: Vec<f64> = (0..n).map(|ni| ew.column(ni).mean().unwrap()).collect();
    let ns_lon_mean: Vec<f64> = (0..n)
        .map(|ni| {
            if m < 2 {
                f64::NAN
            } else {
                (1..m).map(|mi| ns[[mi, ni]]).sum::<f64>() / (m - 1) as f64
            }
        })
        .collect();
    ContrastReport { ew, ns, ew_lat_mean, ns_lat_mean, ew_lon_mean, ns_lon_mean }
}

/// Empirical contrast variances of an innovation field, averaged over time
/// and realizations.
pub fn contrast_variances(innov: &InnovationField) -> ContrastReport {
    let values = innov.values();
    let (m, n, k_eff, r) = values.dim();
    let denom = (k_eff * r) as f64;
    let mut ew = Array2::<f64>::zeros((m, n));
    let mut ns = Array2::<f64>::from_elem((m, n), f64::NAN);
    for mi in 0..m {
        for ni in 0..n {
            let west = (ni + n - 1) % n;
            let mut acc = 0.0;
            for ki in 0..k_eff {
                for ri in 0..r {
                    let d = values[[mi, ni, ki, ri]] - values[[mi, west, ki, ri]];
                    acc += d * d;
                }
            }
            ew[[mi, ni]] = acc / denom;
            if mi > 0 {
                let mut acc = 0.0;
                for ki in 0..k_eff {
                    for ri in 0..r {
                        let d = values[[mi, ni, ki, ri]] - values[[mi - 1, ni, ki, ri]];
                        acc += d * d;
                    }
                }
                ns[[mi, ni]] = acc / denom;
            }
        }
    }
    finish_report(ew, ns)
}

/// Model-implied expected contrast variances: from the band covariances and
/// the cross-band spectral correlation at zero longitudinal lag.
pub fn model_implied_contrasts(model: &FittedModel) -> Result<ContrastReport, DiagnosticsError> {
    let (m, n) = (model.grid.n_lat(), model.grid.n_lon());
    if model.variant == Variant::Ind {
        let ew = Array2::from_elem((m, n), 2.0);
        let mut ns = Array2::from_elem((m, n), 2.0);
        for ni in 0..n {
            ns[[0, ni]] = f64::NAN;
        }
        return Ok(finish_report(ew, ns));
    }
    let transfers: Vec<_> =
        (0..m).map(|mi| model.transfer(mi)).collect::<Result<_, _>>()?;
    let covs: Vec<Array2<f64>> =
        transfers.par_iter().map(band_covariance).collect();

    let mut ew = Array2::<f64>::zeros((m, n));
    let mut ns = Array2::<f64>::from_elem((m, n), f64::NAN);
    for mi in 0..m {
        for ni in 0..n {
            let west = (ni + n - 1) % n;
            ew[[mi, ni]] =
                covs[mi][[ni, ni]] + covs[mi][[west, west]] - 2.0 * covs[mi][[ni, west]];
            if mi > 0 {
                let mut cross = 0.0;
                for c in 0..n {
                    cross += transfers[mi].at(ni, c)
                        * transfers[mi - 1].at(ni, c)
                        * crate::coherence::cross_band_correlation(
                            &model.coherence,
                            mi,
                            mi - 1,
                            c,
                            n,
                        );
                }
                ns[[mi, ni]] = covs[mi][[ni, ni]] + covs[mi - 1][[ni, ni]] - 2.0 * cross;
            }
        }
    }
    Ok(finish_report(ew, ns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_data_gives_zero_periodogram() {
        let data = Array2::<f64>::zeros((8, 5));
        let taper = vec![1.0; 8];
        let p = tapered_periodogram(data.view(), &taper).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_noise_periodogram_is_flat_at_the_variance() {
        let n = 16;
        let k = 4000;
        let sigma = 1.7f64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((n, k), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        });
        let taper = vec![1.0; n];
        let p = tapered_periodogram(data.view(), &taper).unwrap();
        // each ordinate is a mean of k independent scaled chi-squares
        let se = sigma * sigma * (2.0 / k as f64).sqrt();
        for (c, &v) in p.iter().enumerate() {
            assert!(
                (v - sigma * sigma).abs() < 4.0 * se,
                "ordinate {c}: {v} vs {}",
                sigma * sigma
            );
        }
        // mean over wavenumbers integrates to the variance
        let mean: f64 = p.iter().sum::<f64>() / n as f64;
        assert!((mean - sigma * sigma).abs() < 3.0 * se);
    }

    #[test]
    fn pure_tone_concentrates_at_its_wavenumber() {
        let n = 16;
        let c0 = 3;
        let data = Array2::from_shape_fn((n, 2), |(ni, _)| {
            (2.0 * PI * (ni * c0) as f64 / n as f64).cos()
        });
        let taper = vec![1.0; n];
        let p = tapered_periodogram(data.view(), &taper).unwrap();
        for (c, &v) in p.iter().enumerate() {
            if c == c0 || c == n - c0 {
                assert_abs_diff_eq!(v, n as f64 / 4.0, epsilon = 1e-9);
            } else {
                assert!(v.abs() < 1e-9, "leakage at {c}: {v}");
            }
        }
    }

    #[test]
    fn zero_taper_is_an_error() {
        let data = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            tapered_periodogram(data.view(), &[0.0; 4]),
            Err(DiagnosticsError::ZeroTaper)
        ));
    }

    #[test]
    fn landocean_flags_absent_regimes() {
        let m = 2;
        let n = 12;
        let k = 4;
        let diff = Array3::from_shape_fn((m, n, k), |(mi, ni, ki)| {
            ((mi + ni + ki) as f64 * 0.37).sin()
        });
        // band 0 all land, band 1 split
        let mut mask_values = ndarray::Array2::<u8>::zeros((m, n));
        for ni in 0..n {
            mask_values[[0, ni]] = 1;
        }
        for ni in 0..6 {
            mask_values[[1, ni]] = 1;
        }
        let mask = LandMask::new(mask_values).unwrap();
        let reports = landocean_periodograms(diff.view(), &mask, None, 2.0).unwrap();
        assert!(reports[0].land.is_some());
        assert!(reports[0].ocean.is_none());
        assert!(reports[1].land.is_some());
        assert!(reports[1].ocean.is_some());
    }

    #[test]
    fn identical_realizations_have_zero_difference_periodograms() {
        // a zero difference field yields zero periodograms wherever defined
        let diff = Array3::<f64>::zeros((1, 8, 3));
        let mask = crate::grid::synthetic_mask(1, 8, &crate::grid::MaskPattern::HalfSplit)
            .unwrap();
        let reports = landocean_periodograms(diff.view(), &mask, None, 2.0).unwrap();
        let land = reports[0].land.as_ref().unwrap();
        assert!(land.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_fields_have_zero_contrasts() {
        let values = Array4::from_shape_fn((3, 4, 5, 2), |(_, _, k, r)| (k + 7 * r) as f64);
        let innov = InnovationField::new(values);
        let report = contrast_variances(&innov);
        assert!(report.ew.iter().all(|&v| v == 0.0));
        for mi in 1..3 {
            for ni in 0..4 {
                assert_eq!(report.ns[[mi, ni]], 0.0);
            }
        }
        assert!(report.ns.row(0).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn iid_innovations_have_contrast_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, n, k, r) = (2, 5, 500, 10);
        let values = Array4::from_shape_fn((m, n, k, r), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let innov = InnovationField::new(values);
        let report = contrast_variances(&innov);
        let se = 2.0 * (2.0 / (k * r) as f64).sqrt();
        for mi in 0..m {
            for ni in 0..n {
                assert!(
                    (report.ew[[mi, ni]] - 2.0).abs() < 4.0 * se,
                    "ew at ({mi},{ni}): {}",
                    report.ew[[mi, ni]]
                );
            }
        }
        // averaging identity: lat means equal row means exactly
        for mi in 0..m {
            let row_mean: f64 = report.ew.row(mi).mean().unwrap();
            assert_abs_diff_eq!(report.ew_lat_mean[mi], row_mean, epsilon = 1e-15);
        }
    }

    #[test]
    fn independent_bands_have_additive_implied_ns() {
        let spec = crate::synthetic::GeneratorSpec {
            n_lat: 3,
            n_lon: 8,
            n_time: 10,
            coherence: crate::synthetic::CoherenceSpec::Stationary { xi: 0.0, tau: 0.3 },
            ..Default::default()
        };
        let model = crate::synthetic::truth_model(&spec).unwrap();
        let implied = model_implied_contrasts(&model).unwrap();
        for mi in 1..3 {
            let upper = band_covariance(&model.transfer(mi).unwrap());
            let lower = band_covariance(&model.transfer(mi - 1).unwrap());
            for ni in 0..8 {
                assert_abs_diff_eq!(
                    implied.ns[[mi, ni]],
                    upper[[ni, ni]] + lower[[ni, ni]],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn normalizers_rescale_and_validate() {
        let diff = Array3::from_elem((1, 8, 4), 2.0);
        let mask = crate::grid::synthetic_mask(1, 8, &crate::grid::MaskPattern::HalfSplit)
            .unwrap();
        let plain = landocean_periodograms(diff.view(), &mask, None, 2.0).unwrap();
        let sds = Array2::from_elem((1, 8), 2.0);
        let scaled =
            landocean_periodograms(diff.view(), &mask, Some(sds.view()), 2.0).unwrap();
        let (p, q) = (plain[0].land.as_ref().unwrap(), scaled[0].land.as_ref().unwrap());
        for c in 0..8 {
            assert_abs_diff_eq!(q[c], p[c] / 4.0, epsilon = 1e-12);
        }
        let bad = Array2::from_elem((1, 8), 0.0);
        assert!(matches!(
            landocean_periodograms(diff.view(), &mask, Some(bad.view()), 2.0),
            Err(DiagnosticsError::BadNormalizer(0, 0))
        ));
    }

    #[test]
    fn single_band_has_no_north_south_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = Array4::from_shape_fn((1, 6, 10, 2), |_| rng.gen_range(-1.0..1.0));
        let innov = InnovationField::new(values);
        let report = contrast_variances(&innov);
        assert!(report.ns.iter().all(|v| v.is_nan()));
        assert!(report.ew.iter().all(|v| v.is_finite()));
        assert!(report.ns_lon_mean.iter().all(|v| v.is_nan()));
    }
}
