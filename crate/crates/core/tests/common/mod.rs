//! Shared test-side machinery: random model instances and the dense
//! direct evaluation of the restricted likelihood used as an oracle.

#![allow(dead_code)]

use evspec::coherence::{CoherencePair, LatitudeCoherenceProfile};
use evspec::grid::{anomalies, EnsembleField, LandMask, SphereGrid};
use evspec::reml::Variant;
use evspec::spectral::{
    evolutionary_transfer, BandSpectralParams, MaternSpectrumParams, TaperParams,
};
use evspec::temporal::{Ar2Site, TemporalParams};
use nalgebra::DMatrix;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub struct Problem {
    pub grid: SphereGrid,
    pub mask: LandMask,
    pub field: EnsembleField,
    pub temporal: TemporalParams,
    pub bands: Vec<BandSpectralParams>,
    pub profile: LatitudeCoherenceProfile,
}

pub fn random_problem(m: usize, n: usize, k: usize, r: usize, variant: Variant, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = SphereGrid::equally_spaced_deg(m, (-40.0, 40.0), n, k, r).unwrap();
    let mask_values = ndarray::Array2::from_shape_fn((m, n), |_| u8::from(rng.gen_bool(0.5)));
    let mask = LandMask::new(mask_values).unwrap();
    let values = Array4::from_shape_fn((m, n, k, r), |_| rng.gen_range(-1.5..1.5));
    let field = EnsembleField::new(grid.clone(), values).unwrap();

    let temporal = TemporalParams::from_fn(m, n, |mi, ni| {
        let mut site_rng = ChaCha8Rng::seed_from_u64(seed ^ ((mi * 131 + ni) as u64 + 7));
        Ar2Site {
            phi1: site_rng.gen_range(-0.4..0.6),
            phi2: site_rng.gen_range(-0.4..0.3),
            sigma: site_rng.gen_range(0.5..1.8),
        }
    });

    let mut band_params = Vec::with_capacity(m);
    for _ in 0..m {
        let land = MaternSpectrumParams::new(
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.3..1.0),
            rng.gen_range(0.4..1.5),
        )
        .unwrap();
        let (ocean, taper) = if variant == Variant::Ax {
            (land, TaperParams::identity())
        } else {
            (
                MaternSpectrumParams::new(
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.3..1.0),
                    rng.gen_range(0.4..1.5),
                )
                .unwrap(),
                TaperParams::new(rng.gen_range(-1..2), rng.gen_range(0.5..3.0)).unwrap(),
            )
        };
        band_params.push(BandSpectralParams { land, ocean, taper });
    }

    let global = CoherencePair::new(rng.gen_range(0.3..0.9), rng.gen_range(0.1..1.0)).unwrap();
    let profile = match variant {
        Variant::EvNst => {
            let mut tropical = BTreeMap::new();
            for mi in 0..m.saturating_sub(1) {
                if grid.latitude_deg(mi).abs() < 23.0 {
                    tropical.insert(
                        mi,
                        CoherencePair::new(rng.gen_range(0.3..0.9), rng.gen_range(0.1..1.0))
                            .unwrap(),
                    );
                }
            }
            LatitudeCoherenceProfile::nonstationary(global, tropical, 23.0)
        }
        _ => LatitudeCoherenceProfile::stationary(global),
    };
    let bands = if variant == Variant::Ind { Vec::new() } else { band_params };
    Problem { grid, mask, field, temporal, bands, profile }
}

/// Chain product of AR(1) step coefficients, written independently of the
/// library's correlation helper.
pub fn oracle_rho(
    profile: &LatitudeCoherenceProfile,
    a: usize,
    b: usize,
    c: usize,
    n_lon: usize,
) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut rho = 1.0;
    for step in lo..hi {
        let pair = profile.step_pair(step);
        let s = (PI * c as f64 / n_lon as f64).sin();
        rho *= pair.xi / (1.0 + 4.0 * s * s).powf(pair.tau);
    }
    rho
}

/// Dense direct evaluation of the restricted loglikelihood on the
/// conditional distribution of the last K−2 anomaly slices.
pub fn oracle_negloglik(p: &Problem, variant: Variant) -> f64 {
    let (m, n, k, r) = p.grid.shape();
    let k_eff = k - 2;
    let sites = m * n;
    let dim = sites * k_eff;

    // spatial innovation covariance
    let mut c_h = DMatrix::<f64>::identity(sites, sites);
    if variant != Variant::Ind {
        let transfers: Vec<_> = (0..m)
            .map(|mi| evolutionary_transfer(&p.bands[mi], p.mask.row(mi), n).unwrap())
            .collect();
        for a in 0..m {
            for na in 0..n {
                for b in 0..m {
                    for nb in 0..n {
                        let mut acc = 0.0;
                        for c in 0..n {
                            let angle = 2.0 * PI * c as f64 * (na as f64 - nb as f64) / n as f64;
                            acc += transfers[a].at(na, c)
                                * transfers[b].at(nb, c)
                                * oracle_rho(&p.profile, a, b, c, n)
                                * angle.cos();
                        }
                        c_h[(a * n + na, b * n + nb)] = acc;
                    }
                }
            }
        }
    }

    // per-slice covariance S C S
    let mut slice_cov = c_h;
    for sa in 0..sites {
        for sb in 0..sites {
            let siga = p.temporal.site(sa / n, sa % n).sigma;
            let sigb = p.temporal.site(sb / n, sb % n).sigma;
            slice_cov[(sa, sb)] *= siga * sigb;
        }
    }

    // unit lower-triangular AR operator on the conditional slices
    let mut ar_op = DMatrix::<f64>::identity(dim, dim);
    for ki in 0..k_eff {
        for s in 0..sites {
            let site = p.temporal.site(s / n, s % n);
            if ki >= 1 {
                ar_op[(ki * sites + s, (ki - 1) * sites + s)] = -site.phi1;
            }
            if ki >= 2 {
                ar_op[(ki * sites + s, (ki - 2) * sites + s)] = -site.phi2;
            }
        }
    }
    let ar_inv = ar_op.clone().try_inverse().expect("unit triangular");

    let mut block = DMatrix::<f64>::zeros(dim, dim);
    for ki in 0..k_eff {
        block.view_mut((ki * sites, ki * sites), (sites, sites)).copy_from(&slice_cov);
    }
    let sigma_cond = &ar_inv * block * ar_inv.transpose();

    let chol = sigma_cond.clone().cholesky().expect("conditional covariance is PD");
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    // conditional means from the first two anomaly slices, then the
    // quadratic forms
    let anoms = anomalies(&p.field).unwrap();
    let av = anoms.values();
    let mut quad = 0.0;
    for ri in 0..r {
        let mut z = DMatrix::<f64>::zeros(dim, 1);
        for s in 0..sites {
            let (mi, ni) = (s / n, s % n);
            let site = p.temporal.site(mi, ni);
            let mut mu_prev2 = av[[mi, ni, 0, ri]];
            let mut mu_prev1 = av[[mi, ni, 1, ri]];
            for ki in 0..k_eff {
                let mu = site.phi1 * mu_prev1 + site.phi2 * mu_prev2;
                z[(ki * sites + s, 0)] = av[[mi, ni, ki + 2, ri]] - mu;
                mu_prev2 = mu_prev1;
                mu_prev1 = mu;
            }
        }
        let solved = chol.solve(&z);
        quad += (z.transpose() * solved)[(0, 0)];
    }

    let df = dim as f64;
    let rf = r as f64;
    df * (rf - 1.0) / 2.0 * LN_2PI + (rf - 1.0) / 2.0 * logdet + df / 2.0 * rf.ln() + 0.5 * quad
}

