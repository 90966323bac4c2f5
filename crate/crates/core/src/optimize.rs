//! Derivative-free simplex search used by the band and coherence fits.
//!
//! Classic Nelder–Mead with reflection/expansion/contraction/shrink,
//! deterministic given the starting point. Objectives may return
//! non-finite values (treated as +∞), which the simplex backs away from.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Convergence tolerance on the function-value spread of the simplex.
    pub f_tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Initial simplex step added to each coordinate of the start point.
    pub init_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { f_tol: 1e-8, max_iter: 500, init_step: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Minimize `f` from `x0` with a Nelder–Mead simplex.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let dim = x0.len();
    assert!(dim > 0, "objective must have at least one parameter");
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += opts.init_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let spread = values[worst] - values[best];
        if spread.abs() <= opts.f_tol * (1.0 + values[best].abs()) && values[best].is_finite() {
            converged = true;
            break;
        }

        // centroid of all points except the worst
        let mut centroid = vec![0.0; dim];
        for (idx, v) in simplex.iter().enumerate() {
            if idx == worst {
                continue;
            }
            for (c, &vi) in centroid.iter_mut().zip(v) {
                *c += vi;
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let blend = |a: f64, w: &Vec<f64>| -> Vec<f64> {
            centroid
                .iter()
                .zip(w)
                .map(|(&c, &wi)| c + a * (c - wi))
                .collect()
        };

        let reflected = blend(alpha, &simplex[worst]);
        let f_reflected = eval(&reflected, &mut evals);

        if f_reflected < values[best] {
            let expanded = blend(gamma, &simplex[worst]);
            let f_expanded = eval(&expanded, &mut evals);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }

        // contraction, outside or inside depending on the reflected value
        let (contracted, f_contracted) = if f_reflected < values[worst] {
            let c = blend(alpha * rho, &simplex[worst]);
            let fc = eval(&c, &mut evals);
            (c, fc)
        } else {
            let c = blend(-rho, &simplex[worst]);
            let fc = eval(&c, &mut evals);
            (c, fc)
        };
        if f_contracted < values[worst].min(f_reflected) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }

        // shrink toward the best vertex
        let best_point = simplex[best].clone();
        for idx in 0..=dim {
            if idx == best {
                continue;
            }
            for (v, &b) in simplex[idx].iter_mut().zip(&best_point) {
                *v = b + sigma * (*v - b);
            }
            values[idx] = eval(&simplex[idx].clone(), &mut evals);
        }
    }

    let mut best = 0;
    for i in 1..=dim {
        if values[i] < values[best] {
            best = i;
        }
    }
    SimplexResult {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2) + 5.0;
        let res = nelder_mead(f, &[0.0, 0.0], &SimplexOptions::default());
        assert!(res.converged);
        assert!((res.x[0] - 2.0).abs() < 1e-3, "x0 = {}", res.x[0]);
        assert!((res.x[1] + 1.0).abs() < 1e-3, "x1 = {}", res.x[1]);
        assert!((res.f - 5.0).abs() < 1e-6);
    }

    #[test]
    fn handles_rosenbrock_valley() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions { max_iter: 4000, ..Default::default() };
        let res = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!((res.x[0] - 1.0).abs() < 1e-3);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn backs_away_from_infinite_regions() {
        let f = |x: &[f64]| {
            if x[0] > 1.0 {
                f64::INFINITY
            } else {
                (x[0] + 2.0).powi(2)
            }
        };
        let res = nelder_mead(f, &[0.9, 0.0], &SimplexOptions::default());
        assert!((res.x[0] + 2.0).abs() < 1e-3);
        assert!(res.f.is_finite());
    }

    #[test]
    fn never_returns_worse_than_start() {
        let f = |x: &[f64]| x[0].powi(4) - 0.3 * x[0];
        let start = [0.7];
        let f_start = f(&start);
        let res = nelder_mead(f, &start, &SimplexOptions::default());
        assert!(res.f <= f_start);
    }
}
