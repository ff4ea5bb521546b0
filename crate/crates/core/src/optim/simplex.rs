//! Nelder–Mead downhill simplex with restarts.

use super::sanitize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evaluations: usize,
    /// Absolute spread of vertex values below which a pass stops.
    pub ftol_abs: f64,
    /// Relative spread of vertex values below which a pass stops.
    pub ftol_rel: f64,
    /// Largest vertex distance from the best vertex below which a pass stops.
    pub xtol: f64,
    /// Maximum number of fresh simplices built around the incumbent.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            ftol_abs: 1e-14,
            ftol_rel: 1e-12,
            xtol: 1e-10,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with initial vertex offsets `steps`.
///
/// # Panics
///
/// If `x0` is empty or `steps.len() != x0.len()`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    options: &SimplexOptions,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(!x0.is_empty());
    assert_eq!(x0.len(), steps.len());
    let mut evaluations = 0;
    let mut x = x0.to_vec();
    let mut value = sanitize(f(&x));
    evaluations += 1;
    let mut converged = false;

    for pass in 0..=options.restarts {
        let scale = if pass == 0 { 1.0 } else { 0.1 };
        let step: Vec<f64> = steps.iter().map(|s| s * scale).collect();
        let before = value;
        let (nx, nv, evals, ok) = single_pass(
            &mut f,
            &x,
            value,
            &step,
            options,
            options.max_evaluations.saturating_sub(evaluations),
        );
        evaluations += evals;
        if nv <= value {
            x = nx;
            value = nv;
        }
        converged = ok;
        if !ok || evaluations >= options.max_evaluations {
            break;
        }
        if pass > 0 && before - value <= options.ftol_abs + options.ftol_rel * value.abs() {
            break;
        }
    }

    SimplexResult {
        x,
        value,
        evaluations,
        converged,
    }
}

fn single_pass<F>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    options: &SimplexOptions,
    budget: usize,
) -> (Vec<f64>, f64, usize, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(p))
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut p = x0.to_vec();
        let h = if steps[i] != 0.0 {
            steps[i]
        } else {
            1e-4 * (1.0 + x0[i].abs())
        };
        p[i] += h;
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = worst - best;
        if (spread <= options.ftol_abs + options.ftol_rel * best.abs()
            && size <= options.xtol.sqrt())
            || size <= options.xtol
        {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (pi, bi) in p.iter_mut().zip(&x_best) {
                        *pi = bi + sigma * (*pi - bi);
                    }
                    *v = eval(p, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals, converged)
}
