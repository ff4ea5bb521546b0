//! DE/rand/1/bin differential evolution with synchronous generations.
//!
//! ```text
//! for each target x_i:
//!   v = x_r1 + F (x_r2 - x_r3)           r1, r2, r3 distinct and != i
//!   u_j = v_j if U(0,1) < CR or j == j_rand, else x_ij
//!   x_i' = u if f(u) <= f(x_i)
//! ```
//!
//! All trial vectors of a generation are built from the previous
//! generation, so the result depends only on the RNG stream. Components
//! leaving the box are bounced back between the bound and the parent value.

use rand::Rng;

use super::sanitize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeOptions {
    /// Differential weight F.
    pub scaling_factor: f64,
    pub crossover_prob: f64,
    pub population: usize,
    pub max_generations: usize,
    /// Stop when the best value improved by at most
    /// `tolerance * (1 + |best|)` over the last `stall_generations`.
    pub tolerance: f64,
    pub stall_generations: usize,
}

impl Default for DeOptions {
    fn default() -> Self {
        Self {
            scaling_factor: 0.8,
            crossover_prob: 0.9,
            population: 32,
            max_generations: 500,
            tolerance: 1e-10,
            stall_generations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` inside the box `bounds`.
///
/// # Panics
///
/// If `bounds` is empty or `options.population < 4`.
pub fn differential_evolution<F, R>(
    mut f: F,
    bounds: &[(f64, f64)],
    options: &DeOptions,
    rng: &mut R,
) -> DeResult
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert!(
        !bounds.is_empty(),
        "differential evolution needs at least one dimension"
    );
    assert!(
        options.population >= 4,
        "DE/rand/1 needs a population of at least 4"
    );
    let dim = bounds.len();
    let np = options.population;

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                .collect()
        })
        .collect();
    let mut fit: Vec<f64> = pop.iter().map(|x| sanitize(f(x))).collect();
    let mut evaluations = np;

    let best_index = |fit: &[f64]| {
        // strict comparison keeps the lowest index on ties
        let mut b = 0;
        for (i, &v) in fit.iter().enumerate() {
            if v < fit[b] {
                b = i;
            }
        }
        b
    };

    let mut history = vec![fit[best_index(&fit)]];
    let mut converged = false;
    let mut generations = 0;
    let mut trial = vec![0.0; dim];

    while generations < options.max_generations {
        generations += 1;
        let mut next = pop.clone();
        let mut next_fit = fit.clone();
        for i in 0..np {
            let (r1, r2, r3) = distinct_three(rng, np, i);
            let j_rand = rng.random_range(0..dim);
            for j in 0..dim {
                let (lo, hi) = bounds[j];
                let v = if j == j_rand || rng.random::<f64>() < options.crossover_prob {
                    pop[r1][j] + options.scaling_factor * (pop[r2][j] - pop[r3][j])
                } else {
                    pop[i][j]
                };
                trial[j] = if v < lo {
                    lo + rng.random::<f64>() * (pop[i][j] - lo)
                } else if v > hi {
                    hi - rng.random::<f64>() * (hi - pop[i][j])
                } else {
                    v
                };
            }
            let ft = sanitize(f(&trial));
            evaluations += 1;
            if ft <= fit[i] {
                next[i].copy_from_slice(&trial);
                next_fit[i] = ft;
            }
        }
        pop = next;
        fit = next_fit;
        let best = fit[best_index(&fit)];
        history.push(best);
        let stall = options.stall_generations;
        if history.len() > stall {
            let then = history[history.len() - 1 - stall];
            if then - best <= options.tolerance * (1.0 + best.abs()) {
                converged = true;
                break;
            }
        }
    }

    let b = best_index(&fit);
    DeResult {
        best: pop[b].clone(),
        value: fit[b],
        generations,
        evaluations,
        converged,
    }
}

fn distinct_three<R: Rng + ?Sized>(rng: &mut R, n: usize, exclude: usize) -> (usize, usize, usize) {
    let mut pick = |taken: &[usize]| loop {
        let k = rng.random_range(0..n);
        if k != exclude && !taken.contains(&k) {
            return k;
        }
    };
    let a = pick(&[]);
    let b = pick(&[a]);
    let c = pick(&[a, b]);
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum()
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = DeOptions {
            max_generations: 2000,
            tolerance: 1e-14,
            ..DeOptions::default()
        };
        let r = differential_evolution(rosenbrock, &[(-2.0, 2.0); 3], &opts, &mut rng);
        assert!(r.value < 1e-8, "{r:?}");
        for v in &r.best {
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rastrigin_global_basin() {
        let rastrigin = |x: &[f64]| {
            10.0 * x.len() as f64
                + x.iter()
                    .map(|v| v * v - 10.0 * (std::f64::consts::TAU * v).cos())
                    .sum::<f64>()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = DeOptions {
            population: 40,
            scaling_factor: 0.5,
            max_generations: 1000,
            ..DeOptions::default()
        };
        let r = differential_evolution(rastrigin, &[(-5.12, 5.12); 2], &opts, &mut rng);
        assert!(r.value < 1e-6, "{r:?}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            differential_evolution(
                rosenbrock,
                &[(-2.0, 2.0); 2],
                &DeOptions::default(),
                &mut rng,
            )
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn stays_in_bounds_with_large_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = DeOptions {
            scaling_factor: 1.5,
            ..DeOptions::default()
        };
        let bounds = [(0.0, 1.0), (-3.0, -2.0)];
        let r = differential_evolution(
            |x: &[f64]| {
                assert!((0.0..=1.0).contains(&x[0]) && (-3.0..=-2.0).contains(&x[1]));
                (x[0] - 0.25).powi(2) + (x[1] + 2.5).powi(2)
            },
            &bounds,
            &opts,
            &mut rng,
        );
        assert!(r.value < 1e-8);
    }
}
