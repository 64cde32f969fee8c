//! Differential evolution, rand/1/bin with bounce-back bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeSettings {
    pub population: usize,
    pub generations: usize,
    pub mutation: f64,
    pub crossover: f64,
    /// Stop when the population's objective spread falls below this fraction of the best.
    pub tolerance: f64,
}

impl Default for DeSettings {
    fn default() -> Self {
        DeSettings {
            population: 32,
            generations: 60,
            mutation: 0.7,
            crossover: 0.9,
            tolerance: 1e-10,
        }
    }
}

pub struct DeResult {
    pub x: Vec<f64>,
    /// Best value after initialization and after each generation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len())
        .min_by(|&a, &b| v[a].total_cmp(&v[b]))
        .expect("non-empty population")
}

/// Minimizes `f` over the box. `start`, when given, seeds the first member.
pub fn minimize<F>(bounds: &[(f64, f64)], settings: &DeSettings, seed: u64, start: Option<&[f64]>, f: F) -> DeResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    let np = settings.population.max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |x: &Vec<f64>| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect())
        .collect();
    if let Some(s) = start {
        pop[0] = s.iter().zip(bounds).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect();
    }
    if dim == 0 {
        let v = f(&[]);
        return DeResult {
            x: Vec::new(),
            trace: vec![v],
            evaluations: 1,
        };
    }
    let mut fit: Vec<f64> = pop.par_iter().map(eval).collect();
    let mut evaluations = np;
    let mut trace = vec![fit[argmin(&fit)]];
    for _ in 0..settings.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.random_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let r1 = pick();
                let mut r2 = pick();
                while r2 == r1 {
                    r2 = pick();
                }
                let mut r3 = pick();
                while r3 == r1 || r3 == r2 {
                    r3 = pick();
                }
                let jrand = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross: f64 = rng.random();
                        if j != jrand && cross >= settings.crossover {
                            return pop[i][j];
                        }
                        let (lo, hi) = bounds[j];
                        let v = pop[r1][j] + settings.mutation * (pop[r2][j] - pop[r3][j]);
                        let u: f64 = rng.random();
                        if v < lo {
                            lo + u * (pop[i][j] - lo)
                        } else if v > hi {
                            hi - u * (hi - pop[i][j])
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let tf: Vec<f64> = trials.par_iter().map(eval).collect();
        evaluations += np;
        for (i, (t, v)) in trials.into_iter().zip(tf).enumerate() {
            if v <= fit[i] {
                pop[i] = t;
                fit[i] = v;
            }
        }
        let best = fit[argmin(&fit)];
        trace.push(best);
        let worst = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if worst - best <= settings.tolerance * best.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let b = argmin(&fit);
    DeResult {
        x: pop[b].clone(),
        trace,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_valley_floor() {
        let s = DeSettings {
            generations: 400,
            ..Default::default()
        };
        let r = minimize(&[(-2.0, 2.0), (-1.0, 3.0)], &s, 3, None, rosenbrock);
        let best = *r.trace.last().unwrap();
        assert!(best < 1e-6, "{best}");
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn seed_fixes_result() {
        let s = DeSettings::default();
        let a = minimize(&[(-2.0, 2.0), (-1.0, 3.0)], &s, 11, None, rosenbrock);
        let b = minimize(&[(-2.0, 2.0), (-1.0, 3.0)], &s, 11, None, rosenbrock);
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn stays_inside_bounds() {
        let r = minimize(&[(1.0, 2.0)], &DeSettings::default(), 0, None, |x| x[0]);
        assert!(r.x[0] >= 1.0 && r.x[0] < 1.0 + 1e-6);
    }
}
