//! Expected improvement and its maximization over the unit cube.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::gp::{GpModel, Prediction};
use crate::mtgp::{FidelityTag, MtgpModel};
use crate::sampling::shifted_halton;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian belief `N(mu, sigma_sq)` over `j_star`.
///
/// Below `variance_floor` the belief is treated as exact and the improvement
/// is `max(0, mu - j_star)`.
pub fn expected_improvement(mu: f64, sigma_sq: f64, j_star: f64, variance_floor: f64) -> f64 {
    if !(sigma_sq >= variance_floor) || sigma_sq <= 0.0 {
        return (mu - j_star).max(0.0);
    }
    let sd = sigma_sq.sqrt();
    let g = (mu - j_star) / sd;
    let scaled = if g < -8.0 {
        // γΦ(γ) + φ(γ) cancels badly in the far tail; use the asymptotic
        // expansion φ(γ)/γ² (1 - 3/γ² + 15/γ⁴).
        let g2 = g * g;
        normal_pdf(g) / g2 * (1.0 - 3.0 / g2 + 15.0 / (g2 * g2))
    } else {
        g * normal_cdf(g) + normal_pdf(g)
    };
    (sd * scaled).max(0.0)
}

/// Anything that yields a Gaussian belief about the objective at a unit-cube point.
pub trait Surrogate: Sync {
    fn predict(&self, x: &[f64]) -> Prediction;
}

impl Surrogate for GpModel {
    fn predict(&self, x: &[f64]) -> Prediction {
        GpModel::predict(self, x)
    }
}

/// One task of a multi-task model.
pub struct TaskSurrogate<'a> {
    pub model: &'a MtgpModel,
    pub tag: FidelityTag,
}

impl Surrogate for TaskSurrogate<'_> {
    fn predict(&self, x: &[f64]) -> Prediction {
        self.model.predict(x, self.tag)
    }
}

impl<F: Fn(&[f64]) -> Prediction + Sync> Surrogate for F {
    fn predict(&self, x: &[f64]) -> Prediction {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSettings {
    /// Quasi-random candidates scored per proposal.
    pub candidates: usize,
    /// How many of the best candidates are refined by pattern search.
    pub refine_top: usize,
    /// Pattern-search passes per refined candidate.
    pub pattern_steps: usize,
    /// Initial pattern-search step in unit-cube coordinates.
    pub initial_step: f64,
    pub variance_floor: f64,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        Self {
            candidates: 2048,
            refine_top: 8,
            pattern_steps: 50,
            initial_step: 0.05,
            variance_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Point in the unit cube.
    pub x: Vec<f64>,
    pub ei: f64,
}

/// Maximizes EI over the unit cube: scores seeded shifted-Halton candidates,
/// refines the best `refine_top` of them plus every anchor (typically the
/// incumbent) by coordinate pattern search and returns the best refined
/// point. Ties go to the better-ranked start.
pub fn propose_next<S: Surrogate + ?Sized>(model: &S, dim: usize, j_star: f64, anchors: &[Vec<f64>], settings: &AcquisitionSettings, seed: u64) -> Proposal {
    let ei = |x: &[f64]| {
        let p = model.predict(x);
        expected_improvement(p.mean, p.variance, j_star, settings.variance_floor)
    };
    let candidates = shifted_halton(settings.candidates.max(1), dim, seed);
    let scores: Vec<f64> = candidates.par_iter().map(|c| ei(c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(settings.refine_top.max(1));
    let mut starts: Vec<(Vec<f64>, f64)> = order.iter().map(|&i| (candidates[i].clone(), scores[i])).collect();
    starts.extend(anchors.iter().map(|a| (a.clone(), ei(a))));
    let refined: Vec<Proposal> = starts
        .into_par_iter()
        .enumerate()
        .map(|(rank, (x0, v0))| {
            let (x, v) = pattern_search(&ei, x0, v0, settings.initial_step, settings.pattern_steps, seed.wrapping_add(rank as u64 + 1));
            Proposal { x, ei: v }
        })
        .collect();
    refined
        .into_iter()
        .reduce(|best, p| if p.ei > best.ei { p } else { best })
        .expect("at least one candidate")
}

/// Coordinate pattern search for a maximum inside the unit cube. Each pass
/// visits the coordinates in a seeded random order and probes `±step`; a
/// pass without improvement halves the step.
pub fn pattern_search<F: Fn(&[f64]) -> f64>(f: &F, mut x: Vec<f64>, mut fx: f64, step: f64, passes: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = step;
    let mut coords: Vec<usize> = (0..x.len()).collect();
    for _ in 0..passes {
        if h < 1e-7 {
            break;
        }
        coords.shuffle(&mut rng);
        let mut improved = false;
        for &d in &coords {
            let here = x[d];
            let mut best = (here, fx);
            for cand in [(here + h).min(1.0), (here - h).max(0.0)] {
                if cand == here {
                    continue;
                }
                x[d] = cand;
                let v = f(&x);
                if v > best.1 {
                    best = (cand, v);
                }
            }
            x[d] = best.0;
            if best.1 > fx {
                fx = best.1;
                improved = true;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn ei_closed_form_examples() {
        assert!((expected_improvement(0.3, 1.0, 0.3, 1e-12) - 0.398_942_280_401).abs() < 1e-9);
        assert_eq!(expected_improvement(-1.0, 0.0, 0.0, 1e-12), 0.0);
        assert_eq!(expected_improvement(2.0, 1e-20, 0.5, 1e-12), 1.5);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let mu: f64 = rng.random_range(-1.0..1.0);
            let sd: f64 = rng.random_range(0.05..1.5);
            let j: f64 = rng.random_range(-1.0..1.0);
            let dist = Normal::new(mu, sd).unwrap();
            let n = 1_000_000;
            let mc = (0..n).map(|_| (dist.sample(&mut rng) - j).max(0.0)).sum::<f64>() / n as f64;
            let ei = expected_improvement(mu, sd * sd, j, 1e-12);
            assert!((ei - mc).abs() < 1e-2, "mu {mu} sd {sd} j {j}: {ei} vs {mc}");
        }
    }

    #[test]
    fn ei_tail_is_continuous_and_positive() {
        let a = expected_improvement(0.0, 1.0, 7.999_999, 0.0);
        let b = expected_improvement(0.0, 1.0, 8.000_001, 0.0);
        assert!(a > 0.0 && b > 0.0);
        assert!((a - b).abs() / a < 1e-2);
        assert!(expected_improvement(0.0, 1.0, 30.0, 0.0) >= 0.0);
    }

    #[test]
    fn proposal_finds_sharp_interior_optimum() {
        let centre = [0.31, 0.72, 0.45, 0.18, 0.63];
        let surrogate = |x: &[f64]| {
            let d2: f64 = x.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
            Prediction {
                mean: (-d2 / (2.0 * 0.1 * 0.1)).exp(),
                variance: 1e-2,
            }
        };
        let p = propose_next(&surrogate, 5, 0.5, &[], &AcquisitionSettings::default(), 3);
        // Dense quasi-random sweep: the proposal must do at least as well.
        let sweep = shifted_halton(100_000, 5, 99)
            .iter()
            .map(|x| {
                let pr = surrogate(x);
                expected_improvement(pr.mean, pr.variance, 0.5, 1e-12)
            })
            .fold(f64::MIN, f64::max);
        let dist: f64 = p.x.iter().zip(&centre).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.05, "{dist}");
        assert!(p.ei >= sweep);
    }

    #[test]
    fn flat_mean_goes_to_uncertain_corner() {
        let surrogate = |x: &[f64]| Prediction {
            mean: 0.0,
            variance: 1e-3 + x.iter().map(|v| v * v).sum::<f64>(),
        };
        let p = propose_next(&surrogate, 3, 0.0, &[], &AcquisitionSettings::default(), 5);
        assert!(p.x.iter().all(|v| *v > 0.999), "{:?}", p.x);
    }

    #[test]
    fn proposals_are_deterministic() {
        let surrogate = |x: &[f64]| Prediction {
            mean: (5.0 * x[0]).sin() * x[1],
            variance: 0.1 * (1.0 + x[2]),
        };
        let s = AcquisitionSettings::default();
        assert_eq!(propose_next(&surrogate, 3, 0.2, &[], &s, 9), propose_next(&surrogate, 3, 0.2, &[], &s, 9));
    }
}
