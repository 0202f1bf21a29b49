//! Derivative-free box-constrained maximization used for hyperparameter fitting.
//!
//! Coordinates are optimized one at a time with a golden-section search over a
//! window around the current value; the window shrinks between sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AscentSettings {
    /// Maximum number of full coordinate sweeps.
    pub sweeps: usize,
    /// Golden-section evaluations per coordinate.
    pub line_evals: usize,
    /// Initial half-width of the line-search window, in coordinate units.
    pub window: f64,
    /// A sweep improving the objective by less than this ends the ascent.
    pub tol: f64,
}

impl Default for AscentSettings {
    fn default() -> Self {
        Self {
            sweeps: 8,
            line_evals: 14,
            window: 2.0,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    pub evaluations: usize,
}

/// Coordinate ascent from `start` inside `[lower, upper]`. Never returns a
/// point worse than the (clamped) start.
pub(crate) fn coordinate_ascent<F>(
    f: &F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &AscentSettings,
) -> AscentResult
where
    F: Fn(&[f64]) -> f64,
{
    let mut x: Vec<f64> = start
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let mut fx = f(&x);
    let start_value = fx;
    let mut evaluations = 1;
    let mut window = settings.window;
    for _ in 0..settings.sweeps {
        let before = fx;
        for d in 0..x.len() {
            let a = (x[d] - window).max(lower[d]);
            let b = (x[d] + window).min(upper[d]);
            if b <= a {
                continue;
            }
            let mut probe = x.clone();
            let mut eval_at = |t: f64| {
                probe[d] = t;
                evaluations += 1;
                let v = f(&probe);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            };
            let (t, v) = golden_section(&mut eval_at, a, b, settings.line_evals);
            if v > fx {
                x[d] = t;
                fx = v;
            }
        }
        if fx - before < settings.tol {
            break;
        }
        window = (window * 0.5).max(0.05);
    }
    AscentResult {
        x,
        value: fx,
        start_value,
        evaluations,
    }
}

/// Golden-section search for a maximum on `[a, b]` using `evals` evaluations
/// (at least 2), plus one at an endpoint if the bracket never moved off it.
/// Returns the best point seen.
fn golden_section<G: FnMut(f64) -> f64>(g: &mut G, a0: f64, b0: f64, evals: usize) -> (f64, f64) {
    let (mut a, mut b) = (a0, b0);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = g(c);
    let mut fd = g(d);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 2..evals.max(2) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    for edge in [a0, b0] {
        if a == edge || b == edge {
            let v = g(edge);
            if v > best.1 {
                best = (edge, v);
            }
        }
    }
    best
}

/// Runs [`coordinate_ascent`] from every start in parallel and keeps the best
/// result; ties go to the lower start index.
pub(crate) fn multi_start<F>(
    f: &F,
    starts: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    settings: &AscentSettings,
) -> (usize, Vec<AscentResult>)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let results: Vec<AscentResult> = starts
        .par_iter()
        .map(|s| coordinate_ascent(f, s, lower, upper, settings))
        .collect();
    let best = results
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.value > results[best].value { i } else { best });
    (best, results)
}

/// Uniform random starts inside `[lower, upper]`, seeded.
pub(crate) fn random_starts(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let mut g = |t: f64| -(t - 0.3) * (t - 0.3);
        let (t, _) = golden_section(&mut g, -2.0, 2.0, 40);
        assert!((t - 0.3).abs() < 1e-6);
    }

    #[test]
    fn ascent_on_separable_bowl_respects_bounds() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - (x[1] + 4.0).powi(2);
        let r = coordinate_ascent(&f, &[0.0, 0.0], &[-2.0, -3.0], &[2.0, 3.0], &AscentSettings::default());
        assert!((r.x[0] - 1.0).abs() < 1e-3);
        assert!((r.x[1] + 3.0).abs() < 1e-3);
        assert!(r.value >= r.start_value);
    }

    #[test]
    fn multi_start_escapes_local_peak() {
        // Two peaks; the start at 0 sits on the lower one.
        let f = |x: &[f64]| (-(x[0] - 0.0).powi(2) * 50.0).exp() + 2.0 * (-(x[0] - 4.0).powi(2) * 50.0).exp();
        let starts = vec![vec![0.0], vec![3.9]];
        let (best, results) = multi_start(&f, &starts, &[-5.0], &[5.0], &AscentSettings { window: 0.3, ..Default::default() });
        assert_eq!(best, 1);
        assert!((results[best].x[0] - 4.0).abs() < 1e-2);
    }
}
