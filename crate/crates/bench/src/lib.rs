//! Benchmark fixtures shared by the criterion targets.

use gaitopt::params::DesignBounds;
use gaitopt::sampling::shifted_halton;

/// Smooth test landscape on the unit cube with a single interior peak.
pub fn peak(x: &[f64]) -> f64 {
    let c = [0.3, 0.6, 0.5, 0.4, 0.7];
    (-x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 4.0).exp()
}

/// `n` quasi-random unit-cube inputs with the peak's values.
pub fn dataset(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = shifted_halton(n, 5, seed);
    let y = x.iter().map(|u| peak(u)).collect();
    (x, y)
}

/// Midpoint gait of the default design box.
pub fn centre() -> gaitopt::params::GaitParams {
    DesignBounds::default().center()
}
