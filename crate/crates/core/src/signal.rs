//! Small helpers for analysing uniformly sampled periodic signals.

/// Times of upward zero crossings of `x - level`, linearly interpolated.
pub fn upward_crossings(x: &[f64], level: f64, dt: f64) -> Vec<f64> {
    x.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] - level < 0.0 && w[1] - level >= 0.0)
        .map(|(i, w)| {
            let a = w[0] - level;
            let b = w[1] - level;
            (i as f64 + a / (a - b)) * dt
        })
        .collect()
}

/// Mean period from upward crossings of the signal mean, or `None` with
/// fewer than two crossings.
pub fn mean_period(x: &[f64], dt: f64) -> Option<f64> {
    let level = x.iter().sum::<f64>() / x.len() as f64;
    let c = upward_crossings(x, level, dt);
    (c.len() >= 2).then(|| (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64)
}

/// Mean delay, seconds, from each upward mean-crossing of `lead` to the next
/// upward mean-crossing of `lag`. `None` without a matched pair.
pub fn crossing_lag(lead: &[f64], lag: &[f64], dt: f64) -> Option<f64> {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let a = upward_crossings(lead, mean(lead), dt);
    let b = upward_crossings(lag, mean(lag), dt);
    let delays: Vec<f64> = a
        .iter()
        .filter_map(|&t| b.iter().find(|&&u| u >= t).map(|u| u - t))
        .collect();
    (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn sine_period_and_lag() {
        let dt = 1e-3;
        let x: Vec<f64> = (0..4000).map(|n| (TAU * 1.25 * n as f64 * dt).sin()).collect();
        let y: Vec<f64> = (0..4000).map(|n| (TAU * 1.25 * (n as f64 * dt - 0.1)).sin()).collect();
        assert!((mean_period(&x, dt).unwrap() - 0.8).abs() < 1e-6);
        assert!((crossing_lag(&x, &y, dt).unwrap() - 0.1).abs() < 1e-6);
    }
}
