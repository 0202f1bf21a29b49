//! Single-output Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! Inputs are expected in the unit cube; outputs are standardized by an
//! [`OutputScaling`] before fitting, and predictions are mapped back.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{self, AscentSettings};
use crate::linalg::{Cholesky, SymMatrix};

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (0.05, 10.0);
pub const SIGNAL_BOUNDS: (f64, f64) = (0.01, 100.0);
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);

pub(crate) const GP_FORMAT: &str = "gaitopt-gp";
pub(crate) const FORMAT_VERSION: u32 = 1;

/// Predictive variances below zero but above this are clipped to zero.
const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Squared-exponential ARD kernel plus i.i.d. observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let k = Self {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        k.validate()?;
        Ok(k)
    }

    /// Unit signal variance, equal lengthscales.
    pub fn isotropic(dim: usize, lengthscale: f64, noise_variance: f64) -> Self {
        Self {
            signal_variance: 1.0,
            lengthscales: vec![lengthscale; dim],
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.noise_variance) || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::InvalidArgument(format!(
                "kernel hyperparameters must be finite and positive: {self:?}"
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one lengthscale".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `exp(-½ Σ_d (a_d - b_d)² / ℓ_d²)`.
    #[inline]
    pub fn correlation(&self, a: &[f64], b: &[f64]) -> f64 {
        se_correlation(a, b, &self.lengthscales)
    }

    #[inline]
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * self.correlation(a, b)
    }
}

#[inline]
pub(crate) fn se_correlation(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(lengthscales) {
        let u = (x - y) / l;
        s += u * u;
    }
    (-0.5 * s).exp()
}

/// Noise-free kernel value `k(p, p')`.
pub fn kernel_eval(p: &[f64], q: &[f64], k: &Kernel) -> f64 {
    k.covariance(p, q)
}

/// Affine map between objective units and the standardized units a model is fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub mean: f64,
    pub scale: f64,
}

impl OutputScaling {
    pub const IDENTITY: Self = Self { mean: 0.0, scale: 1.0 };

    /// Zero mean, unit variance. Returns `degenerate = true` (and unit scale)
    /// when the outputs have no spread.
    pub fn standardize(y: &[f64]) -> (Self, bool) {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            (Self { mean, scale: 1.0 }, true)
        } else {
            (Self { mean, scale: sd }, false)
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn inverse_mean(&self, m: f64) -> f64 {
        m * self.scale + self.mean
    }

    pub fn inverse_variance(&self, s: f64) -> f64 {
        s * self.scale * self.scale
    }
}

/// Posterior mean and latent variance at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Clips tiny negative variances from round-off; larger negative values are
/// reported and clipped too so callers always see a valid variance.
pub(crate) fn clip_variance(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        if v < -NEGATIVE_VARIANCE_TOL {
            log::warn!("predictive variance {v:e} below tolerance; clipped to 0");
        }
        0.0
    }
}

/// Squared coordinate differences of all input pairs `r > c`, cached for
/// repeated covariance assembly during fitting.
pub(crate) struct PairDiffs {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PairDiffs {
    pub(crate) fn new(inputs: &[Vec<f64>]) -> Self {
        let n = inputs.len();
        let dim = inputs.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dim);
        for r in 0..n {
            for c in 0..r {
                for d in 0..dim {
                    let u = inputs[r][d] - inputs[c][d];
                    data.push(u * u);
                }
            }
        }
        Self { n, dim, data }
    }

    /// Correlation matrix (unit diagonal) for the given lengthscales.
    pub(crate) fn correlations(&self, lengthscales: &[f64]) -> SymMatrix {
        let inv: Vec<f64> = lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        let mut k = 0;
        SymMatrix::from_lower(self.n, |r, c| {
            if r == c {
                return 1.0;
            }
            let mut s = 0.0;
            for i in &inv {
                s += self.data[k] * i;
                k += 1;
            }
            (-s).exp()
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }
}

fn covariance_matrix(inputs: &[Vec<f64>], k: &Kernel) -> SymMatrix {
    SymMatrix::from_lower(inputs.len(), |r, c| {
        let v = k.covariance(&inputs[r], &inputs[c]);
        if r == c {
            v + k.noise_variance
        } else {
            v
        }
    })
}

/// `-½ yᵀ A⁻¹ y - ½ log det A - (n/2) log 2π` from a factor of `A`.
pub(crate) fn gaussian_log_likelihood(chol: &Cholesky, y: &[f64]) -> f64 {
    let mut w = y.to_vec();
    chol.solve_lower_in_place(&mut w);
    let quad: f64 = w.iter().map(|v| v * v).sum();
    -0.5 * quad - 0.5 * chol.log_det() - 0.5 * y.len() as f64 * TAU.ln()
}

/// Log marginal likelihood of `outputs` (taken as given, no standardization).
pub fn log_marginal_likelihood(inputs: &[Vec<f64>], outputs: &[f64], k: &Kernel) -> Result<f64> {
    check_data(inputs, outputs, k.dim(), 1)?;
    let chol = Cholesky::factor_with_jitter(&covariance_matrix(inputs, k))?;
    Ok(gaussian_log_likelihood(&chol, outputs))
}

pub(crate) fn check_data(inputs: &[Vec<f64>], outputs: &[f64], dim: usize, min_points: usize) -> Result<()> {
    if inputs.len() != outputs.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: outputs.len(),
        });
    }
    if inputs.len() < min_points {
        return Err(Error::InsufficientData(format!(
            "need at least {min_points} observations, got {}",
            inputs.len()
        )));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(Error::InvalidArgument(format!(
            "input of dimension {} does not match kernel dimension {dim}",
            bad.len()
        )));
    }
    if outputs.iter().any(|v| !v.is_finite()) || inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training data".into()));
    }
    Ok(())
}

/// Settings for [`GpModel::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of ascent starts; the first is the warm start (or a default guess).
    pub restarts: usize,
    pub seed: u64,
    pub warm_start: Option<Kernel>,
    /// Standardize outputs before fitting.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            warm_start: None,
            standardize: true,
        }
    }
}

/// Outcome of a hyperparameter fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// LML at each start point.
    pub start_lml: Vec<f64>,
    /// LML at the returned hyperparameters.
    pub lml: f64,
    pub best_start: usize,
    pub evaluations: usize,
    /// Outputs had no spread; the model is a flat prior around their value.
    pub degenerate: bool,
}

/// A GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Kernel,
    inputs: Vec<Vec<f64>>,
    /// Standardized outputs.
    outputs: Vec<f64>,
    scaling: OutputScaling,
    chol: Cholesky,
    alpha: Vec<f64>,
    degenerate: bool,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters. `raw_outputs` are in
    /// objective units and mapped through `scaling`.
    pub fn condition(inputs: Vec<Vec<f64>>, raw_outputs: &[f64], kernel: Kernel, scaling: OutputScaling) -> Result<Self> {
        kernel.validate()?;
        check_data(&inputs, raw_outputs, kernel.dim(), 1)?;
        let outputs: Vec<f64> = raw_outputs.iter().map(|&v| scaling.forward(v)).collect();
        let chol = Cholesky::factor_with_jitter(&covariance_matrix(&inputs, &kernel))?;
        let alpha = chol.solve(&outputs);
        Ok(Self {
            kernel,
            inputs,
            outputs,
            scaling,
            chol,
            alpha,
            degenerate: false,
        })
    }

    /// Fits hyperparameters by multi-start maximization of the log marginal
    /// likelihood and conditions on the data.
    pub fn fit(inputs: Vec<Vec<f64>>, raw_outputs: &[f64], opts: &FitOptions) -> Result<(Self, FitReport)> {
        let dim = inputs.first().map_or(0, Vec::len);
        check_data(&inputs, raw_outputs, dim, 2)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional inputs".into()));
        }
        let (scaling, degenerate) = if opts.standardize {
            OutputScaling::standardize(raw_outputs)
        } else {
            (OutputScaling::IDENTITY, false)
        };
        if degenerate {
            log::warn!("all training outputs are equal; returning a flat model");
            let kernel = Kernel {
                signal_variance: SIGNAL_BOUNDS.0,
                lengthscales: vec![1.0; dim],
                noise_variance: NOISE_BOUNDS.0,
            };
            let mut model = Self::condition(inputs, raw_outputs, kernel, scaling)?;
            model.degenerate = true;
            let lml = model.log_marginal_likelihood();
            let report = FitReport {
                start_lml: vec![lml],
                lml,
                best_start: 0,
                evaluations: 1,
                degenerate: true,
            };
            return Ok((model, report));
        }
        let y: Vec<f64> = raw_outputs.iter().map(|&v| scaling.forward(v)).collect();
        let diffs = PairDiffs::new(&inputs);
        let objective = |theta: &[f64]| {
            let ls: Vec<f64> = theta[..dim].iter().map(|v| v.exp()).collect();
            let sf = theta[dim].exp();
            let noise = theta[dim + 1].exp();
            let mut k = diffs.correlations(&ls);
            k.scale(sf);
            k.add_diagonal(noise);
            match Cholesky::factor_with_jitter(&k) {
                Ok(ch) => gaussian_log_likelihood(&ch, &y),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let (lower, upper) = log_bounds(dim);
        let starts = fit_starts(dim, opts, &lower, &upper);
        let (best, results) = hyper::multi_start(&objective, &starts, &lower, &upper, &AscentSettings::default());
        let theta = &results[best].x;
        let kernel = Kernel {
            signal_variance: theta[dim].exp(),
            lengthscales: theta[..dim].iter().map(|v| v.exp()).collect(),
            noise_variance: theta[dim + 1].exp(),
        };
        let model = Self::condition(inputs, raw_outputs, kernel, scaling)?;
        let report = FitReport {
            start_lml: results.iter().map(|r| r.start_value).collect(),
            lml: results[best].value,
            best_start: best,
            evaluations: results.iter().map(|r| r.evaluations).sum(),
            degenerate: false,
        };
        debug_assert_eq!(diffs.dim(), dim);
        Ok((model, report))
    }

    /// Posterior at `x`, in objective units.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let p = self.predict_standardized(x);
        Prediction {
            mean: self.scaling.inverse_mean(p.mean),
            variance: self.scaling.inverse_variance(p.variance),
        }
    }

    /// Posterior at `x` in the standardized units the model was fitted in.
    pub fn predict_standardized(&self, x: &[f64]) -> Prediction {
        let mut kx: Vec<f64> = self.inputs.iter().map(|xi| self.kernel.covariance(xi, x)).collect();
        let mean: f64 = kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        self.chol.solve_lower_in_place(&mut kx);
        let explained: f64 = kx.iter().map(|v| v * v).sum();
        Prediction {
            mean,
            variance: clip_variance(self.kernel.signal_variance - explained),
        }
    }

    /// LML of the standardized training outputs under the current kernel.
    pub fn log_marginal_likelihood(&self) -> f64 {
        gaussian_log_likelihood(&self.chol, &self.outputs)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn scaling(&self) -> OutputScaling {
        self.scaling
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Training outputs in objective units.
    pub fn outputs(&self) -> Vec<f64> {
        self.outputs.iter().map(|&v| self.scaling.inverse_mean(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Jitter that was needed to factor the training covariance.
    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GpDocument {
            format: GP_FORMAT.into(),
            version: FORMAT_VERSION,
            kernel: self.kernel.clone(),
            scaling: self.scaling,
            inputs: self.inputs.clone(),
            outputs: self.outputs(),
            degenerate: self.degenerate,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GpDocument = serde_json::from_str(s)?;
        check_format(&doc.format, GP_FORMAT, doc.version)?;
        let mut model = Self::condition(doc.inputs, &doc.outputs, doc.kernel, doc.scaling)?;
        model.degenerate = doc.degenerate;
        Ok(model)
    }
}

pub(crate) fn check_format(found: &str, expected: &str, version: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Config(format!("expected a '{expected}' document, found '{found}'")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpDocument {
    format: String,
    version: u32,
    kernel: Kernel,
    scaling: OutputScaling,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    degenerate: bool,
}

/// Log-space box: lengthscales, then signal variance, then noise variance.
pub(crate) fn log_bounds(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![LENGTHSCALE_BOUNDS.0.ln(); dim];
    let mut upper = vec![LENGTHSCALE_BOUNDS.1.ln(); dim];
    lower.extend([SIGNAL_BOUNDS.0.ln(), NOISE_BOUNDS.0.ln()]);
    upper.extend([SIGNAL_BOUNDS.1.ln(), NOISE_BOUNDS.1.ln()]);
    (lower, upper)
}

fn fit_starts(dim: usize, opts: &FitOptions, lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let first = match &opts.warm_start {
        Some(k) if k.dim() == dim => {
            let mut v: Vec<f64> = k.lengthscales.iter().map(|l| l.ln()).collect();
            v.extend([k.signal_variance.ln(), k.noise_variance.ln()]);
            v
        }
        _ => {
            let mut v = vec![0.3_f64.ln(); dim];
            v.extend([0.0, 1e-2_f64.ln()]);
            v
        }
    };
    // Random starts are drawn from the central part of the box, where
    // plausible hyperparameters live; the ascent may still leave it.
    let mut lo = vec![0.05_f64.ln(); dim];
    let mut hi = vec![2.0_f64.ln(); dim];
    lo.extend([0.1_f64.ln(), 1e-6_f64.ln()]);
    hi.extend([10.0_f64.ln(), 0.1_f64.ln()]);
    debug_assert!(lo.iter().zip(lower).all(|(a, b)| a >= b) && hi.iter().zip(upper).all(|(a, b)| a <= b));
    let mut starts = vec![first];
    starts.extend(hyper::random_starts(&lo, &hi, opts.restarts.saturating_sub(1), opts.seed));
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Posterior by explicit dense inversion.
    fn dense_oracle(x: &[Vec<f64>], y: &[f64], k: &Kernel, q: &[f64]) -> (f64, f64) {
        let n = x.len();
        let kmat = DMatrix::from_fn(n, n, |r, c| {
            k.covariance(&x[r], &x[c]) + if r == c { k.noise_variance } else { 0.0 }
        });
        let inv = kmat.try_inverse().unwrap();
        let kq = DVector::from_fn(n, |r, _| k.covariance(&x[r], q));
        let yv = DVector::from_column_slice(y);
        let mean = (kq.transpose() * &inv * yv)[0];
        let var = k.signal_variance - (kq.transpose() * &inv * &kq)[0];
        (mean, var)
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>, Kernel) {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k = Kernel {
            signal_variance: rng.random_range(0.5..2.0),
            lengthscales: (0..dim).map(|_| rng.random_range(0.2..1.0)).collect(),
            noise_variance: rng.random_range(1e-3..1e-1),
        };
        (x, y, k)
    }

    #[test]
    fn kernel_examples() {
        let k = Kernel::new(2.0, vec![0.3; 5], 1e-6).unwrap();
        let p = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(kernel_eval(&p, &p, &k), 2.0);
        let k1 = Kernel::new(1.0, vec![0.3, 0.2, 0.1, 0.4, 0.5], 1e-6).unwrap();
        let mut q = p;
        q[2] += 0.1;
        assert!((kernel_eval(&p, &q, &k1) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn lml_single_point_examples() {
        let k = Kernel::new(0.5, vec![1.0], 0.5).unwrap();
        let x = vec![vec![0.2]];
        let a = log_marginal_likelihood(&x, &[0.0], &k).unwrap();
        let b = log_marginal_likelihood(&x, &[1.0], &k).unwrap();
        assert!((a + 0.918_938_533).abs() < 1e-6);
        assert!((b + 1.418_938_533).abs() < 1e-6);
    }

    #[test]
    fn duplicate_point_never_raises_lml() {
        // The duplicate adds log N(y; μ, v) with v >= noise, which is <= 0
        // whenever v >= 1/(2π).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (x, y, mut k) = random_instance(&mut rng, 3, 2);
            k.noise_variance = rng.random_range(0.2..1.0);
            let base = log_marginal_likelihood(&x, &y, &k).unwrap();
            let mut x2 = x.clone();
            let mut y2 = y.clone();
            x2.push(x[1].clone());
            y2.push(y[1]);
            let dup = log_marginal_likelihood(&x2, &y2, &k).unwrap();
            // Oracle: direct determinant and solve.
            let n = x2.len();
            let m = DMatrix::from_fn(n, n, |r, c| k.covariance(&x2[r], &x2[c]) + if r == c { k.noise_variance } else { 0.0 });
            let yv = DVector::from_column_slice(&y2);
            let quad = (yv.transpose() * m.clone().try_inverse().unwrap() * &yv)[0];
            let oracle = -0.5 * quad - 0.5 * m.determinant().ln() - 0.5 * n as f64 * TAU.ln();
            assert!((dup - oracle).abs() < 1e-9);
            assert!(dup <= base);
        }
    }

    #[test]
    fn predict_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let (x, y, k) = random_instance(&mut rng, 3 + i % 6, 1 + i % 5);
            let model = GpModel::condition(x.clone(), &y, k.clone(), OutputScaling::IDENTITY).unwrap();
            let q: Vec<f64> = (0..k.dim()).map(|_| rng.random()).collect();
            let (m, v) = dense_oracle(&x, &y, &k, &q);
            let p = model.predict(&q);
            assert!((p.mean - m).abs() < 1e-8, "{} vs {m}", p.mean);
            assert!((p.variance - v).abs() < 1e-8);
        }
    }

    #[test]
    fn three_point_1d_explicit_inverse() {
        let x = vec![vec![0.1], vec![0.5], vec![0.8]];
        let y = [0.3, -0.2, 0.9];
        let k = Kernel::new(1.3, vec![0.25], 0.01).unwrap();
        let model = GpModel::condition(x.clone(), &y, k.clone(), OutputScaling::IDENTITY).unwrap();
        let (m, v) = dense_oracle(&x, &y, &k, &[0.6]);
        let p = model.predict(&[0.6]);
        assert!((p.mean - m).abs() < 1e-10);
        assert!((p.variance - v).abs() < 1e-10);
    }

    #[test]
    fn interpolates_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..15).map(|_| (0..5).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[4]).collect();
        let k = Kernel::new(1.0, vec![0.4; 5], 1e-10).unwrap();
        let (scaling, _) = OutputScaling::standardize(&y);
        let model = GpModel::condition(x.clone(), &y, k, scaling).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let pr = model.predict(p);
            assert!((pr.mean - v).abs() < 1e-6);
            assert!(pr.variance < 1e-6);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let x = vec![vec![0.1, 0.1], vec![0.2, 0.3], vec![0.3, 0.2]];
        let y = [1.0, 2.0, 4.0];
        let k = Kernel::new(1.5, vec![0.05, 0.05], 1e-4).unwrap();
        let (scaling, _) = OutputScaling::standardize(&y);
        let model = GpModel::condition(x, &y, k, scaling).unwrap();
        let p = model.predict_standardized(&[0.95, 0.95]);
        assert!(p.mean.abs() < 1e-9);
        assert!((p.variance - 1.5).abs() / 1.5 < 0.01);
        let raw = model.predict(&[0.95, 0.95]);
        assert!((raw.mean - 7.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_lengthscale() {
        // Sample a GP path with lengthscale 0.3 at 30 points.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 2;
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let truth = Kernel::new(1.0, vec![0.3; dim], 1e-4).unwrap();
        let chol = Cholesky::factor_with_jitter(&covariance_matrix(&x, &truth)).unwrap();
        let z: Vec<f64> = (0..30)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let y: Vec<f64> = (0..30).map(|r| (0..=r).map(|c| chol.get(r, c) * z[c]).sum()).collect();
        let (model, report) = GpModel::fit(x, &y, &FitOptions::default()).unwrap();
        for l in &model.kernel().lengthscales {
            assert!(*l > 0.15 && *l < 0.6, "lengthscale {l}");
        }
        assert!(report.start_lml.iter().all(|s| report.lml >= *s));
        assert!((model.log_marginal_likelihood() - report.lml).abs() < 1e-6);
    }

    #[test]
    fn constant_outputs_give_flat_model() {
        let x = vec![vec![0.1], vec![0.4], vec![0.9]];
        let (model, report) = GpModel::fit(x, &[0.7; 3], &FitOptions::default()).unwrap();
        assert!(report.degenerate && model.is_degenerate());
        assert_eq!(model.kernel().signal_variance, SIGNAL_BOUNDS.0);
        for q in [0.0, 0.33, 0.77] {
            assert!((model.predict(&[q]).mean - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_rejects_too_few_points() {
        assert!(matches!(
            GpModel::fit(vec![vec![0.5]], &[1.0], &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y, k) = random_instance(&mut rng, 6, 3);
        let (scaling, _) = OutputScaling::standardize(&y);
        let model = GpModel::condition(x, &y, k, scaling).unwrap();
        let back = GpModel::from_json(&model.to_json().unwrap()).unwrap();
        let q = [0.3, 0.6, 0.9];
        let (a, b) = (model.predict(&q), back.predict(&q));
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.variance - b.variance).abs() < 1e-12);
        let bumped = model.to_json().unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(GpModel::from_json(&bumped), Err(Error::FormatVersion { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernel_is_symmetric(a in proptest::collection::vec(0.0..1.0f64, 5), b in proptest::collection::vec(0.0..1.0f64, 5)) {
            let k = Kernel::new(1.7, vec![0.2, 0.4, 0.6, 0.8, 1.0], 1e-6).unwrap();
            prop_assert_eq!(kernel_eval(&a, &b, &k), kernel_eval(&b, &a, &k));
        }

        #[test]
        fn variance_is_nonnegative_and_bounded(seed in 0u64..1000, q in proptest::collection::vec(0.0..1.0f64, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, k) = random_instance(&mut rng, 8, 3);
            let model = GpModel::condition(x, &y, k.clone(), OutputScaling::IDENTITY).unwrap();
            let p = model.predict(&q);
            prop_assert!(p.variance >= 0.0);
            prop_assert!(p.variance <= k.signal_variance + k.noise_variance + 1e-12);
        }

        #[test]
        fn extra_point_never_raises_variance(seed in 0u64..1000, q in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, k) = random_instance(&mut rng, 5, 1);
            let before = dense_oracle(&x[..4], &y[..4], &k, &[q]).1;
            let after = dense_oracle(&x, &y, &k, &[q]).1;
            let model = GpModel::condition(x, &y, k, OutputScaling::IDENTITY).unwrap();
            prop_assert!((model.predict(&[q]).variance - after).abs() < 1e-8);
            prop_assert!(after <= before + 1e-12);
        }
    }
}
