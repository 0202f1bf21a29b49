//! Two-task Gaussian process with an intrinsic coregionalization kernel.
//!
//! The covariance between `(p, j)` and `(p', j')` is `K_f[j][j'] · k(p, p')`
//! where `k` is a unit-variance squared-exponential ARD correlation shared by
//! both tasks. Observations are heterotopic: each task may be observed at its
//! own inputs. Noise variance is separate per task.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    self, check_format, clip_variance, gaussian_log_likelihood, se_correlation, Kernel, OutputScaling, Prediction,
    FORMAT_VERSION, LENGTHSCALE_BOUNDS, NOISE_BOUNDS,
};
use crate::hyper::{self, AscentSettings};
use crate::linalg::{Cholesky, SymMatrix};

const MTGP_FORMAT: &str = "gaitopt-mtgp";

/// Bounds on the diagonal of the coregionalization factor (so `K_f[j][j]` in `[0.01, 100]`)
/// and on its off-diagonal entry.
const FACTOR_DIAG_BOUNDS: (f64, f64) = (0.1, 10.0);
const FACTOR_OFFDIAG_BOUND: f64 = 10.0;

/// Data source of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum FidelityTag {
    /// Simulation: cheap, noiseless, biased.
    Low = 1,
    /// Physical robot stand-in: expensive and noisy.
    High = 2,
}

impl FidelityTag {
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            FidelityTag::Low
        } else {
            FidelityTag::High
        }
    }
}

impl From<FidelityTag> for u8 {
    fn from(t: FidelityTag) -> u8 {
        t as u8
    }
}

impl TryFrom<u8> for FidelityTag {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(FidelityTag::Low),
            2 => Ok(FidelityTag::High),
            other => Err(format!("unknown fidelity tag {other}")),
        }
    }
}

impl std::fmt::Display for FidelityTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Input in the unit cube.
    pub x: Vec<f64>,
    pub tag: FidelityTag,
    pub v: f64,
}

/// Heterotopic collection of tagged observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityDataset {
    entries: Vec<Observation>,
}

impl FidelityDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<f64>, tag: FidelityTag, v: f64) {
        self.entries.push(Observation { x, tag, v });
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, tag: FidelityTag) -> usize {
        self.entries.iter().filter(|e| e.tag == tag).count()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.x.len())
    }

    fn outputs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.v).collect()
    }

    fn validate(&self, min_points: usize) -> Result<()> {
        let inputs: Vec<Vec<f64>> = self.entries.iter().map(|e| e.x.clone()).collect();
        gp::check_data(&inputs, &self.outputs(), self.dim(), min_points)
    }
}

impl FromIterator<Observation> for FidelityDataset {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// `K_f = L Lᵀ` with `L = [[l11, 0], [l21, l22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoregionalizationMatrix {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl CoregionalizationMatrix {
    pub const IDENTITY: Self = Self {
        l11: 1.0,
        l21: 0.0,
        l22: 1.0,
    };

    /// Factors a symmetric positive-definite 2×2 matrix.
    pub fn from_matrix(k: [[f64; 2]; 2]) -> Result<Self> {
        let sym = (k[0][1] - k[1][0]).abs() <= 1e-12 * k[0][1].abs().max(1.0);
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        if !sym || !(k[0][0] > 0.0) || !(det > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "coregionalization matrix {k:?} is not symmetric positive definite"
            )));
        }
        let l11 = k[0][0].sqrt();
        let l21 = k[1][0] / l11;
        let l22 = (k[1][1] - l21 * l21).sqrt();
        Ok(Self { l11, l21, l22 })
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let off = self.l11 * self.l21;
        [[self.l11 * self.l11, off], [off, self.l21 * self.l21 + self.l22 * self.l22]]
    }

    #[inline]
    pub fn entry(&self, a: FidelityTag, b: FidelityTag) -> f64 {
        self.matrix()[a.index()][b.index()]
    }

    /// Off-diagonal of the normalized matrix.
    pub fn correlation(&self) -> Result<f64> {
        Ok(normalize_kf(self.matrix())?[0][1])
    }
}

/// `K'[i][j] = K[i][j] / sqrt(K[i][i] K[j][j])`.
pub fn normalize_kf(k: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coregionalization diagonal must be positive, got {k:?}"
        )));
    }
    let off = (k[0][1] / (k[0][0] * k[1][1]).sqrt()).clamp(-1.0, 1.0);
    let off_t = (k[1][0] / (k[0][0] * k[1][1]).sqrt()).clamp(-1.0, 1.0);
    Ok([[1.0, off], [off_t, 1.0]])
}

/// Hyperparameters of the two-task model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtParams {
    /// Shared lengthscales of the unit-variance base kernel.
    pub lengthscales: Vec<f64>,
    pub kf: CoregionalizationMatrix,
    /// Observation noise variance per task, indexed by [`FidelityTag::index`].
    pub noise: [f64; 2],
}

impl MtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| ok(l)) || !self.noise.iter().all(|&n| ok(n)) {
            return Err(Error::InvalidArgument(format!("invalid multi-task hyperparameters: {self:?}")));
        }
        let m = self.kf.matrix();
        if !(m[0][0] > 0.0 && m[1][1] > 0.0) {
            return Err(Error::InvalidArgument("coregionalization diagonal must be positive".into()));
        }
        Ok(())
    }

    /// Single-task kernel equivalent to task `tag` alone.
    pub fn task_kernel(&self, tag: FidelityTag) -> Kernel {
        Kernel {
            signal_variance: self.kf.entry(tag, tag),
            lengthscales: self.lengthscales.clone(),
            noise_variance: self.noise[tag.index()],
        }
    }
}

/// Noise-free covariance `K_f[j][j'] · k(p, p')`.
pub fn mt_kernel(a: (&[f64], FidelityTag), b: (&[f64], FidelityTag), base: &Kernel, kf: &CoregionalizationMatrix) -> f64 {
    kf.entry(a.1, b.1) * base.covariance(a.0, b.0)
}

/// Element-wise noise-free joint covariance of all dataset entries.
pub fn assemble_covariance(data: &FidelityDataset, base: &Kernel, kf: &CoregionalizationMatrix) -> SymMatrix {
    let e = data.entries();
    SymMatrix::from_lower(e.len(), |r, c| mt_kernel((&e[r].x, e[r].tag), (&e[c].x, e[c].tag), base, kf))
}

fn joint_covariance(data: &FidelityDataset, params: &MtParams) -> SymMatrix {
    let e = data.entries();
    let kf = params.kf.matrix();
    SymMatrix::from_lower(e.len(), |r, c| {
        let v = kf[e[r].tag.index()][e[c].tag.index()] * se_correlation(&e[r].x, &e[c].x, &params.lengthscales);
        if r == c {
            v + params.noise[e[r].tag.index()]
        } else {
            v
        }
    })
}

/// Settings for [`MtgpModel::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtFitOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Initial coregionalization matrix (also the frozen value for single-task data).
    pub kf_init: [[f64; 2]; 2],
    /// Lengthscales and task-1 noise to start from, e.g. from a single-task fit.
    pub warm_start: Option<Kernel>,
    /// Full hyperparameters to start from, e.g. the previous iteration's fit.
    pub previous: Option<MtParams>,
    pub standardize: bool,
}

impl Default for MtFitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            kf_init: [[1.0, 0.5], [0.5, 1.0]],
            warm_start: None,
            previous: None,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtFitReport {
    pub start_lml: Vec<f64>,
    pub lml: f64,
    pub best_start: usize,
    pub evaluations: usize,
    /// Only one task was observed; cross-task entries stayed at their initial values.
    pub single_task: bool,
    pub degenerate: bool,
}

/// A two-task GP conditioned on a heterotopic dataset.
#[derive(Debug, Clone)]
pub struct MtgpModel {
    params: MtParams,
    data: FidelityDataset,
    scaling: OutputScaling,
    /// Standardized outputs.
    y: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
    single_task: bool,
}

impl MtgpModel {
    pub fn condition(data: FidelityDataset, params: MtParams, scaling: OutputScaling) -> Result<Self> {
        params.validate()?;
        data.validate(1)?;
        if data.dim() != params.lengthscales.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset dimension {} does not match {} lengthscales",
                data.dim(),
                params.lengthscales.len()
            )));
        }
        let y: Vec<f64> = data.entries().iter().map(|e| scaling.forward(e.v)).collect();
        let chol = Cholesky::factor_with_jitter(&joint_covariance(&data, &params))?;
        let alpha = chol.solve(&y);
        let single_task = data.count(FidelityTag::Low) == 0 || data.count(FidelityTag::High) == 0;
        Ok(Self {
            params,
            data,
            scaling,
            y,
            chol,
            alpha,
            single_task,
        })
    }

    /// Jointly fits lengthscales, per-task noise and the factor of `K_f` by
    /// multi-start maximization of the heterotopic log marginal likelihood.
    /// Outputs of both tasks are standardized together.
    pub fn fit(data: FidelityDataset, opts: &MtFitOptions) -> Result<(Self, MtFitReport)> {
        data.validate(2)?;
        let dim = data.dim();
        let (scaling, degenerate) = if opts.standardize {
            OutputScaling::standardize(&data.outputs())
        } else {
            (OutputScaling::IDENTITY, false)
        };
        let init_kf = CoregionalizationMatrix::from_matrix(opts.kf_init)?;
        let n_low = data.count(FidelityTag::Low);
        let n_high = data.count(FidelityTag::High);
        let single_task = n_low == 0 || n_high == 0;
        if single_task {
            log::warn!("multi-task fit on a single task; cross-task covariance is not identifiable");
        }

        // Layout: ln ℓ (dim), ln σ²₁, ln σ²₂, ln l11, l21, ln l22.
        let (mut lower, mut upper) = (vec![LENGTHSCALE_BOUNDS.0.ln(); dim], vec![LENGTHSCALE_BOUNDS.1.ln(); dim]);
        lower.extend([NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.0.ln(), FACTOR_DIAG_BOUNDS.0.ln(), -FACTOR_OFFDIAG_BOUND, FACTOR_DIAG_BOUNDS.0.ln()]);
        upper.extend([NOISE_BOUNDS.1.ln(), NOISE_BOUNDS.1.ln(), FACTOR_DIAG_BOUNDS.1.ln(), FACTOR_OFFDIAG_BOUND, FACTOR_DIAG_BOUNDS.1.ln()]);

        let default_start = {
            let mut v = match &opts.warm_start {
                Some(k) if k.dim() == dim => k.lengthscales.iter().map(|l| l.ln()).collect(),
                _ => vec![0.3_f64.ln(); dim],
            };
            let n1 = opts.warm_start.as_ref().map_or(1e-2, |k| k.noise_variance);
            v.extend([n1.ln(), 1e-2_f64.ln()]);
            v.extend(factor_coords(&init_kf));
            v
        };
        let mut starts = vec![default_start.clone()];
        if let Some(prev) = &opts.previous {
            if prev.lengthscales.len() == dim {
                starts.push(params_to_coords(prev));
            }
        }
        let mut lo_r = vec![0.05_f64.ln(); dim];
        let mut hi_r = vec![2.0_f64.ln(); dim];
        lo_r.extend([1e-6_f64.ln(), 1e-6_f64.ln(), 0.5_f64.ln(), -1.0, 0.3_f64.ln()]);
        hi_r.extend([0.1_f64.ln(), 0.3_f64.ln(), 2.0_f64.ln(), 1.5, 1.5_f64.ln()]);
        let n_random = opts.restarts.saturating_sub(starts.len());
        starts.extend(hyper::random_starts(&lo_r, &hi_r, n_random, opts.seed));

        if single_task || degenerate {
            // Freeze the cross-task entry and the unobserved task.
            let frozen: &[usize] = if n_high == 0 {
                &[dim + 1, dim + 3, dim + 4]
            } else if n_low == 0 {
                &[dim, dim + 2, dim + 3]
            } else {
                &[dim + 3]
            };
            for &i in frozen {
                lower[i] = default_start[i];
                upper[i] = default_start[i];
                for s in &mut starts {
                    s[i] = default_start[i];
                }
            }
        }

        let y: Vec<f64> = data.entries().iter().map(|e| scaling.forward(e.v)).collect();
        let inputs: Vec<Vec<f64>> = data.entries().iter().map(|e| e.x.clone()).collect();
        let diffs = gp::PairDiffs::new(&inputs);
        let tags: Vec<usize> = data.entries().iter().map(|e| e.tag.index()).collect();
        let objective = |theta: &[f64]| {
            let p = coords_to_params(theta, dim);
            let kf = p.kf.matrix();
            let corr = diffs.correlations(&p.lengthscales);
            let k = SymMatrix::from_lower(tags.len(), |r, c| {
                let v = kf[tags[r]][tags[c]] * corr.get(r, c);
                if r == c {
                    v + p.noise[tags[r]]
                } else {
                    v
                }
            });
            match Cholesky::factor_with_jitter(&k) {
                Ok(ch) => gaussian_log_likelihood(&ch, &y),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let (best, results) = hyper::multi_start(&objective, &starts, &lower, &upper, &AscentSettings::default());
        let params = coords_to_params(&results[best].x, dim);
        let model = Self::condition(data, params, scaling)?;
        let report = MtFitReport {
            start_lml: results.iter().map(|r| r.start_value).collect(),
            lml: results[best].value,
            best_start: best,
            evaluations: results.iter().map(|r| r.evaluations).sum(),
            single_task,
            degenerate,
        };
        Ok((model, report))
    }

    /// Posterior of task `tag` at `x`, in objective units.
    pub fn predict(&self, x: &[f64], tag: FidelityTag) -> Prediction {
        let p = self.predict_standardized(x, tag);
        Prediction {
            mean: self.scaling.inverse_mean(p.mean),
            variance: self.scaling.inverse_variance(p.variance),
        }
    }

    pub fn predict_standardized(&self, x: &[f64], tag: FidelityTag) -> Prediction {
        let kf = self.params.kf.matrix();
        let j = tag.index();
        let mut kx: Vec<f64> = self
            .data
            .entries()
            .iter()
            .map(|e| kf[e.tag.index()][j] * se_correlation(&e.x, x, &self.params.lengthscales))
            .collect();
        let mean: f64 = kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        self.chol.solve_lower_in_place(&mut kx);
        let explained: f64 = kx.iter().map(|v| v * v).sum();
        Prediction {
            mean,
            variance: clip_variance(kf[j][j] - explained),
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        gaussian_log_likelihood(&self.chol, &self.y)
    }

    pub fn params(&self) -> &MtParams {
        &self.params
    }

    pub fn dataset(&self) -> &FidelityDataset {
        &self.data
    }

    pub fn scaling(&self) -> OutputScaling {
        self.scaling
    }

    pub fn is_single_task(&self) -> bool {
        self.single_task
    }

    /// Normalized off-diagonal of the fitted `K_f`.
    pub fn task_correlation(&self) -> f64 {
        self.params.kf.correlation().unwrap_or(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MtgpDocument {
            format: MTGP_FORMAT.into(),
            version: FORMAT_VERSION,
            params: self.params.clone(),
            kf: self.params.kf.matrix(),
            scaling: self.scaling,
            dataset: self.data.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MtgpDocument = serde_json::from_str(s)?;
        check_format(&doc.format, MTGP_FORMAT, doc.version)?;
        Self::condition(doc.dataset, doc.params, doc.scaling)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MtgpDocument {
    format: String,
    version: u32,
    params: MtParams,
    /// `K_f` itself, for readers; the factor in `params` is authoritative.
    kf: [[f64; 2]; 2],
    scaling: OutputScaling,
    dataset: FidelityDataset,
}

fn factor_coords(l: &CoregionalizationMatrix) -> [f64; 3] {
    [
        l.l11.clamp(FACTOR_DIAG_BOUNDS.0, FACTOR_DIAG_BOUNDS.1).ln(),
        l.l21.clamp(-FACTOR_OFFDIAG_BOUND, FACTOR_OFFDIAG_BOUND),
        l.l22.clamp(FACTOR_DIAG_BOUNDS.0, FACTOR_DIAG_BOUNDS.1).ln(),
    ]
}

fn params_to_coords(p: &MtParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.lengthscales.iter().map(|l| l.ln()).collect();
    v.extend([p.noise[0].ln(), p.noise[1].ln()]);
    v.extend(factor_coords(&p.kf));
    v
}

fn coords_to_params(theta: &[f64], dim: usize) -> MtParams {
    MtParams {
        lengthscales: theta[..dim].iter().map(|v| v.exp()).collect(),
        noise: [theta[dim].exp(), theta[dim + 1].exp()],
        kf: CoregionalizationMatrix {
            l11: theta[dim + 2].exp(),
            l21: theta[dim + 3],
            l22: theta[dim + 4].exp(),
        },
    }
}
