//! Single- and multi-fidelity Bayesian optimization plus baseline searches.

pub mod acquisition;
pub mod baseline;
pub mod history;

use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FitOptions, GpModel, Kernel};
use crate::mtgp::{FidelityDataset, FidelityTag, MtFitOptions, MtParams, MtgpModel};
use crate::params::{DesignBounds, GaitParams, DIM};
use crate::plant::Objective;
use crate::sampling::latin_hypercube;

pub use acquisition::{expected_improvement, propose_next, AcquisitionSettings, Proposal, Surrogate, TaskSurrogate};
pub use baseline::{run_baseline, BaselineConfig, BaselineMethod};
pub use history::{config_hash, HistoryRecord, Method, OptimizationHistory, PosteriorBest};

/// When hyperparameters are re-optimized during a run. Between refits the
/// model is conditioned on the new data with the previous hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSchedule {
    /// Full multi-start fit at every iteration while the data set is at most this large.
    pub full_until: usize,
    /// Beyond `full_until`, refit every this many iterations.
    pub every: usize,
    /// Starts used by the sparse refits (the first is the previous fit).
    pub late_restarts: usize,
    /// Hyperparameters are frozen once the data set exceeds this size.
    pub freeze_after: usize,
    pub restarts: usize,
}

impl Default for FitSchedule {
    fn default() -> Self {
        Self {
            full_until: 60,
            every: 5,
            late_restarts: 2,
            freeze_after: 150,
            restarts: 8,
        }
    }
}

impl FitSchedule {
    /// Number of starts for a fit on `n` points at `iteration`, or `None` to keep
    /// the previous hyperparameters.
    pub fn starts(&self, n: usize, iteration: usize, have_previous: bool) -> Option<usize> {
        if !have_previous || n <= self.full_until {
            Some(self.restarts)
        } else if n <= self.freeze_after && iteration % self.every.max(1) == 0 {
            Some(self.late_restarts.max(1))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub bounds: DesignBounds,
    /// Size of the space-filling initial design.
    pub n_init: usize,
    /// Single-fidelity iterations after the initial design.
    pub i_max: usize,
    /// High-fidelity iterations of the multi-fidelity phase.
    pub k_max: usize,
    pub seed: u64,
    pub acquisition: AcquisitionSettings,
    pub fit: FitSchedule,
    /// Initial coregionalization matrix for the multi-fidelity model.
    pub kf_init: [[f64; 2]; 2],
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            bounds: DesignBounds::default(),
            n_init: 10,
            i_max: 70,
            k_max: 15,
            seed: 0,
            acquisition: AcquisitionSettings::default(),
            fit: FitSchedule::default(),
            kf_init: [[1.0, 0.5], [0.5, 1.0]],
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.n_init < 2 {
            return Err(Error::Config(format!("n_init must be at least 2, got {}", self.n_init)));
        }
        if self.i_max < 1 || self.k_max < 1 {
            return Err(Error::Config("i_max and k_max must be at least 1".into()));
        }
        if self.acquisition.candidates == 0 {
            return Err(Error::Config("acquisition needs at least one candidate".into()));
        }
        crate::mtgp::normalize_kf(self.kf_init)?;
        Ok(())
    }
}

/// Resume and interruption control shared by all runners.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Evaluations of an earlier attempt. The run replays them instead of
    /// calling the objective, provided it proposes the same points.
    pub replay: Vec<HistoryRecord>,
    /// Stop after this many new (non-replayed) evaluations.
    pub stop_after: Option<usize>,
}

impl RunControl {
    pub fn resume(replay: Vec<HistoryRecord>) -> Self {
        Self {
            replay,
            stop_after: None,
        }
    }
}

/// Seed for stream `stream`, item `index` of a run seeded with `seed`.
pub fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_ACQ: u64 = 3;
const STREAM_FIT: u64 = 4;
pub(crate) const STREAM_BASELINE: u64 = 5;

/// Appends evaluations to a history, serving replayed records first.
pub(crate) struct Evaluator<'a> {
    pub history: OptimizationHistory,
    control: &'a RunControl,
    fresh: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(history: OptimizationHistory, control: &'a RunControl) -> Self {
        Self {
            history,
            control,
            fresh: 0,
        }
    }

    /// Evaluates `p`, or returns `None` once the new-evaluation allowance is spent.
    pub fn eval(&mut self, objective: &dyn Objective, p: GaitParams) -> Result<Option<f64>> {
        let idx = self.history.len();
        let tag = objective.fidelity();
        if let Some(r) = self.control.replay.get(idx) {
            if r.tag != tag || r.params.to_array().map(f64::to_bits) != p.to_array().map(f64::to_bits) {
                return Err(Error::ReplayMismatch(format!(
                    "evaluation {} was tag {} at {}, now tag {tag} at {p}",
                    idx + 1,
                    r.tag,
                    r.params
                )));
            }
            let (v, valid, ms) = (r.v, r.valid, r.wall_ms);
            self.history.push(tag, p, v, valid, ms);
            return Ok(Some(v));
        }
        if self.control.stop_after.is_some_and(|cap| self.fresh >= cap) {
            return Ok(None);
        }
        let seed = mix_seed(self.history.seed, STREAM_EVAL, idx as u64);
        let start = Instant::now();
        let (v, valid) = match objective.evaluate(&p, seed) {
            Ok(e) => (e.speed, e.valid),
            Err(e) => {
                warn!("evaluation {} at {p} failed ({e}); recorded as invalid", idx + 1);
                (0.0, false)
            }
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        self.fresh += 1;
        self.history.push(tag, p, v, valid, ms);
        debug!("{} #{}: v={v:.5} best={:.5}", self.history.method, idx + 1, self.history.best_value().unwrap_or(v));
        Ok(Some(v))
    }

    /// Evaluates independent points in parallel, appending them in order.
    /// Returns false if the allowance ran out part-way.
    pub fn eval_batch(&mut self, objective: &dyn Objective, points: &[GaitParams]) -> Result<bool> {
        let replayable = self.control.replay.len().saturating_sub(self.history.len()).min(points.len());
        for &p in &points[..replayable] {
            self.eval(objective, p)?;
        }
        let rest = &points[replayable..];
        let allowed = self.control.stop_after.map_or(rest.len(), |cap| cap.saturating_sub(self.fresh).min(rest.len()));
        let base = self.history.len();
        let tag = objective.fidelity();
        let seed = self.history.seed;
        let results: Vec<(f64, bool, f64)> = rest[..allowed]
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let start = Instant::now();
                let out = match objective.evaluate(p, mix_seed(seed, STREAM_EVAL, (base + i) as u64)) {
                    Ok(e) => (e.speed, e.valid),
                    Err(e) => {
                        warn!("evaluation {} at {p} failed ({e}); recorded as invalid", base + i + 1);
                        (0.0, false)
                    }
                };
                (out.0, out.1, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect();
        for (p, (v, valid, ms)) in rest.iter().zip(results) {
            self.history.push(tag, *p, v, valid, ms);
        }
        self.fresh += allowed;
        Ok(allowed == rest.len())
    }
}

macro_rules! eval_or_stop {
    ($ev:expr, $obj:expr, $p:expr, $partial:expr) => {
        match $ev.eval($obj, $p)? {
            Some(v) => v,
            None => return Ok($partial($ev.history)),
        }
    };
}
pub(crate) use eval_or_stop;

/// Result of a single-fidelity run.
#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub history: OptimizationHistory,
    /// Final surrogate; `None` for an interrupted run.
    pub model: Option<GpModel>,
}

/// Result of a multi-fidelity run.
#[derive(Debug, Clone)]
pub struct MfboOutcome {
    /// Phase-2 evaluations only.
    pub history: OptimizationHistory,
    pub model: Option<MtgpModel>,
}

fn unit_inputs(bounds: &DesignBounds, records: &[HistoryRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| bounds.normalize(&r.params).to_vec()).collect()
}

/// Holds the current single-task surrogate and refits it per the schedule.
struct GpState {
    model: Option<GpModel>,
}

impl GpState {
    fn update(&mut self, cfg: &BoConfig, history: &OptimizationHistory, iteration: usize) -> Result<&GpModel> {
        let x = unit_inputs(&cfg.bounds, &history.records);
        let y: Vec<f64> = history.records.iter().map(|r| r.v).collect();
        let prev = self.model.as_ref().map(|m| m.kernel().clone());
        let model = match cfg.fit.starts(x.len(), iteration, prev.is_some()) {
            Some(restarts) => {
                let opts = FitOptions {
                    restarts,
                    seed: mix_seed(cfg.seed, STREAM_FIT, iteration as u64),
                    warm_start: prev,
                    standardize: true,
                };
                GpModel::fit(x, &y, &opts)?.0
            }
            None => {
                let (scaling, _) = crate::gp::OutputScaling::standardize(&y);
                let kernel = prev.expect("schedule only skips with a previous fit");
                GpModel::condition(x, &y, kernel, scaling)?
            }
        };
        Ok(self.model.insert(model))
    }
}

fn posterior_best<F: Fn(&[f64]) -> crate::gp::Prediction>(bounds: &DesignBounds, records: &[&HistoryRecord], predict: F) -> Option<PosteriorBest> {
    records
        .iter()
        .map(|r| {
            let p = predict(&bounds.normalize(&r.params));
            PosteriorBest {
                params: r.params,
                predicted_mean: p.mean,
                predicted_variance: p.variance,
            }
        })
        .reduce(|a, b| if b.predicted_mean > a.predicted_mean { b } else { a })
}

/// Bayesian optimization with expected improvement: `n_init` Latin-hypercube
/// points, then `i_max` fit/propose/evaluate iterations.
pub fn run_bo(objective: &dyn Objective, cfg: &BoConfig, control: &RunControl) -> Result<BoOutcome> {
    cfg.validate()?;
    let hash = config_hash(&(Method::Bo, cfg));
    let mut ev = Evaluator::new(OptimizationHistory::new(Method::Bo, cfg.seed, hash), control);
    let partial = |history| BoOutcome { history, model: None };

    for u in latin_hypercube(cfg.n_init, DIM, mix_seed(cfg.seed, STREAM_INIT, 0)) {
        eval_or_stop!(ev, objective, cfg.bounds.denormalize(&u), partial);
    }
    let mut state = GpState { model: None };
    for i in 1..=cfg.i_max {
        let j_star = ev.history.best_value().expect("initial design evaluated");
        let model = state.update(cfg, &ev.history, i)?;
        let incumbent = cfg.bounds.normalize(&ev.history.best().expect("non-empty").params).to_vec();
        let prop = propose_next(model, DIM, j_star, &[incumbent], &cfg.acquisition, mix_seed(cfg.seed, STREAM_ACQ, i as u64));
        debug!("bo iteration {i}: ei={:.3e}", prop.ei);
        eval_or_stop!(ev, objective, cfg.bounds.denormalize(&prop.x), partial);
    }
    let mut history = ev.history;
    let model = state.update(cfg, &history, cfg.i_max + 1)?.clone();
    let all: Vec<&HistoryRecord> = history.records.iter().collect();
    history.posterior_best = posterior_best(&cfg.bounds, &all, |x| model.predict(x));
    history.complete = true;
    Ok(BoOutcome {
        history,
        model: Some(model),
    })
}

/// Multi-fidelity phase: starts from the phase-1 optimum and spends `k_max`
/// high-fidelity evaluations guided by a two-task model over both data sets.
///
/// `phase1` supplies the tag-1 observations; `phase1_kernel` (the phase-1
/// surrogate's hyperparameters) seeds the first fit.
pub fn run_mfbo(high: &dyn Objective, cfg: &BoConfig, phase1: &OptimizationHistory, phase1_kernel: Option<&Kernel>, control: &RunControl) -> Result<MfboOutcome> {
    cfg.validate()?;
    let p_star = phase1.best().ok_or(Error::MissingWarmStart)?.params;
    if high.fidelity() != FidelityTag::High {
        return Err(Error::InvalidArgument("phase-2 objective must be high fidelity".into()));
    }
    let hash = config_hash(&(Method::Mfbo, cfg, &phase1.config_hash));
    let mut ev = Evaluator::new(OptimizationHistory::new(Method::Mfbo, cfg.seed, hash), control);
    let partial = |history| MfboOutcome { history, model: None };

    let mut low = FidelityDataset::new();
    for r in &phase1.records {
        low.push(cfg.bounds.normalize(&r.params).to_vec(), FidelityTag::Low, r.v);
    }
    let dataset = |history: &OptimizationHistory| {
        let mut d = low.clone();
        for r in &history.records {
            d.push(cfg.bounds.normalize(&r.params).to_vec(), FidelityTag::High, r.v);
        }
        d
    };

    eval_or_stop!(ev, high, p_star, partial);
    let mut previous: Option<MtParams> = None;
    let mut model: Option<MtgpModel> = None;
    for k in 2..=cfg.k_max + 1 {
        let data = dataset(&ev.history);
        let opts = MtFitOptions {
            restarts: cfg.fit.restarts,
            seed: mix_seed(cfg.seed, STREAM_FIT, k as u64),
            kf_init: cfg.kf_init,
            warm_start: phase1_kernel.cloned(),
            previous: previous.clone(),
            standardize: true,
        };
        let (m, report) = MtgpModel::fit(data, &opts)?;
        debug!("mfbo k={k}: lml={:.3} rho={:.3}", report.lml, m.task_correlation());
        previous = Some(m.params().clone());
        if k > cfg.k_max {
            model = Some(m);
            break;
        }
        let surrogate = TaskSurrogate {
            model: &m,
            tag: FidelityTag::High,
        };
        let j_star = ev.history.best_value().expect("first high-fidelity point evaluated");
        let incumbent = cfg.bounds.normalize(&ev.history.best().expect("non-empty").params).to_vec();
        let prop = propose_next(&surrogate, DIM, j_star, &[incumbent], &cfg.acquisition, mix_seed(cfg.seed, STREAM_ACQ, k as u64));
        eval_or_stop!(ev, high, cfg.bounds.denormalize(&prop.x), partial);
    }
    let mut history = ev.history;
    let model = model.expect("final fit");
    let tag2: Vec<&HistoryRecord> = history.records.iter().collect();
    history.posterior_best = posterior_best(&cfg.bounds, &tag2, |x| model.predict(x, FidelityTag::High));
    history.complete = true;
    Ok(MfboOutcome {
        history,
        model: Some(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::GaitEvaluation;

    fn bowl(p: &GaitParams, _seed: u64) -> Result<GaitEvaluation> {
        let b = DesignBounds::default();
        let u = b.normalize(p);
        let target = [0.3, 0.6, 0.5, 0.4, 0.7];
        let d2: f64 = u.iter().zip(target).map(|(a, t)| (a - t) * (a - t)).sum();
        Ok(GaitEvaluation {
            speed: 1.0 - d2,
            valid: true,
            features: Default::default(),
        })
    }

    fn small() -> BoConfig {
        BoConfig {
            i_max: 6,
            k_max: 4,
            seed: 3,
            acquisition: AcquisitionSettings {
                candidates: 256,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn budget_and_monotone_best() {
        let cfg = BoConfig { i_max: 1, ..small() };
        let out = run_bo(&bowl, &cfg, &RunControl::default()).unwrap();
        assert_eq!(out.history.len(), cfg.n_init + 1);
        assert!(out.history.complete);
        let out = run_bo(&bowl, &small(), &RunControl::default()).unwrap();
        assert!(out.history.records.windows(2).all(|w| w[1].best >= w[0].best));
        assert!(out.history.posterior_best.is_some());
    }

    #[test]
    fn bo_improves_on_initial_design() {
        let cfg = BoConfig { i_max: 25, ..small() };
        let out = run_bo(&bowl, &cfg, &RunControl::default()).unwrap();
        let init_best = out.history.records[..cfg.n_init].iter().map(|r| r.v).fold(f64::MIN, f64::max);
        assert!(out.history.best_value().unwrap() > init_best);
        assert!(out.history.best_value().unwrap() > 0.97, "{}", out.history.best_value().unwrap());
    }

    #[test]
    fn interrupted_run_resumes_to_identical_history() {
        let cfg = small();
        let full = run_bo(&bowl, &cfg, &RunControl::default()).unwrap().history;
        let stopped = run_bo(
            &bowl,
            &cfg,
            &RunControl {
                replay: vec![],
                stop_after: Some(12),
            },
        )
        .unwrap()
        .history;
        assert!(!stopped.complete);
        assert_eq!(stopped.len(), 12);
        let resumed = run_bo(&bowl, &cfg, &RunControl::resume(stopped.records)).unwrap().history;
        assert!(resumed.complete);
        let strip = |h: &OptimizationHistory| h.records.iter().map(|r| (r.params, r.v.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&resumed), strip(&full));
    }

    #[test]
    fn replay_detects_divergence() {
        let cfg = small();
        let mut recs = run_bo(&bowl, &cfg, &RunControl::default()).unwrap().history.records;
        recs[0].params.f += 0.01;
        assert!(matches!(run_bo(&bowl, &cfg, &RunControl::resume(recs)), Err(Error::ReplayMismatch(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BoConfig { n_init: 1, ..small() };
        assert!(matches!(run_bo(&bowl, &cfg, &RunControl::default()), Err(Error::Config(_))));
    }

    struct High;
    impl Objective for High {
        fn evaluate(&self, p: &GaitParams, s: u64) -> Result<GaitEvaluation> {
            bowl(p, s)
        }
        fn fidelity(&self) -> FidelityTag {
            FidelityTag::High
        }
    }

    #[test]
    fn mfbo_starts_at_phase1_optimum_and_tags_high() {
        let cfg = small();
        let p1 = run_bo(&bowl, &cfg, &RunControl::default()).unwrap();
        let kernel = p1.model.as_ref().map(|m| m.kernel().clone());
        let out = run_mfbo(&High, &cfg, &p1.history, kernel.as_ref(), &RunControl::default()).unwrap();
        assert_eq!(out.history.len(), cfg.k_max);
        assert_eq!(out.history.records[0].params, p1.history.best().unwrap().params);
        assert!(out.history.records.iter().all(|r| r.tag == FidelityTag::High));
        assert!(out.model.unwrap().task_correlation() > 0.9);
    }

    #[test]
    fn mfbo_requires_phase1() {
        let empty = OptimizationHistory::new(Method::Bo, 0, "");
        assert!(matches!(run_mfbo(&High, &small(), &empty, None, &RunControl::default()), Err(Error::MissingWarmStart)));
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix_seed(1, 1, 0), mix_seed(1, 2, 0));
        assert_ne!(mix_seed(1, 1, 0), mix_seed(2, 1, 0));
        assert_eq!(mix_seed(5, 3, 9), mix_seed(5, 3, 9));
    }
}
