//! Non-model baselines: simulated annealing, random search and adaptive grid search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::history::{config_hash, Method, OptimizationHistory};
use super::{eval_or_stop, mix_seed, Evaluator, RunControl, STREAM_BASELINE};
use crate::error::{Error, Result};
use crate::params::{DesignBounds, GaitParams, DIM};
use crate::plant::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Sa,
    Rs,
    Ags,
}

impl BaselineMethod {
    pub fn method(self) -> Method {
        match self {
            BaselineMethod::Sa => Method::Sa,
            BaselineMethod::Rs => Method::Rs,
            BaselineMethod::Ags => Method::Ags,
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(BaselineMethod::Sa),
            "rs" => Ok(BaselineMethod::Rs),
            "ags" => Ok(BaselineMethod::Ags),
            other => Err(Error::Config(format!("unknown baseline method {other:?} (expected sa, rs or ags)"))),
        }
    }
}

/// Simulated-annealing schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaSettings {
    /// Typical objective magnitude; the initial temperature is a tenth of it.
    pub objective_scale: f64,
    /// Overrides the initial temperature when set. Zero gives hill climbing.
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    /// Proposal standard deviation in unit-cube coordinates, decayed
    /// geometrically from `step_start` to `step_end` over the budget.
    pub step_start: f64,
    pub step_end: f64,
}

impl Default for SaSettings {
    fn default() -> Self {
        Self {
            objective_scale: 0.2,
            initial_temperature: None,
            cooling: 0.97,
            step_start: 0.2,
            step_end: 0.01,
        }
    }
}

impl SaSettings {
    pub fn t0(&self) -> f64 {
        self.initial_temperature.unwrap_or(0.1 * self.objective_scale)
    }
}

/// Adaptive grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgsSettings {
    pub rounds: usize,
    pub points_per_dim: usize,
}

impl Default for AgsSettings {
    fn default() -> Self {
        Self {
            rounds: 3,
            points_per_dim: 4,
        }
    }
}

impl AgsSettings {
    pub fn budget(&self) -> usize {
        self.rounds * self.points_per_dim.pow(DIM as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub bounds: DesignBounds,
    /// Evaluation budget for SA and RS; AGS must match its grid size.
    pub budget: usize,
    pub seed: u64,
    pub sa: SaSettings,
    pub ags: AgsSettings,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            bounds: DesignBounds::default(),
            budget: 300,
            seed: 0,
            sa: SaSettings::default(),
            ags: AgsSettings::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, method: BaselineMethod) -> Result<()> {
        self.bounds.validate()?;
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        match method {
            BaselineMethod::Ags => {
                if self.ags.rounds == 0 || self.ags.points_per_dim == 0 {
                    return Err(Error::Config("AGS needs at least one round and one point per dimension".into()));
                }
                if self.budget != self.ags.budget() {
                    return Err(Error::Config(format!(
                        "AGS evaluates {} points ({} rounds of {}^{DIM}); budget is {}",
                        self.ags.budget(),
                        self.ags.rounds,
                        self.ags.points_per_dim,
                        self.budget
                    )));
                }
            }
            BaselineMethod::Sa => {
                let s = &self.sa;
                if !(s.t0() >= 0.0 && s.cooling > 0.0 && s.cooling <= 1.0 && s.step_start > 0.0 && s.step_end > 0.0) {
                    return Err(Error::Config("invalid SA schedule".into()));
                }
            }
            BaselineMethod::Rs => {}
        }
        Ok(())
    }
}

/// Runs one baseline for exactly `config.budget` evaluations.
pub fn run_baseline(method: BaselineMethod, objective: &dyn Objective, config: &BaselineConfig, control: &RunControl) -> Result<OptimizationHistory> {
    config.validate(method)?;
    let hash = config_hash(&(method.method(), config));
    let ev = Evaluator::new(OptimizationHistory::new(method.method(), config.seed, hash), control);
    let mut history = match method {
        BaselineMethod::Rs => random_search(ev, objective, config)?,
        BaselineMethod::Sa => annealing(ev, objective, config)?,
        BaselineMethod::Ags => grid_search(ev, objective, config)?,
    };
    history.complete = history.len() == config.budget;
    Ok(history)
}

fn random_search(mut ev: Evaluator, objective: &dyn Objective, cfg: &BaselineConfig) -> Result<OptimizationHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_BASELINE, 0));
    let points: Vec<GaitParams> = (0..cfg.budget)
        .map(|_| {
            let u: [f64; DIM] = std::array::from_fn(|_| rng.random());
            cfg.bounds.denormalize(&u)
        })
        .collect();
    ev.eval_batch(objective, &points)?;
    Ok(ev.history)
}

/// Metropolis acceptance of a move from `current` to `candidate` at temperature `t`.
pub fn accept(current: f64, candidate: f64, t: f64, u: f64) -> bool {
    if t <= 0.0 {
        candidate > current
    } else {
        candidate >= current || u < ((candidate - current) / t).exp()
    }
}

fn annealing(mut ev: Evaluator, objective: &dyn Objective, cfg: &BaselineConfig) -> Result<OptimizationHistory> {
    let s = &cfg.sa;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_BASELINE, 1));
    let mut x: [f64; DIM] = std::array::from_fn(|_| rng.random());
    let partial = |h| h;
    let mut fx = eval_or_stop!(ev, objective, cfg.bounds.denormalize(&x), partial);
    let span = (cfg.budget.max(2) - 1) as f64;
    for t in 1..cfg.budget {
        let sd = s.step_start * (s.step_end / s.step_start).powf((t - 1) as f64 / span);
        let cand: [f64; DIM] = std::array::from_fn(|d| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (x[d] + sd * z).clamp(0.0, 1.0)
        });
        let u: f64 = rng.random();
        let v = eval_or_stop!(ev, objective, cfg.bounds.denormalize(&cand), partial);
        let temp = s.t0() * s.cooling.powi(t as i32);
        if accept(fx, v, temp, u) {
            x = cand;
            fx = v;
        }
    }
    Ok(ev.history)
}

/// Centres of `n` equal cells along `[lo, hi]`.
fn cell_centres(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

fn grid_search(mut ev: Evaluator, objective: &dyn Objective, cfg: &BaselineConfig) -> Result<OptimizationHistory> {
    let n = cfg.ags.points_per_dim;
    let mut lo = cfg.bounds.lower;
    let mut hi = cfg.bounds.upper;
    for round in 0..cfg.ags.rounds {
        let axes: Vec<Vec<f64>> = (0..DIM).map(|d| cell_centres(lo[d], hi[d], n)).collect();
        let points: Vec<GaitParams> = (0..n.pow(DIM as u32))
            .map(|mut k| {
                GaitParams::from_array(std::array::from_fn(|d| {
                    let i = k % n;
                    k /= n;
                    axes[d][i]
                }))
            })
            .collect();
        let start = ev.history.len();
        if !ev.eval_batch(objective, &points)? {
            break;
        }
        let best = ev.history.records[start..]
            .iter()
            .reduce(|b, r| if r.v > b.v { r } else { b })
            .expect("non-empty round")
            .params
            .to_array();
        log::debug!("ags round {}: incumbent {}", round + 1, GaitParams::from_array(best));
        for d in 0..DIM {
            let w = (hi[d] - lo[d]) / n as f64;
            lo[d] = (best[d] - w).max(cfg.bounds.lower[d]);
            hi[d] = (best[d] + w).min(cfg.bounds.upper[d]);
        }
    }
    Ok(ev.history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::GaitEvaluation;

    const TARGET: [f64; DIM] = [0.37, 0.0052, 1.31, 0.62, 2.2];

    fn bowl(p: &GaitParams, _seed: u64) -> Result<GaitEvaluation> {
        let b = DesignBounds::default();
        let v = p.to_array();
        let d2: f64 = (0..DIM).map(|d| ((v[d] - TARGET[d]) / b.width(d)).powi(2) * (d + 1) as f64).sum();
        Ok(GaitEvaluation {
            speed: 1.0 - d2,
            valid: true,
            features: Default::default(),
        })
    }

    #[test]
    fn ags_lands_within_final_cell_of_argmax() {
        let cfg = BaselineConfig {
            budget: 3072,
            ..Default::default()
        };
        let h = run_baseline(BaselineMethod::Ags, &bowl, &cfg, &RunControl::default()).unwrap();
        assert_eq!(h.len(), 3072);
        assert!(h.complete);
        // Final-round cell width: the box shrinks to two cells of the previous round.
        let best = h.best().unwrap().params.to_array();
        let b = DesignBounds::default();
        for d in 0..DIM {
            let final_width = b.width(d) / 4.0 * (2.0f64 / 4.0).powi(2);
            assert!((best[d] - TARGET[d]).abs() <= final_width, "dim {d}: {} vs {}", best[d], TARGET[d]);
        }
    }

    #[test]
    fn ags_budget_must_match_grid() {
        let cfg = BaselineConfig::default();
        assert!(matches!(run_baseline(BaselineMethod::Ags, &bowl, &cfg, &RunControl::default()), Err(Error::Config(_))));
    }

    #[test]
    fn rs_uses_exact_budget() {
        let h = run_baseline(BaselineMethod::Rs, &bowl, &BaselineConfig::default(), &RunControl::default()).unwrap();
        assert_eq!(h.len(), 300);
        let b = DesignBounds::default();
        assert!(h.records.iter().all(|r| b.contains(&r.params)));
    }

    #[test]
    fn zero_temperature_is_hill_climbing() {
        assert!(accept(0.1, 0.2, 0.0, 0.0));
        assert!(!accept(0.2, 0.2, 0.0, 0.0));
        assert!(!accept(0.2, 0.1, 0.0, 0.0));
        assert!(accept(0.2, 0.1, 1.0, 0.5));
        let cfg = BaselineConfig {
            budget: 120,
            sa: SaSettings {
                initial_temperature: Some(0.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let h = run_baseline(BaselineMethod::Sa, &bowl, &cfg, &RunControl::default()).unwrap();
        assert_eq!(h.len(), 120);
        assert!(h.best_value().unwrap() > 0.9);
    }

    #[test]
    fn sa_beats_random_on_bowl() {
        let cfg = BaselineConfig::default();
        let sa = run_baseline(BaselineMethod::Sa, &bowl, &cfg, &RunControl::default()).unwrap();
        let rs = run_baseline(BaselineMethod::Rs, &bowl, &cfg, &RunControl::default()).unwrap();
        assert!(sa.best_value().unwrap() > rs.best_value().unwrap());
    }

    #[test]
    fn baselines_stop_and_resume() {
        let cfg = BaselineConfig {
            budget: 40,
            ..Default::default()
        };
        for m in [BaselineMethod::Sa, BaselineMethod::Rs] {
            let full = run_baseline(m, &bowl, &cfg, &RunControl::default()).unwrap();
            let cut = run_baseline(
                m,
                &bowl,
                &cfg,
                &RunControl {
                    replay: vec![],
                    stop_after: Some(15),
                },
            )
            .unwrap();
            assert!(!cut.complete);
            assert_eq!(cut.len(), 15);
            let resumed = run_baseline(m, &bowl, &cfg, &RunControl::resume(cut.records)).unwrap();
            assert_eq!(
                resumed.records.iter().map(|r| r.params).collect::<Vec<_>>(),
                full.records.iter().map(|r| r.params).collect::<Vec<_>>()
            );
        }
    }
}
