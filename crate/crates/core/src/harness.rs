//! Experiment orchestration: configuration, per-seed pipelines, artifacts,
//! summaries and reality-gap analysis.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::mtgp::{FidelityTag, MtgpModel};
use crate::optimizer::acquisition::pattern_search;
use crate::optimizer::{
    config_hash, mix_seed, run_baseline, run_bo, run_mfbo, BaselineConfig, BaselineMethod, BoConfig, Method, OptimizationHistory, RunControl,
};
use crate::params::{DesignBounds, GaitParams, DIM};
use crate::plant::{self, make_fidelity_pair, GaitEvaluation, Objective, PlantConfig, Preset};
use crate::sampling::shifted_halton;

const EXPERIMENT_FILE: &str = "experiment.json";
const SUMMARY_FILE: &str = "summary.csv";
const SWEEP_STREAM: u64 = 6;

/// Product-moment correlation of two samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("correlation needs at least two pairs, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPair {
    pub iteration: usize,
    pub params: GaitParams,
    pub v_high: f64,
    pub v_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub pairs: Vec<GapPair>,
    /// Pearson correlation of the pairs.
    pub rho: f64,
    /// Normalized off-diagonal of the fitted task covariance, when a model is given.
    pub kf_correlation: Option<f64>,
}

/// Re-evaluates every high-fidelity point of a multi-fidelity history on the
/// low-fidelity objective and correlates the two speed columns.
pub fn cross_validate_gap(history: &OptimizationHistory, low: &dyn Objective, model: Option<&MtgpModel>) -> Result<GapReport> {
    let high: Vec<_> = history.records.iter().filter(|r| r.tag == FidelityTag::High).collect();
    if high.is_empty() {
        return Err(Error::InsufficientData("history has no high-fidelity evaluations".into()));
    }
    let pairs = high
        .par_iter()
        .map(|r| {
            let v_low = low.evaluate(&r.params, r.iteration as u64)?.speed;
            Ok(GapPair {
                iteration: r.iteration,
                params: r.params,
                v_high: r.v,
                v_low,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vh: Vec<f64> = pairs.iter().map(|p| p.v_high).collect();
    let vl: Vec<f64> = pairs.iter().map(|p| p.v_low).collect();
    Ok(GapReport {
        rho: pearson(&vh, &vl)?,
        pairs,
        kf_correlation: model.map(MtgpModel::task_correlation),
    })
}

/// Reference optimum of a landscape: a quasi-random sweep whose best points
/// are optionally polished by coordinate pattern search. The default is a
/// plain 10^5-point sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub sweep_points: usize,
    pub polish_starts: usize,
    pub polish_passes: usize,
    pub polish_step: f64,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            sweep_points: 100_000,
            polish_starts: 0,
            polish_passes: 12,
            polish_step: 0.05,
            seed: 0,
        }
    }
}

/// Best point found by the sweep and polish, with its value. With no polish
/// starts and no extra starts this is the plain sweep maximum.
pub fn landscape_optimum(objective: &dyn Objective, bounds: &DesignBounds, settings: &OracleSettings, extra_starts: &[GaitParams]) -> (GaitParams, f64) {
    let value = |u: &[f64]| objective.evaluate(&bounds.denormalize(u), 0).map_or(0.0, |e| e.speed);
    let pts = shifted_halton(settings.sweep_points.max(1), DIM, mix_seed(settings.seed, SWEEP_STREAM, 0));
    let scores: Vec<f64> = pts.par_iter().map(|u| value(u)).collect();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut starts: Vec<(Vec<f64>, f64)> = order.iter().take(settings.polish_starts).map(|&i| (pts[i].clone(), scores[i])).collect();
    for p in extra_starts {
        let u = bounds.normalize(p).to_vec();
        let v = value(&u);
        starts.push((u, v));
    }
    let polished: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, (u, v))| pattern_search(&value, u, v, settings.polish_step, settings.polish_passes, settings.seed.wrapping_add(i as u64)))
        .collect();
    let best = order[0];
    let (u, v) = polished
        .into_iter()
        .fold((pts[best].clone(), scores[best]), |a, b| if b.1 > a.1 { b } else { a });
    (bounds.denormalize(&u), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    Bo,
    Mfbo,
    Baseline,
    Sweep,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Bo => "bo",
            Pipeline::Mfbo => "mfbo",
            Pipeline::Baseline => "baseline",
            Pipeline::Sweep => "sweep",
        }
    }
}

/// Everything needed to reproduce a run, stored as `experiment.json` in its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub bo: BoConfig,
    pub baseline: BaselineConfig,
    pub method: BaselineMethod,
    /// Quasi-random points per seed for the sweep pipeline.
    pub sweep_points: usize,
    /// Multi-fidelity runs: run the low-fidelity phase first.
    pub run_phase1: bool,
    /// Multi-fidelity runs: directory of an earlier single-fidelity run to warm-start from.
    pub phase1: Option<PathBuf>,
    /// Stop each seed after this many new evaluations (the run is then incomplete).
    pub stop_after: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Bo,
            preset: Preset::Default,
            seeds: vec![1],
            out: PathBuf::from("runs"),
            bo: BoConfig::default(),
            baseline: BaselineConfig::default(),
            method: BaselineMethod::Sa,
            sweep_points: 1000,
            run_phase1: false,
            phase1: None,
            stop_after: None,
        }
    }
}

/// Dotted paths of keys in `doc` that `schema` does not have.
fn unknown_keys(doc: &Value, schema: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(d), Value::Object(s)) = (doc, schema) else {
        return;
    };
    for (k, v) in d {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            Some(sub) => unknown_keys(v, sub, &path, out),
            None => out.push(path),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON document, rejecting it with every unknown key listed.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid experiment JSON: {e}")))?;
        let mut schema = serde_json::to_value(ExperimentConfig::default())?;
        // Optional fields are absent from the default; give them a placeholder.
        for key in ["phase1", "stop_after"] {
            schema[key] = Value::Bool(true);
        }
        let mut unknown = Vec::new();
        unknown_keys(&doc, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn plant(&self) -> PlantConfig {
        self.preset.config()
    }

    /// Hash of the settings that determine results; output location, seed
    /// list and stopping point are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.seeds.clear();
        c.stop_after = None;
        config_hash(&c)
    }

    pub fn bo_for(&self, seed: u64) -> BoConfig {
        BoConfig { seed, ..self.bo.clone() }
    }

    pub fn baseline_for(&self, seed: u64) -> BaselineConfig {
        BaselineConfig {
            seed,
            ..self.baseline.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("output directory is empty".into()));
        }
        self.plant().validate()?;
        match self.pipeline {
            Pipeline::Bo => self.bo.validate()?,
            Pipeline::Mfbo => {
                self.bo.validate()?;
                if !self.run_phase1 && self.phase1.is_none() {
                    return Err(Error::MissingWarmStart);
                }
            }
            Pipeline::Baseline => self.baseline.validate(self.method)?,
            Pipeline::Sweep => {
                if self.sweep_points < 2 {
                    return Err(Error::Config("a sweep needs at least two points".into()));
                }
            }
        }
        if self.stop_after == Some(0) {
            return Err(Error::Config("stop_after must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seed: u64,
    pub max_speed: f64,
    pub evaluations: usize,
    pub wall_s: f64,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub config_hash: String,
    pub rows: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn complete(&self) -> bool {
        self.rows.iter().all(|r| r.complete)
    }

    /// Plain-text table: method, max speed, evaluations, wall-clock.
    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>6} {:>12} {:>6} {:>10}  status\n", "method", "seed", "max speed", "evals", "time [s]");
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>6} {:>12.5} {:>6} {:>10.1}  {}\n",
                r.method,
                r.seed,
                r.max_speed,
                r.evaluations,
                r.wall_s,
                if r.complete { "complete" } else { "INCOMPLETE" }
            );
        }
        s
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    io(path, fs::write(path, contents))
}

fn read_file(path: &Path) -> Result<String> {
    io(path, fs::read_to_string(path))
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Model JSON wrapped with the provenance of the run that produced it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelArtifact {
    config_hash: String,
    seed: u64,
    model: Value,
}

fn write_model(path: &Path, hash: &str, seed: u64, model_json: &str) -> Result<()> {
    let doc = ModelArtifact {
        config_hash: hash.into(),
        seed,
        model: serde_json::from_str(model_json)?,
    };
    write_file(path, &serde_json::to_string_pretty(&doc)?)
}

fn read_model(path: &Path) -> Result<String> {
    let doc: ModelArtifact = serde_json::from_str(&read_file(path)?)?;
    Ok(doc.model.to_string())
}

fn write_history(dir: &Path, stem: &str, h: &OptimizationHistory) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = io(&csv_path, fs::File::create(&csv_path))?;
    h.write_csv(std::io::BufWriter::new(file))?;
    write_file(&dir.join(format!("{stem}.json")), &h.to_json()?)
}

fn read_history(dir: &Path, stem: &str) -> Result<Option<OptimizationHistory>> {
    let path = dir.join(format!("{stem}.json"));
    if !path.exists() {
        return Ok(None);
    }
    OptimizationHistory::from_json(&read_file(&path)?).map(Some)
}

/// Records of an earlier attempt, for replay.
fn previous_records(dir: &Path, stem: &str) -> Result<Vec<crate::optimizer::HistoryRecord>> {
    let path = dir.join(format!("{stem}.csv"));
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = io(&path, fs::File::open(&path))?;
    OptimizationHistory::read_csv_records(BufReader::new(file))
}

fn control(cfg: &ExperimentConfig, dir: &Path, stem: &str, resume: bool) -> Result<RunControl> {
    Ok(RunControl {
        replay: if resume { previous_records(dir, stem)? } else { Vec::new() },
        stop_after: cfg.stop_after,
    })
}

/// Per-seed bookkeeping persisted next to the histories.
#[derive(Serialize, Deserialize)]
struct SeedRun {
    config_hash: String,
    row: SummaryRow,
}

/// Runs (or, with `resume`, continues) every seed of the experiment and
/// writes the summary. Incomplete seeds are flagged, not treated as errors.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let root = cfg.out.clone();
    fs::create_dir_all(&root).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", root.display())))?;
    let exp_path = root.join(EXPERIMENT_FILE);
    if exp_path.exists() {
        let previous = ExperimentConfig::from_json(&read_file(&exp_path)?)?;
        if previous.hash() != hash {
            return Err(Error::Config(format!(
                "{} holds a different experiment; choose another output directory",
                root.display()
            )));
        }
    } else if resume {
        return Err(Error::Config(format!("nothing to resume in {}", root.display())));
    }
    write_file(&exp_path, &cfg.to_json()?).map_err(|e| Error::Config(format!("output directory is not writable: {e}")))?;

    let rows = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = seed_dir(&root, seed);
            io(&dir, fs::create_dir_all(&dir))?;
            let run_path = dir.join("run.json");
            let earlier: Option<SeedRun> = if resume && run_path.exists() {
                Some(serde_json::from_str(&read_file(&run_path)?)?)
            } else {
                None
            };
            if let Some(prev) = &earlier {
                if prev.row.complete && prev.config_hash == hash {
                    info!("seed {seed}: already complete");
                    return Ok(prev.row.clone());
                }
            }
            let start = Instant::now();
            let mut row = run_seed(cfg, &hash, seed, &dir, resume)?;
            row.wall_s = start.elapsed().as_secs_f64() + earlier.map_or(0.0, |p| p.row.wall_s);
            let rec = SeedRun {
                config_hash: hash.clone(),
                row: row.clone(),
            };
            write_file(&run_path, &serde_json::to_string_pretty(&rec)?)?;
            info!("seed {seed}: best {:.5} after {} evaluations{}", row.max_speed, row.evaluations, if row.complete { "" } else { " (incomplete)" });
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = root.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["method", "seed", "max_speed", "evaluations", "wall_s", "complete", "config_hash"])?;
    for r in &rows {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.max_speed.to_string(),
            r.evaluations.to_string(),
            format!("{:.3}", r.wall_s),
            r.complete.to_string(),
            hash.clone(),
        ])?;
    }
    io(&summary, w.flush())?;
    Ok(ExperimentReport {
        dir: root,
        config_hash: hash,
        rows,
    })
}

/// Continues the experiment stored in `dir`, optionally with a new stopping point.
pub fn resume_experiment(dir: &Path, stop_after: Option<usize>) -> Result<ExperimentReport> {
    let path = dir.join(EXPERIMENT_FILE);
    if !path.exists() {
        return Err(Error::Config(format!("{} has no {EXPERIMENT_FILE}", dir.display())));
    }
    let mut cfg = ExperimentConfig::from_json(&read_file(&path)?)?;
    cfg.out = dir.to_path_buf();
    cfg.stop_after = stop_after;
    run_experiment(&cfg, true)
}

fn row(method: Method, seed: u64, h: &OptimizationHistory) -> SummaryRow {
    SummaryRow {
        method: method.to_string(),
        seed,
        max_speed: h.best_value().unwrap_or(0.0),
        evaluations: h.len(),
        wall_s: 0.0,
        complete: h.complete,
    }
}

fn run_seed(cfg: &ExperimentConfig, hash: &str, seed: u64, dir: &Path, resume: bool) -> Result<SummaryRow> {
    let plant = cfg.plant();
    let (low, high) = make_fidelity_pair(&plant);
    match cfg.pipeline {
        Pipeline::Bo => {
            let mut out = run_bo(&low, &cfg.bo_for(seed), &control(cfg, dir, "history", resume)?)?;
            out.history.config_hash = hash.into();
            write_history(dir, "history", &out.history)?;
            if let Some(m) = &out.model {
                write_model(&dir.join("model.json"), hash, seed, &m.to_json()?)?;
            }
            Ok(row(Method::Bo, seed, &out.history))
        }
        Pipeline::Baseline => {
            let mut h = run_baseline(cfg.method, &low, &cfg.baseline_for(seed), &control(cfg, dir, "history", resume)?)?;
            h.config_hash = hash.into();
            write_history(dir, "history", &h)?;
            Ok(row(cfg.method.method(), seed, &h))
        }
        Pipeline::Mfbo => {
            let bo = cfg.bo_for(seed);
            let (phase1, kernel, spent) = phase1_for(cfg, hash, seed, dir, resume, &low)?;
            if !phase1.complete {
                return Ok(SummaryRow {
                    evaluations: 0,
                    max_speed: 0.0,
                    ..row(Method::Mfbo, seed, &phase1)
                });
            }
            // The stopping allowance covers both phases.
            let mut ctl = control(cfg, dir, "history", resume)?;
            ctl.stop_after = ctl.stop_after.map(|cap| cap.saturating_sub(spent));
            let mut out = run_mfbo(&high, &bo, &phase1, kernel.as_ref(), &ctl)?;
            out.history.config_hash = hash.into();
            write_history(dir, "history", &out.history)?;
            if let Some(m) = &out.model {
                write_model(&dir.join("model.json"), hash, seed, &m.to_json()?)?;
            }
            Ok(row(Method::Mfbo, seed, &out.history))
        }
        Pipeline::Sweep => {
            let h = run_sweep(cfg, hash, seed, dir, &low, &high)?;
            Ok(row(Method::Sweep, seed, &h))
        }
    }
}

/// Phase-1 history and surrogate kernel, loaded from `cfg.phase1` or produced
/// here, plus the number of new evaluations that took.
fn phase1_for(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    dir: &Path,
    resume: bool,
    low: &dyn Objective,
) -> Result<(OptimizationHistory, Option<crate::gp::Kernel>, usize)> {
    let load_kernel = |path: &Path| -> Result<Option<crate::gp::Kernel>> {
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(GpModel::from_json(&read_model(path)?)?.kernel().clone()))
    };
    if let Some(src) = &cfg.phase1 {
        let sdir = seed_dir(src, seed);
        let h = read_history(&sdir, "history")?.ok_or(Error::MissingWarmStart)?;
        if h.is_empty() || h.records.iter().any(|r| r.tag != FidelityTag::Low) {
            return Err(Error::Config(format!("{} is not a low-fidelity history", sdir.display())));
        }
        return Ok((h, load_kernel(&sdir.join("model.json"))?, 0));
    }
    if resume {
        if let Some(h) = read_history(dir, "phase1")? {
            if h.complete {
                return Ok((h, load_kernel(&dir.join("phase1-model.json"))?, 0));
            }
        }
    }
    let ctl = control(cfg, dir, "phase1", resume)?;
    let mut out = run_bo(low, &cfg.bo_for(seed), &ctl)?;
    let spent = out.history.len().saturating_sub(ctl.replay.len());
    out.history.config_hash = hash.into();
    write_history(dir, "phase1", &out.history)?;
    let kernel = match &out.model {
        Some(m) => {
            write_model(&dir.join("phase1-model.json"), hash, seed, &m.to_json()?)?;
            Some(m.kernel().clone())
        }
        None => None,
    };
    Ok((out.history, kernel, spent))
}

/// Evaluates seeded quasi-random points on both fidelities.
fn run_sweep(cfg: &ExperimentConfig, hash: &str, seed: u64, dir: &Path, low: &dyn Objective, high: &dyn Objective) -> Result<OptimizationHistory> {
    let bounds = cfg.bo.bounds;
    let pts: Vec<GaitParams> = shifted_halton(cfg.sweep_points, DIM, mix_seed(seed, SWEEP_STREAM, 0))
        .iter()
        .map(|u| bounds.denormalize(u))
        .collect();
    let evals = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let t = Instant::now();
            let l = low.evaluate(p, i as u64)?;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            let h = high.evaluate(p, mix_seed(seed, SWEEP_STREAM, i as u64 + 1))?;
            Ok((l, h, ms))
        })
        .collect::<Result<Vec<(GaitEvaluation, GaitEvaluation, f64)>>>()?;
    let mut history = OptimizationHistory::new(Method::Sweep, seed, hash);
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["index", "a_alpha_b", "a_z_l", "f", "alpha", "phi", "v_low", "v_high", "valid_low", "valid_high"])?;
    for (i, (p, (l, h, ms))) in pts.iter().zip(&evals).enumerate() {
        history.push(FidelityTag::Low, *p, l.speed, l.valid, *ms);
        let a = p.to_array();
        w.write_record([
            (i + 1).to_string(),
            a[0].to_string(),
            a[1].to_string(),
            a[2].to_string(),
            a[3].to_string(),
            a[4].to_string(),
            l.speed.to_string(),
            h.speed.to_string(),
            u8::from(l.valid).to_string(),
            u8::from(h.valid).to_string(),
        ])?;
    }
    io(&path, w.flush())?;
    let lo: Vec<f64> = evals.iter().map(|e| e.0.speed).collect();
    let hi: Vec<f64> = evals.iter().map(|e| e.1.speed).collect();
    match pearson(&lo, &hi) {
        Ok(rho) => info!("seed {seed}: fidelity correlation over {} points {rho:.3}", lo.len()),
        Err(e) => warn!("seed {seed}: fidelity correlation undefined ({e})"),
    }
    history.complete = true;
    write_history(dir, "history", &history)?;
    Ok(history)
}

/// Gap analysis of one seed of a multi-fidelity run directory.
#[derive(Debug, Clone)]
pub struct SeedGap {
    pub seed: u64,
    pub report: GapReport,
}

/// Cross-validates every seed of the multi-fidelity run in `dir`, writing
/// `gap.csv` next to each history.
pub fn analyze_gap(dir: &Path) -> Result<Vec<SeedGap>> {
    let cfg = ExperimentConfig::from_json(&read_file(&dir.join(EXPERIMENT_FILE))?)?;
    if cfg.pipeline != Pipeline::Mfbo {
        return Err(Error::Config(format!("{} is a {} run, not mfbo", dir.display(), cfg.pipeline.name())));
    }
    let (low, _) = make_fidelity_pair(&cfg.plant());
    cfg.seeds
        .iter()
        .map(|&seed| {
            let sdir = seed_dir(dir, seed);
            let h = read_history(&sdir, "history")?.ok_or_else(|| Error::InsufficientData(format!("{} has no phase-2 history", sdir.display())))?;
            let model_path = sdir.join("model.json");
            let model = if model_path.exists() {
                Some(MtgpModel::from_json(&read_model(&model_path)?)?)
            } else {
                None
            };
            let report = cross_validate_gap(&h, &low, model.as_ref())?;
            let path = sdir.join("gap.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["iteration", "v_high", "v_low"])?;
            for p in &report.pairs {
                w.write_record([p.iteration.to_string(), p.v_high.to_string(), p.v_low.to_string()])?;
            }
            io(&path, w.flush())?;
            Ok(SeedGap { seed, report })
        })
        .collect()
}

/// Simulates one gait, writing its foot trace to `trace` when given.
pub fn simulate_gait(p: &GaitParams, preset: Preset, fidelity: FidelityTag, seed: u64, trace: Option<&Path>) -> Result<GaitEvaluation> {
    let cfg = preset.config();
    let eval = plant::evaluate_gait(p, &cfg, fidelity, seed)?;
    if let Some(path) = trace {
        if let Some(parent) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            io(parent, fs::create_dir_all(parent))?;
        }
        let file = io(path, fs::File::create(path))?;
        plant::write_foot_trace(p, &cfg, fidelity, std::io::BufWriter::new(file))?;
    }
    Ok(eval)
}
