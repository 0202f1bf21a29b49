//! Synthetic two-fidelity gait plant.
//!
//! This is a deliberately simple stand-in for a multibody robot simulation
//! and for the physical robot. A gait is synthesized with the real CPG and
//! kinematics; each foot is in stance while its height is below a clearance
//! threshold, and the body is propelled by the backward sweep of the stance
//! feet, discounted when a stance foot accelerates beyond a friction budget.
//! The high-fidelity variant perturbs the morphology and actuation response
//! and adds measurement noise, which produces a controlled reality gap.
//!
//! None of the absolute speeds produced here correspond to a real robot.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cpg::{self, CpgConstants, GaitTrajectory, LEGS};
use crate::error::{Error, Result};
use crate::kinematics::{foot_position, LegGeometry};
pub use crate::mtgp::FidelityTag;
use crate::params::{DesignBounds, GaitParams};

/// Systematic differences of the high-fidelity plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphologyPerturbation {
    /// Multiplier on the effective leg length.
    pub leg_length: f64,
    /// Multiplier on the realized bend amplitude.
    pub bend_response: f64,
    /// Multiplier on the realized compression amplitude.
    pub compression_response: f64,
    /// Extra latency of the compression actuator relative to bend, seconds.
    /// Its phase cost grows with frequency.
    pub compression_delay: f64,
    /// Multiplier on the shape-ratio skew `alpha - 0.5`; below 1 the servos
    /// smooth asymmetric waveforms toward harmonic.
    pub shape_response: f64,
    /// Multiplier on the frequency actually tracked by the servos.
    pub frequency_response: f64,
    /// Multiplier on the friction (acceleration) budget.
    pub friction: f64,
}

impl MorphologyPerturbation {
    pub const IDENTITY: Self = Self {
        leg_length: 1.0,
        bend_response: 1.0,
        compression_response: 1.0,
        compression_delay: 0.0,
        shape_response: 1.0,
        frequency_response: 1.0,
        friction: 1.0,
    };
}

impl Default for MorphologyPerturbation {
    fn default() -> Self {
        Self {
            leg_length: 0.85,
            bend_response: 0.85,
            compression_response: 0.85,
            compression_delay: 0.1,
            shape_response: 0.6,
            frequency_response: 0.9,
            friction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub geometry: LegGeometry,
    pub cpg: CpgConstants,
    /// A foot is in stance while its height is below this, meters.
    pub ground_clearance_threshold: f64,
    /// Strength of the slip discount.
    pub slip_gain: f64,
    /// Horizontal stance-foot acceleration tolerated without slip, m/s².
    pub slip_budget: f64,
    /// Gaits whose mean slip multiplier falls below this are invalid.
    pub slip_saturation: f64,
    pub morphology_perturbation: MorphologyPerturbation,
    /// Standard deviation of additive high-fidelity measurement noise, m/s.
    pub noise_sd: f64,
    /// Simulated horizon and step, seconds.
    pub duration: f64,
    pub dt: f64,
    pub bounds: DesignBounds,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            geometry: LegGeometry::default(),
            cpg: CpgConstants::default(),
            ground_clearance_threshold: 0.006,
            slip_gain: 0.25,
            slip_budget: 4.0,
            slip_saturation: 0.2,
            morphology_perturbation: MorphologyPerturbation::default(),
            noise_sd: 0.01,
            duration: 28.0,
            dt: 1e-3,
            bounds: DesignBounds::default(),
            seed: 0,
        }
    }
}

/// Named plant configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Default,
    ZeroGap,
    ExtremeGap,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Default, Preset::ZeroGap, Preset::ExtremeGap];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::ZeroGap => "zero-gap",
            Preset::ExtremeGap => "extreme-gap",
        }
    }

    pub fn config(self) -> PlantConfig {
        match self {
            Preset::Default => PlantConfig::default(),
            Preset::ZeroGap => PlantConfig {
                morphology_perturbation: MorphologyPerturbation::IDENTITY,
                noise_sd: 0.0,
                ..PlantConfig::default()
            },
            Preset::ExtremeGap => PlantConfig {
                morphology_perturbation: MorphologyPerturbation {
                    leg_length: 1.3,
                    bend_response: 0.7,
                    compression_response: 0.6,
                    compression_delay: 0.25,
                    shape_response: 0.5,
                    frequency_response: 0.75,
                    friction: 0.35,
                },
                noise_sd: 0.02,
                // Slower servos need a longer horizon for ten periods.
                duration: 34.0,
                ..PlantConfig::default()
            },
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown plant preset '{s}' (expected default, zero-gap or extreme-gap)")))
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.cpg.validate()?;
        self.bounds.validate()?;
        let slowest = self.bounds.lower[2] * self.morphology_perturbation.frequency_response.min(1.0);
        let min_duration = 10.0 / slowest;
        if self.duration < min_duration {
            return Err(Error::Config(format!(
                "duration {} s must cover ten periods of the slowest admissible gait ({min_duration} s)",
                self.duration
            )));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0 / (100.0 * self.bounds.upper[2])) {
            return Err(Error::Config(format!(
                "dt {} s exceeds one hundredth of the fastest admissible period",
                self.dt
            )));
        }
        if !(self.noise_sd >= 0.0) || !(self.ground_clearance_threshold > 0.0) {
            return Err(Error::Config("noise_sd must be >= 0 and the clearance threshold > 0".into()));
        }
        if !(self.slip_gain >= 0.0 && self.slip_budget >= 0.0) {
            return Err(Error::Config("slip settings must be non-negative".into()));
        }
        Ok(())
    }
}

/// Result of one gait evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitEvaluation {
    /// Stabilized mean walking speed, m/s. Zero for invalid gaits.
    pub speed: f64,
    pub valid: bool,
    pub features: GaitFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaitFeatures {
    /// Mean fraction of time a foot spends in stance.
    pub duty_factor: f64,
    /// Mean horizontal foot excursion, m.
    pub stride_length: f64,
    /// Mean vertical foot excursion, m.
    pub step_height: f64,
}

/// Mean of the samples strictly after `cutoff` seconds.
pub fn stabilized_speed(series: &[f64], dt: f64, cutoff: f64) -> Result<f64> {
    let start = (cutoff / dt).floor() as usize + 1;
    if start >= series.len() {
        return Err(Error::InsufficientData(format!(
            "series of {} samples ends before the {cutoff} s cutoff",
            series.len()
        )));
    }
    let tail = &series[start..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Body-speed trace plus the bookkeeping needed for validity and features.
#[derive(Debug, Clone)]
pub struct SpeedTrace {
    pub dt: f64,
    pub speed: Vec<f64>,
    pub cutoff: f64,
    slip_multiplier_sum: f64,
    stance_samples: usize,
    features: GaitFeatures,
}

/// Parameters actually realized by the plant at `fidelity`, plus its geometry.
fn realized(p: &GaitParams, cfg: &PlantConfig, fidelity: FidelityTag) -> (GaitParams, LegGeometry, f64) {
    match fidelity {
        FidelityTag::Low => (*p, cfg.geometry, cfg.slip_budget),
        FidelityTag::High => {
            let m = &cfg.morphology_perturbation;
            let f = p.f * m.frequency_response;
            let phi = (p.phi + TAU * f * m.compression_delay).rem_euclid(TAU);
            let q = GaitParams {
                a_alpha_b: p.a_alpha_b * m.bend_response,
                a_z_l: p.a_z_l * m.compression_response,
                f,
                alpha: 0.5 + (p.alpha - 0.5) * m.shape_response,
                phi,
            };
            let geometry = LegGeometry {
                l_leg: cfg.geometry.l_leg * m.leg_length,
                ..cfg.geometry
            };
            (q, geometry, cfg.slip_budget * m.friction)
        }
    }
}

/// Runs the stance/slip body-speed model over a synthesized trajectory.
pub fn speed_trace(traj: &GaitTrajectory, geom: &LegGeometry, cfg: &PlantConfig, slip_budget: f64, cutoff: f64) -> SpeedTrace {
    let dt = traj.dt;
    let n = traj.len();
    let (series, map) = traj.distinct();
    let start = (cutoff / dt).floor() as usize + 1;

    // Per distinct series: horizontal position and stance flag.
    let mut xs = Vec::with_capacity(series.len());
    let mut stance = Vec::with_capacity(series.len());
    let mut features = GaitFeatures::default();
    for s in series {
        let mut x = Vec::with_capacity(n);
        let mut st = Vec::with_capacity(n);
        for state in s {
            let foot = foot_position(state, geom);
            x.push(foot.x);
            st.push(foot.z < cfg.ground_clearance_threshold);
        }
        xs.push(x);
        stance.push(st);
    }
    // Features use the post-transient window of each leg.
    for &j in &map {
        let window = start.min(n)..n;
        let m = window.len().max(1) as f64;
        let duty = stance[j][window.clone()].iter().filter(|&&b| b).count() as f64 / m;
        let (lo, hi) = min_max(&xs[j][window.clone()]);
        let (zlo, zhi) = min_max(
            &series[j][window]
                .iter()
                .map(|s| foot_position(s, geom).z)
                .collect::<Vec<_>>(),
        );
        features.duty_factor += duty / LEGS as f64;
        features.stride_length += (hi - lo) / LEGS as f64;
        features.step_height += (zhi - zlo) / LEGS as f64;
    }

    let mut speed = vec![0.0; n];
    let mut slip_multiplier_sum = 0.0;
    let mut stance_samples = 0usize;
    for t in 2..n {
        let mut sum = 0.0;
        for &j in &map {
            if !stance[j][t] {
                continue;
            }
            let x = &xs[j];
            let v = (x[t] - x[t - 1]) / dt;
            let a = (x[t] - 2.0 * x[t - 1] + x[t - 2]) / (dt * dt);
            let slip = 1.0 / (1.0 + cfg.slip_gain * (a.abs() - slip_budget).max(0.0));
            sum += -v * slip;
            if t >= start {
                slip_multiplier_sum += slip;
                stance_samples += 1;
            }
        }
        // Mean over stance feet times (stance count)/4 is the plain sum over 4.
        speed[t] = sum / LEGS as f64;
    }
    SpeedTrace {
        dt,
        speed,
        cutoff,
        slip_multiplier_sum,
        stance_samples,
        features,
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Simulates a gait at the given fidelity and returns its stabilized speed.
///
/// Low fidelity is noiseless and ignores `seed`; high fidelity perturbs the
/// morphology and adds Gaussian noise drawn from `seed`.
pub fn evaluate_gait(p: &GaitParams, cfg: &PlantConfig, fidelity: FidelityTag, seed: u64) -> Result<GaitEvaluation> {
    p.validate()?;
    cfg.bounds.check(p)?;
    let (q, geom, budget) = realized(p, cfg, fidelity);
    let traj = cpg::leg_trajectories(&q, &cfg.cpg, cfg.duration, cfg.dt)?;
    let cutoff = cpg::transient_cutoff(q.f, cfg.cpg.k);
    let trace = speed_trace(&traj, &geom, cfg, budget, cutoff);
    Ok(finish(&trace, cfg, fidelity, seed))
}

fn finish(trace: &SpeedTrace, cfg: &PlantConfig, fidelity: FidelityTag, seed: u64) -> GaitEvaluation {
    let mean = stabilized_speed(&trace.speed, trace.dt, trace.cutoff).unwrap_or(0.0);
    let slip_ok = trace.stance_samples > 0
        && trace.slip_multiplier_sum / trace.stance_samples as f64 >= cfg.slip_saturation;
    let valid = mean > 0.0 && slip_ok;
    let mut speed = if valid { mean } else { 0.0 };
    if valid && fidelity == FidelityTag::High && cfg.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.seed, seed));
        let noise = Normal::new(0.0, cfg.noise_sd).expect("finite sd").sample(&mut rng);
        speed = (speed + noise).max(0.0);
    }
    GaitEvaluation {
        speed,
        valid,
        features: trace.features,
    }
}

fn noise_seed(plant_seed: u64, eval_seed: u64) -> u64 {
    plant_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .rotate_left(17)
        ^ eval_seed.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// A black-box objective to maximize: design vector and evaluation seed in, speed out.
pub trait Objective: Sync {
    fn evaluate(&self, p: &GaitParams, eval_seed: u64) -> Result<GaitEvaluation>;

    /// Tag recorded with this objective's observations.
    fn fidelity(&self) -> FidelityTag {
        FidelityTag::Low
    }
}

impl<F> Objective for F
where
    F: Fn(&GaitParams, u64) -> Result<GaitEvaluation> + Sync,
{
    fn evaluate(&self, p: &GaitParams, eval_seed: u64) -> Result<GaitEvaluation> {
        self(p, eval_seed)
    }
}

/// The plant at one fidelity level.
#[derive(Debug, Clone)]
pub struct PlantObjective {
    pub config: PlantConfig,
    pub fidelity: FidelityTag,
}

impl Objective for PlantObjective {
    fn evaluate(&self, p: &GaitParams, eval_seed: u64) -> Result<GaitEvaluation> {
        evaluate_gait(p, &self.config, self.fidelity, eval_seed)
    }

    fn fidelity(&self) -> FidelityTag {
        self.fidelity
    }
}

/// Low- and high-fidelity objectives sharing one configuration.
pub fn make_fidelity_pair(cfg: &PlantConfig) -> (PlantObjective, PlantObjective) {
    (
        PlantObjective {
            config: cfg.clone(),
            fidelity: FidelityTag::Low,
        },
        PlantObjective {
            config: cfg.clone(),
            fidelity: FidelityTag::High,
        },
    )
}

/// Writes the post-transient foot trajectories (`t, leg, x, z, stance`) of a gait.
pub fn write_foot_trace<W: std::io::Write>(p: &GaitParams, cfg: &PlantConfig, fidelity: FidelityTag, out: W) -> Result<()> {
    let (q, geom, _) = realized(p, cfg, fidelity);
    let traj = cpg::leg_trajectories(&q, &cfg.cpg, cfg.duration, cfg.dt)?;
    let start = (cpg::transient_cutoff(q.f, cfg.cpg.k) / cfg.dt).floor() as usize + 1;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "leg", "x", "z", "stance"])?;
    for n in start..traj.len() {
        for leg in 0..LEGS {
            let foot = foot_position(&traj.leg(leg)[n], &geom);
            w.serialize((
                traj.time(n),
                leg + 1,
                foot.x,
                foot.z,
                u8::from(foot.z < cfg.ground_clearance_threshold),
            ))?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::LegState;
    use crate::sampling::shifted_halton;

    fn low(p: &GaitParams, cfg: &PlantConfig) -> GaitEvaluation {
        evaluate_gait(p, cfg, FidelityTag::Low, 0).unwrap()
    }

    /// Both fidelities at `n` seeded quasi-random points.
    fn paired_sample(cfg: &PlantConfig, n: usize) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = make_fidelity_pair(cfg);
        shifted_halton(n, 5, 7)
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let p = cfg.bounds.denormalize(u);
                (lo.evaluate(&p, i as u64).unwrap().speed, hi.evaluate(&p, i as u64).unwrap().speed)
            })
            .unzip()
    }

    fn corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn stabilized_speed_examples() {
        let dt = 0.01;
        assert!((stabilized_speed(&[0.3; 500], dt, 1.0).unwrap() - 0.3).abs() < 1e-12);
        // Ramp up to the cutoff, plateau after.
        let ramp: Vec<f64> = (0..500).map(|n| (n as f64 * dt).min(2.0) * 0.1).collect();
        assert!((stabilized_speed(&ramp, dt, 2.0).unwrap() - 0.2).abs() < 1e-12);
        // Whole periods of a sinusoid after the cutoff.
        let (m, f) = (0.05, 2.0);
        let sine: Vec<f64> = (0..=1000).map(|n| m + 0.02 * (std::f64::consts::TAU * f * n as f64 * dt).sin()).collect();
        let s = stabilized_speed(&sine, dt, 0.0).unwrap();
        assert!((s - m).abs() < 0.01 * m, "{s}");
        assert!(matches!(stabilized_speed(&[1.0; 10], dt, 0.2), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn evaluations_are_deterministic() {
        let cfg = PlantConfig::default();
        let p = GaitParams::new(0.45, 0.004, 1.3, 0.35, 2.5).unwrap();
        for tag in [FidelityTag::Low, FidelityTag::High] {
            let a = evaluate_gait(&p, &cfg, tag, 11).unwrap();
            let b = evaluate_gait(&p, &cfg, tag, 11).unwrap();
            assert_eq!(a.speed.to_bits(), b.speed.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn low_fidelity_ignores_seed_high_fidelity_does_not() {
        let cfg = PlantConfig::default();
        let p = GaitParams::new(0.5, 0.006, 1.6, 0.5, 1.0).unwrap();
        let lows: Vec<f64> = (0..5).map(|s| evaluate_gait(&p, &cfg, FidelityTag::Low, s).unwrap().speed).collect();
        assert!(lows.iter().all(|v| v.to_bits() == lows[0].to_bits()));
        let highs: Vec<f64> = (0..5).map(|s| evaluate_gait(&p, &cfg, FidelityTag::High, s).unwrap().speed).collect();
        assert!(highs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn zero_gap_objectives_coincide() {
        let cfg = Preset::ZeroGap.config();
        let (lo, hi) = make_fidelity_pair(&cfg);
        for (i, u) in shifted_halton(10, 5, 3).iter().enumerate() {
            let p = cfg.bounds.denormalize(u);
            assert_eq!(lo.evaluate(&p, i as u64).unwrap(), hi.evaluate(&p, 99).unwrap());
        }
    }

    #[test]
    fn minimal_gait_is_slow_but_not_negative() {
        let cfg = PlantConfig::default();
        let p = GaitParams::new(0.1, 0.001, 0.4, 0.5, 0.0).unwrap();
        let e = low(&p, &cfg);
        assert!(e.speed >= 0.0);
        assert!(e.speed < 0.01, "{}", e.speed);
    }

    #[test]
    fn motionless_legs_are_invalid() {
        let cfg = PlantConfig::default();
        let still = LegState::new(0.0, 0.0, 0.0).unwrap();
        let traj = GaitTrajectory::from_series(cfg.dt, vec![still; 5000]);
        let trace = speed_trace(&traj, &cfg.geometry, &cfg, cfg.slip_budget, 1.0);
        let e = finish(&trace, &cfg, FidelityTag::Low, 0);
        assert_eq!(e.speed, 0.0);
        assert!(!e.valid);
    }

    #[test]
    fn bend_amplitude_initially_helps() {
        let cfg = PlantConfig::default();
        // A plain trot; the bounds' center sits at phi = pi, where nothing moves.
        let base = GaitParams::new(0.3, 0.0045, 1.2, 0.5, 1.5).unwrap();
        let speeds: Vec<f64> = [0.1, 0.12, 0.14, 0.16, 0.18]
            .iter()
            .map(|&a| low(&GaitParams { a_alpha_b: a, ..base }, &cfg).speed)
            .collect();
        assert!(speeds.windows(2).all(|w| w[1] > w[0]), "{speeds:?}");
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let cfg = PlantConfig::default();
        let p = GaitParams::new(0.9, 0.004, 1.0, 0.5, 1.0).unwrap();
        assert!(evaluate_gait(&p, &cfg, FidelityTag::Low, 0).is_err());
    }

    #[test]
    fn invalid_gaits_report_zero() {
        let cfg = PlantConfig::default();
        for u in shifted_halton(40, 5, 5) {
            let e = low(&cfg.bounds.denormalize(&u), &cfg);
            assert!(e.speed >= 0.0);
            if !e.valid {
                assert_eq!(e.speed, 0.0);
            }
        }
    }

    #[test]
    fn default_gap_correlation_is_moderate() {
        let (lo, hi) = paired_sample(&PlantConfig::default(), 200);
        let rho = corr(&lo, &hi);
        assert!((0.45..=0.75).contains(&rho), "{rho}");
    }

    #[test]
    fn extreme_gap_correlation_is_weak() {
        let (lo, hi) = paired_sample(&Preset::ExtremeGap.config(), 200);
        let rho = corr(&lo, &hi);
        assert!(rho < 0.3, "{rho}");
    }

    #[test]
    fn presets_parse_and_validate() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            p.config().validate().unwrap();
        }
        assert!("moon".parse::<Preset>().is_err());
        let short = PlantConfig {
            duration: 5.0,
            ..PlantConfig::default()
        };
        assert!(matches!(short.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn foot_trace_has_four_legs_per_sample() {
        let cfg = PlantConfig::default();
        let p = cfg.bounds.center();
        let mut buf = Vec::new();
        write_foot_trace(&p, &cfg, FidelityTag::Low, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows % 4, 0);
        assert!(text.lines().nth(1).unwrap().split(',').nth(1) == Some("1"));
    }
}
