//! Central pattern generator built from coupled Hopf oscillators.
//!
//! A primitive oscillator runs free; each leg oscillator is driven by the
//! primitive through a phase-rotated coupling term, so the legs lock onto
//! fixed phase offsets. The bend channel of every leg follows the leg
//! oscillator's first state and the compression channel is the same waveform
//! shifted by the design delay and rescaled to its own amplitude.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{inverse_kinematics, LegGeometry, LegState};
use crate::params::GaitParams;

pub const LEGS: usize = 4;

/// Trot: diagonal pairs (1, 4) and (2, 3) in antiphase.
pub const TROT: [f64; LEGS] = [0.0, PI, PI, 0.0];

/// Constants that shape convergence and coordination but not the steady-state
/// gait, so they stay fixed while the design vector is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgConstants {
    /// Radial convergence gain, 1/s.
    pub k: f64,
    /// Steepness of the frequency-modulation sigmoid. The sigmoid acts on the
    /// state normalized by the oscillator amplitude.
    pub tau: f64,
    /// Coupling strength between primitive and leg oscillators.
    pub epsilon: f64,
    /// Phase offset of each leg relative to the primitive, radians.
    pub theta: [f64; LEGS],
    /// Walking direction; every leg's rotation angle is set to it.
    pub theta_ref: f64,
}

impl Default for CpgConstants {
    fn default() -> Self {
        Self {
            k: 1000.0,
            tau: 200.0,
            epsilon: 5.0,
            theta: TROT,
            theta_ref: 0.0,
        }
    }
}

impl CpgConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!("k must be positive, got {}", self.k)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coupling strength must be positive, got {}",
                self.epsilon
            )));
        }
        if !self.tau.is_finite() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite CPG constant".into()));
        }
        Ok(())
    }
}

/// Oscillator state pair `(o1, o2)`.
pub type OscState = [f64; 2];

/// States of the primitive and the four leg oscillators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorBank {
    pub primitive: OscState,
    pub legs: [OscState; LEGS],
    /// Elapsed time, seconds.
    pub t: f64,
}

impl OscillatorBank {
    pub fn new(primitive: OscState, legs: [OscState; LEGS]) -> Self {
        Self {
            primitive,
            legs,
            t: 0.0,
        }
    }

    /// Starts every oscillator on its limit cycle at its locked phase.
    pub fn on_limit_cycle(amplitude: f64, theta: &[f64; LEGS]) -> Self {
        Self::new(
            [amplitude, 0.0],
            std::array::from_fn(|i| [amplitude * theta[i].cos(), amplitude * theta[i].sin()]),
        )
    }
}

/// State-dependent frequency that skews the time spent in each half-cycle.
///
/// `alpha = 0.5` leaves `f` unchanged; otherwise the frequency moves between
/// `f / (2 alpha)` (for `o2` very negative) and `f / (2 (1 - alpha))`.
pub fn modulated_frequency(o2: f64, f: f64, alpha: f64, tau: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "shape ratio must lie in (0, 1), got {alpha}"
        )));
    }
    if !(f > 0.0) {
        return Err(Error::InvalidArgument(format!("frequency must be positive, got {f}")));
    }
    Ok(modulated_frequency_unchecked(o2, f, alpha, tau))
}

#[inline]
fn modulated_frequency_unchecked(o2: f64, f: f64, alpha: f64, tau: f64) -> f64 {
    // exp overflows to +inf for very negative arguments, which correctly
    // drives the sigmoid term to zero.
    let sigmoid = 1.0 / (1.0 + (-tau * o2).exp());
    f / (2.0 * alpha) + (2.0 * alpha - 1.0) * f / (2.0 * alpha * (1.0 - alpha)) * sigmoid
}

/// Coupling that pulls a leg oscillator towards the primitive rotated by `theta_i`.
#[inline]
pub fn coupling_term(primitive: OscState, theta_i: f64, epsilon: f64) -> OscState {
    [
        0.0,
        epsilon * (primitive[0] * theta_i.sin() + primitive[1] * theta_i.cos()),
    ]
}

/// Hopf vector field with frequency `f_a` plus an additive input `q`.
#[inline]
pub fn oscillator_derivative(state: OscState, q: OscState, amplitude: f64, f_a: f64, k: f64) -> OscState {
    let [o1, o2] = state;
    let radial = k * (amplitude * amplitude - o1 * o1 - o2 * o2);
    let omega = TAU * f_a;
    [
        radial * o1 - omega * o2 + q[0],
        radial * o2 + omega * o1 + q[1],
    ]
}

/// Shared parameters of one integration run.
#[derive(Clone, Copy)]
struct Field {
    amplitude: f64,
    f: f64,
    alpha: f64,
    tau: f64,
    k: f64,
    epsilon: f64,
}

impl Field {
    fn new(p: &GaitParams, consts: &CpgConstants) -> Self {
        Self {
            amplitude: p.a_alpha_b,
            f: p.f,
            alpha: p.alpha,
            tau: consts.tau,
            k: consts.k,
            epsilon: consts.epsilon,
        }
    }

    #[inline]
    fn single(&self, state: OscState, q: OscState) -> OscState {
        let f_a = modulated_frequency_unchecked(state[1] / self.amplitude, self.f, self.alpha, self.tau);
        oscillator_derivative(state, q, self.amplitude, f_a, self.k)
    }

    /// Derivatives of the primitive and every driven oscillator, evaluated at
    /// one common stage of the integrator.
    #[inline]
    fn eval(&self, prim: OscState, legs: &[OscState], coupling: &[(f64, f64)], out_prim: &mut OscState, out: &mut [OscState]) {
        *out_prim = self.single(prim, [0.0, 0.0]);
        for ((leg, d), (s, c)) in legs.iter().zip(out.iter_mut()).zip(coupling) {
            let q = [0.0, self.epsilon * (prim[0] * s + prim[1] * c)];
            *d = self.single(*leg, q);
        }
    }
}

#[inline]
fn axpy(a: OscState, h: f64, d: OscState) -> OscState {
    [a[0] + h * d[0], a[1] + h * d[1]]
}

/// Classical RK4 step of the primitive and `legs.len()` driven oscillators.
fn rk4_step(field: &Field, coupling: &[(f64, f64)], prim: &mut OscState, legs: &mut [OscState], dt: f64) {
    let n = legs.len();
    debug_assert!(n <= LEGS);
    let mut k1 = [[0.0; 2]; LEGS];
    let mut k2 = [[0.0; 2]; LEGS];
    let mut k3 = [[0.0; 2]; LEGS];
    let mut k4 = [[0.0; 2]; LEGS];
    let (mut p1, mut p2, mut p3, mut p4) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
    let mut stage = [[0.0; 2]; LEGS];

    field.eval(*prim, legs, coupling, &mut p1, &mut k1[..n]);
    for i in 0..n {
        stage[i] = axpy(legs[i], 0.5 * dt, k1[i]);
    }
    field.eval(axpy(*prim, 0.5 * dt, p1), &stage[..n], coupling, &mut p2, &mut k2[..n]);
    for i in 0..n {
        stage[i] = axpy(legs[i], 0.5 * dt, k2[i]);
    }
    field.eval(axpy(*prim, 0.5 * dt, p2), &stage[..n], coupling, &mut p3, &mut k3[..n]);
    for i in 0..n {
        stage[i] = axpy(legs[i], dt, k3[i]);
    }
    field.eval(axpy(*prim, dt, p3), &stage[..n], coupling, &mut p4, &mut k4[..n]);

    let w = dt / 6.0;
    for c in 0..2 {
        prim[c] += w * (p1[c] + 2.0 * p2[c] + 2.0 * p3[c] + p4[c]);
        for i in 0..n {
            legs[i][c] += w * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
        }
    }
}

/// Largest admissible step: one hundredth of the nominal period.
pub fn max_step(p: &GaitParams) -> f64 {
    p.period() / 100.0
}

fn check_step(p: &GaitParams, dt: f64) -> Result<()> {
    let max = max_step(p);
    if !(dt > 0.0 && dt <= max * (1.0 + 1e-12)) {
        return Err(Error::StepTooLarge { dt, max });
    }
    Ok(())
}

/// Advances the whole bank by one RK4 step. The bend amplitude
/// `p.a_alpha_b` is the limit-cycle radius of every oscillator.
pub fn step_bank(bank: &OscillatorBank, p: &GaitParams, consts: &CpgConstants, dt: f64) -> Result<OscillatorBank> {
    check_step(p, dt)?;
    let field = Field::new(p, consts);
    let coupling: [(f64, f64); LEGS] = std::array::from_fn(|i| (consts.theta[i].sin(), consts.theta[i].cos()));
    let mut next = *bank;
    rk4_step(&field, &coupling, &mut next.primitive, &mut next.legs, dt);
    next.t += dt;
    Ok(next)
}

/// Time at which transients are considered gone: `max(10/k, 3T)`.
pub fn transient_cutoff(f: f64, k: f64) -> f64 {
    (10.0 / k).max(3.0 / f)
}

/// Sampled leg-state time series for all four legs on a uniform grid.
///
/// Legs that share a phase offset share one stored series.
#[derive(Debug, Clone)]
pub struct GaitTrajectory {
    pub dt: f64,
    series: Vec<Vec<LegState>>,
    leg_map: [usize; LEGS],
}

impl GaitTrajectory {
    /// Four legs sharing one hand-built series.
    #[cfg(test)]
    pub(crate) fn from_series(dt: f64, series: Vec<LegState>) -> Self {
        Self {
            dt,
            series: vec![series],
            leg_map: [0; LEGS],
        }
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Series of leg `i` (0-based), sample `n` at time `n * dt`.
    pub fn leg(&self, i: usize) -> &[LegState] {
        &self.series[self.leg_map[i]]
    }

    /// Distinct series and, for each leg, the index of the series it uses.
    pub fn distinct(&self) -> (&[Vec<LegState>], [usize; LEGS]) {
        (&self.series, self.leg_map)
    }

    /// Writes `t, leg, alpha_b, alpha_r, z_l, x_a, x_b, x_c` rows, legs numbered from 1.
    pub fn write_csv<W: Write>(&self, geom: &LegGeometry, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "leg", "alpha_b", "alpha_r", "z_l", "x_a", "x_b", "x_c"])?;
        for n in 0..self.len() {
            for leg in 0..LEGS {
                let s = &self.leg(leg)[n];
                let x = inverse_kinematics(s, geom);
                w.serialize((
                    self.time(n),
                    leg + 1,
                    s.alpha_b(),
                    s.alpha_r(),
                    s.z_l(),
                    x.x_a,
                    x.x_b,
                    x.x_c,
                ))?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Integrates the bank and returns raw oscillator output `o1` of the
/// primitive and of each distinct leg phase, plus the leg-to-series mapping.
///
/// Legs sharing a phase offset start from the same state and therefore have
/// bit-identical trajectories, so each distinct offset is integrated once.
pub(crate) fn integrate_outputs(
    p: &GaitParams,
    consts: &CpgConstants,
    start: &OscillatorBank,
    steps: usize,
    dt: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, [usize; LEGS])> {
    check_step(p, dt)?;
    consts.validate()?;
    let field = Field::new(p, consts);

    let mut distinct: Vec<(f64, OscState)> = Vec::with_capacity(LEGS);
    let mut map = [0usize; LEGS];
    for i in 0..LEGS {
        let key = (consts.theta[i], start.legs[i]);
        match distinct.iter().position(|d| d.0.to_bits() == key.0.to_bits() && d.1 == key.1) {
            Some(j) => map[i] = j,
            None => {
                map[i] = distinct.len();
                distinct.push(key);
            }
        }
    }
    let coupling: Vec<(f64, f64)> = distinct.iter().map(|(t, _)| (t.sin(), t.cos())).collect();
    let mut legs: Vec<OscState> = distinct.iter().map(|(_, s)| *s).collect();
    let mut prim = start.primitive;

    let mut prim_out = Vec::with_capacity(steps + 1);
    let mut leg_out = vec![Vec::with_capacity(steps + 1); legs.len()];
    prim_out.push(prim[0]);
    for (out, s) in leg_out.iter_mut().zip(&legs) {
        out.push(s[0]);
    }
    for _ in 0..steps {
        rk4_step(&field, &coupling, &mut prim, &mut legs, dt);
        prim_out.push(prim[0]);
        for (out, s) in leg_out.iter_mut().zip(&legs) {
            out.push(s[0]);
        }
    }
    Ok((prim_out, leg_out, map))
}

/// Raw first-state outputs `o1` of the primitive and of every leg oscillator.
#[derive(Debug, Clone)]
pub struct OscillatorOutputs {
    pub dt: f64,
    pub primitive: Vec<f64>,
    pub legs: [Vec<f64>; LEGS],
}

/// Integrates the bank from `start` for `duration` seconds and records `o1`
/// of every oscillator at each step (including the initial sample).
pub fn oscillator_outputs(
    p: &GaitParams,
    consts: &CpgConstants,
    start: &OscillatorBank,
    duration: f64,
    dt: f64,
) -> Result<OscillatorOutputs> {
    let steps = (duration / dt).round() as usize;
    let (primitive, series, map) = integrate_outputs(p, consts, start, steps, dt)?;
    Ok(OscillatorOutputs {
        dt,
        primitive,
        legs: std::array::from_fn(|i| series[map[i]].clone()),
    })
}

/// Synthesizes per-leg bend/rotation/compression trajectories for a gait.
///
/// The bend angle is the leg oscillator output lifted by the amplitude, so it
/// swings between 0 and `2 a_alpha_b`. The compression channel satisfies
/// `alpha_b(t) / a_alpha_b = z_l(t - delay) / a_z_l`; both are clamped at
/// zero to absorb the small radial ripple caused by coupling.
pub fn leg_trajectories(p: &GaitParams, consts: &CpgConstants, duration: f64, dt: f64) -> Result<GaitTrajectory> {
    p.validate()?;
    if !(duration >= 10.0 / p.f) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s is shorter than ten periods ({} s)",
            10.0 / p.f
        )));
    }
    let start = OscillatorBank::on_limit_cycle(p.a_alpha_b, &consts.theta);
    leg_trajectories_from(p, consts, &start, duration, dt)
}

pub(crate) fn leg_trajectories_from(
    p: &GaitParams,
    consts: &CpgConstants,
    start: &OscillatorBank,
    duration: f64,
    dt: f64,
) -> Result<GaitTrajectory> {
    let samples = (duration / dt).round() as usize + 1;
    let delay_steps = (p.delay_seconds() / dt).round() as usize;
    let (_, outputs, map) = integrate_outputs(p, consts, start, samples - 1 + delay_steps, dt)?;

    let amp = p.a_alpha_b;
    let ratio = p.a_z_l / p.a_alpha_b;
    let alpha_r = consts.theta_ref;
    let series: Vec<Vec<LegState>> = outputs
        .iter()
        .map(|o1| {
            (0..samples)
                .map(|n| {
                    let bend = (amp + o1[n]).max(0.0);
                    let compression = (ratio * (amp + o1[n + delay_steps])).max(0.0);
                    LegState::new(bend, alpha_r, compression).expect("clamped components are valid")
                })
                .collect()
        })
        .collect();
    Ok(GaitTrajectory {
        dt,
        series,
        leg_map: map,
    })
}
