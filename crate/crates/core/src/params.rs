//! The five-dimensional gait design vector and its bounded design space.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM: usize = 5;

pub const PARAM_NAMES: [&str; DIM] = ["a_alpha_b", "a_z_l", "f", "alpha", "phi"];

/// Gait design vector.
///
/// `phi` is the bend/compression delay expressed as a phase angle in
/// `[0, 2π]`; the delay in seconds is `phi / (2π f)`, i.e. a fraction of the
/// period `T = 1/f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Bend amplitude, radians.
    pub a_alpha_b: f64,
    /// Compression amplitude, meters.
    pub a_z_l: f64,
    /// Base frequency, Hz.
    pub f: f64,
    /// Shape ratio in (0, 1); 0.5 is harmonic.
    pub alpha: f64,
    /// Bend/compression delay as a phase, radians.
    pub phi: f64,
}

impl GaitParams {
    pub fn new(a_alpha_b: f64, a_z_l: f64, f: f64, alpha: f64, phi: f64) -> Result<Self> {
        let p = Self {
            a_alpha_b,
            a_z_l,
            f,
            alpha,
            phi,
        };
        p.validate()?;
        Ok(p)
    }

    /// Structural checks that hold regardless of the configured bounds.
    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite component".into()));
        }
        if self.a_alpha_b <= 0.0 || self.a_z_l < 0.0 {
            return Err(Error::InvalidParams(format!(
                "amplitudes must be positive (a_alpha_b={}, a_z_l={})",
                self.a_alpha_b, self.a_z_l
            )));
        }
        if self.f <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "frequency must be positive, got {}",
                self.f
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParams(format!(
                "shape ratio must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=TAU).contains(&self.phi) {
            return Err(Error::InvalidParams(format!(
                "phase delay must lie in [0, 2π], got {}",
                self.phi
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f
    }

    /// Bend/compression delay in seconds.
    pub fn delay_seconds(&self) -> f64 {
        self.phi / (TAU * self.f)
    }

    pub fn to_array(&self) -> [f64; DIM] {
        [self.a_alpha_b, self.a_z_l, self.f, self.alpha, self.phi]
    }

    pub fn from_array(v: [f64; DIM]) -> Self {
        Self {
            a_alpha_b: v[0],
            a_z_l: v[1],
            f: v[2],
            alpha: v[3],
            phi: v[4],
        }
    }
}

impl fmt::Display for GaitParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[A_b={:.4} rad, A_z={:.5} m, f={:.4} Hz, alpha={:.4}, phi={:.4} rad]",
            self.a_alpha_b, self.a_z_l, self.f, self.alpha, self.phi
        )
    }
}

/// Axis-aligned box over the design vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignBounds {
    pub lower: [f64; DIM],
    pub upper: [f64; DIM],
}

impl Default for DesignBounds {
    /// The box used for the BO training runs of the reference robot.
    fn default() -> Self {
        Self {
            lower: [0.1, 0.001, 0.4, 0.1, 0.0],
            upper: [0.7, 0.008, 2.0, 0.9, TAU],
        }
    }
}

impl DesignBounds {
    pub fn new(lower: [f64; DIM], upper: [f64; DIM]) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..DIM {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "bounds for {} must be finite with lower < upper, got [{lo}, {hi}]",
                    PARAM_NAMES[d]
                )));
            }
        }
        if self.lower[0] <= 0.0 || self.lower[1] < 0.0 || self.lower[2] <= 0.0 {
            return Err(Error::Config(
                "amplitude and frequency bounds must be positive".into(),
            ));
        }
        if self.lower[3] <= 0.0 || self.upper[3] >= 1.0 {
            return Err(Error::Config("shape-ratio bounds must lie in (0, 1)".into()));
        }
        if self.lower[4] < 0.0 || self.upper[4] > TAU {
            return Err(Error::Config("phase bounds must lie in [0, 2π]".into()));
        }
        Ok(())
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn contains(&self, p: &GaitParams) -> bool {
        p.to_array()
            .iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lower[d] && *v <= self.upper[d])
    }

    pub fn check(&self, p: &GaitParams) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{p} lies outside the design bounds")))
        }
    }

    /// Maps a design vector into the unit cube.
    pub fn normalize(&self, p: &GaitParams) -> [f64; DIM] {
        let v = p.to_array();
        std::array::from_fn(|d| (v[d] - self.lower[d]) / self.width(d))
    }

    /// Inverse of [`normalize`](Self::normalize); clips to the box first.
    pub fn denormalize(&self, u: &[f64]) -> GaitParams {
        debug_assert_eq!(u.len(), DIM);
        GaitParams::from_array(std::array::from_fn(|d| {
            self.lower[d] + u[d].clamp(0.0, 1.0) * self.width(d)
        }))
    }

    pub fn center(&self) -> GaitParams {
        self.denormalize(&[0.5; DIM])
    }
}
