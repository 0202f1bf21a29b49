//! Tendon inverse kinematics and the planar foot map used by the synthetic plant.
//!
//! A leg is described by its bend angle, the rotation of the bending plane and
//! a uniform compression. The three tendons sit on a guide disk 120 degrees
//! apart, so bending shortens one side and lengthens the other two while
//! compression pulls all three equally.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instantaneous state of one soft leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegState {
    alpha_b: f64,
    alpha_r: f64,
    z_l: f64,
}

impl LegState {
    /// Bend angle and compression must be finite and non-negative; the bending
    /// direction lives entirely in `alpha_r`.
    pub fn new(alpha_b: f64, alpha_r: f64, z_l: f64) -> Result<Self> {
        if !(alpha_b.is_finite() && alpha_r.is_finite() && z_l.is_finite()) {
            return Err(Error::InvalidLegState("non-finite component".into()));
        }
        if alpha_b < 0.0 {
            return Err(Error::InvalidLegState(format!(
                "bend angle {alpha_b} is negative"
            )));
        }
        if z_l < 0.0 {
            return Err(Error::InvalidLegState(format!(
                "compression {z_l} is negative"
            )));
        }
        Ok(Self {
            alpha_b,
            alpha_r,
            z_l,
        })
    }

    pub fn alpha_b(&self) -> f64 {
        self.alpha_b
    }

    pub fn alpha_r(&self) -> f64 {
        self.alpha_r
    }

    pub fn z_l(&self) -> f64 {
        self.z_l
    }
}

/// Cable displacements for the three tendons of one leg, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TendonDisplacement {
    pub x_a: f64,
    pub x_b: f64,
    pub x_c: f64,
}

impl TendonDisplacement {
    pub fn sum(&self) -> f64 {
        self.x_a + self.x_b + self.x_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry {
    /// Radius of the circle through the three tendon guide holes.
    pub r_d: f64,
    /// Effective lower-leg length. Only the synthetic plant uses it.
    pub l_leg: f64,
}

impl LegGeometry {
    pub fn new(r_d: f64, l_leg: f64) -> Result<Self> {
        let geometry = Self { r_d, l_leg };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_d > 0.0 && self.r_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guide-disk radius must be positive, got {}",
                self.r_d
            )));
        }
        if !(self.l_leg > 0.0 && self.l_leg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "leg length must be positive, got {}",
                self.l_leg
            )));
        }
        Ok(())
    }
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            r_d: 0.02,
            l_leg: 0.1,
        }
    }
}

/// Planar foot position: `x` forward, `z` height above the lowest reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootPosition {
    pub x: f64,
    pub z: f64,
}

/// Maps a leg state to motor references.
pub fn inverse_kinematics(s: &LegState, geom: &LegGeometry) -> TendonDisplacement {
    let bend = geom.r_d * s.alpha_b;
    TendonDisplacement {
        x_a: bend * s.alpha_r.cos() + s.z_l,
        x_b: bend * (s.alpha_r + 2.0 * PI / 3.0).cos() + s.z_l,
        x_c: bend * (s.alpha_r + 4.0 * PI / 3.0).cos() + s.z_l,
    }
}

/// Constant-curvature arc approximation of the foot position.
///
/// This is a synthetic forward map for the built-in plant, not a calibrated
/// model of the physical leg.
pub fn foot_position(s: &LegState, geom: &LegGeometry) -> FootPosition {
    FootPosition {
        x: geom.l_leg * s.alpha_b.sin() * s.alpha_r.cos(),
        z: geom.l_leg * (1.0 - s.alpha_b.cos()) + s.z_l,
    }
}
