//! Array geometry, transmit/receive steering vectors and their analytic
//! angle derivatives.
//!
//! The transmit array sees the target along the 3-D direction
//! `u(θ, φ) = [cosθ cosφ, sinθ cosφ, sinφ]` with a positive phase sign; the
//! receive array sees it along the in-plane direction `[cosθ, sinθ, 0]` with
//! a negative sign. All angles are radians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cis, ComplexVector, J};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Element positions in meters.
    pub element_positions: Vec<[f64; 3]>,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetAngles {
    /// Azimuth, radians.
    pub theta: f64,
    /// Elevation, radians.
    pub phi: f64,
}

impl TargetAngles {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return invalid("target angles must be finite");
        }
        let theta = theta.rem_euclid(2.0 * PI);
        if !(0.0..=PI / 2.0 + 1e-12).contains(&phi) {
            return invalid(format!("elevation {phi} outside [0, π/2]"));
        }
        Ok(Self { theta, phi })
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }
}

impl ArrayGeometry {
    pub fn new(element_positions: Vec<[f64; 3]>, wavelength: f64) -> Result<Self> {
        if element_positions.is_empty() {
            return invalid("array needs at least one element");
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return invalid(format!("wavelength must be positive, got {wavelength}"));
        }
        if element_positions.iter().flatten().any(|c| !c.is_finite()) {
            return invalid("element coordinates must be finite");
        }
        Ok(Self {
            element_positions,
            wavelength,
        })
    }

    pub fn len(&self) -> usize {
        self.element_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_positions.is_empty()
    }

    fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    fn projections(&self, dir: [f64; 3]) -> impl Iterator<Item = f64> + '_ {
        self.element_positions
            .iter()
            .map(move |r| r[0] * dir[0] + r[1] * dir[1] + r[2] * dir[2])
    }
}

/// Radius giving half-wavelength arc spacing between adjacent elements.
pub fn half_wavelength_uca_radius(n_elements: usize, wavelength: f64) -> f64 {
    wavelength * n_elements as f64 / (4.0 * PI)
}

/// Uniform circular array in the z = 0 plane, first element on +x.
pub fn make_uca(n_elements: usize, radius: f64, wavelength: f64) -> Result<ArrayGeometry> {
    if n_elements < 2 {
        return invalid(format!("UCA needs at least 2 elements, got {n_elements}"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return invalid(format!("UCA radius must be positive, got {radius}"));
    }
    let positions = (0..n_elements)
        .map(|i| {
            let ang = 2.0 * PI * i as f64 / n_elements as f64;
            [radius * ang.cos(), radius * ang.sin(), 0.0]
        })
        .collect();
    ArrayGeometry::new(positions, wavelength)
}

/// Uniform linear array along +x starting at the origin.
pub fn make_ula(n_elements: usize, spacing: f64, wavelength: f64) -> Result<ArrayGeometry> {
    if n_elements < 2 {
        return invalid(format!("ULA needs at least 2 elements, got {n_elements}"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return invalid(format!("ULA spacing must be positive, got {spacing}"));
    }
    let positions = (0..n_elements)
        .map(|i| [i as f64 * spacing, 0.0, 0.0])
        .collect();
    ArrayGeometry::new(positions, wavelength)
}

fn tx_direction(a: TargetAngles) -> [f64; 3] {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    [ct * cp, st * cp, sp]
}

fn tx_direction_dtheta(a: TargetAngles) -> [f64; 3] {
    let (st, ct) = a.theta.sin_cos();
    let cp = a.phi.cos();
    [-st * cp, ct * cp, 0.0]
}

fn tx_direction_dphi(a: TargetAngles) -> [f64; 3] {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    [-ct * sp, -st * sp, cp]
}

pub fn tx_steering(geom: &ArrayGeometry, angles: TargetAngles) -> ComplexVector {
    let k = geom.wavenumber();
    ComplexVector::from_iterator(
        geom.len(),
        geom.projections(tx_direction(angles)).map(|p| cis(k * p)),
    )
}

/// (∂a/∂θ, ∂a/∂φ).
pub fn tx_steering_derivs(
    geom: &ArrayGeometry,
    angles: TargetAngles,
) -> (ComplexVector, ComplexVector) {
    let k = geom.wavenumber();
    let a = tx_steering(geom, angles);
    let dt = ComplexVector::from_iterator(
        geom.len(),
        geom.projections(tx_direction_dtheta(angles))
            .zip(a.iter())
            .map(|(p, ai)| ai * J * (k * p)),
    );
    let dp = ComplexVector::from_iterator(
        geom.len(),
        geom.projections(tx_direction_dphi(angles))
            .zip(a.iter())
            .map(|(p, ai)| ai * J * (k * p)),
    );
    (dt, dp)
}

pub fn rx_steering(geom: &ArrayGeometry, theta: f64) -> ComplexVector {
    let k = geom.wavenumber();
    let dir = [theta.cos(), theta.sin(), 0.0];
    ComplexVector::from_iterator(geom.len(), geom.projections(dir).map(|p| cis(-k * p)))
}

pub fn rx_steering_deriv(geom: &ArrayGeometry, theta: f64) -> ComplexVector {
    let k = geom.wavenumber();
    let b = rx_steering(geom, theta);
    let ddir = [-theta.sin(), theta.cos(), 0.0];
    ComplexVector::from_iterator(
        geom.len(),
        geom.projections(ddir)
            .zip(b.iter())
            .map(|(p, bi)| bi * (-J) * (k * p)),
    )
}
