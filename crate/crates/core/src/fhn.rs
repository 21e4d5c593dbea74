//! FitzHugh-Nagumo reaction terms shared by every scale of the model.
//!
//! The membrane potential obeys `dv/dt = N(v) - w + I` with the cubic
//! excitability `N(v) = v - v^3`, and the adaptation variable obeys
//! `dw/dt = A(v, w) = tau (v + a - b w)`.

use serde::{Deserialize, Serialize};

use crate::error::{FhnError, Result};

/// Excitability term. `Cubic` is the physical model; the other two are
/// test modes used to isolate the nonlinear closure error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reaction {
    #[default]
    Cubic,
    Identity,
    Zero,
}

fn default_tau() -> f64 {
    0.2
}
fn default_a() -> f64 {
    0.1
}
fn default_b() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhnParams {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub reaction: Reaction,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self { tau: default_tau(), a: default_a(), b: default_b(), reaction: Reaction::Cubic }
    }
}

impl FhnParams {
    pub fn new(tau: f64, a: f64, b: f64) -> Result<Self> {
        let p = Self { tau, a, b, reaction: Reaction::Cubic };
        p.validate()?;
        Ok(p)
    }

    pub fn with_reaction(mut self, reaction: Reaction) -> Self {
        self.reaction = reaction;
        self
    }

    /// `tau >= 0`, `b >= 0`, everything finite.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            problems.push(format!("params.tau: must be finite and >= 0, got {}", self.tau));
        }
        if !self.a.is_finite() {
            problems.push(format!("params.a: must be finite, got {}", self.a));
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            problems.push(format!("params.b: must be finite and >= 0, got {}", self.b));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FhnError::ConfigInvalid(problems))
        }
    }

    #[inline]
    pub fn excitability(&self, v: f64) -> f64 {
        match self.reaction {
            Reaction::Cubic => v - v * v * v,
            Reaction::Identity => v,
            Reaction::Zero => 0.0,
        }
    }

    #[inline]
    pub fn adaptation(&self, v: f64, w: f64) -> f64 {
        self.tau * (v + self.a - self.b * w)
    }

    /// Right-hand side of the uncoupled single-neuron system.
    #[inline]
    pub fn neuron_rhs(&self, v: f64, w: f64) -> (f64, f64) {
        (self.excitability(v) - w, self.adaptation(v, w))
    }

    /// One classical RK4 step of the uncoupled single-neuron system.
    pub fn neuron_step(&self, v: f64, w: f64, dt: f64) -> (f64, f64) {
        let (k1v, k1w) = self.neuron_rhs(v, w);
        let (k2v, k2w) = self.neuron_rhs(v + 0.5 * dt * k1v, w + 0.5 * dt * k1w);
        let (k3v, k3w) = self.neuron_rhs(v + 0.5 * dt * k2v, w + 0.5 * dt * k2w);
        let (k4v, k4w) = self.neuron_rhs(v + dt * k3v, w + dt * k3w);
        (rk4_combine(v, dt, k1v, k2v, k3v, k4v), rk4_combine(w, dt, k1w, k2w, k3w, k4w))
    }
}

/// `y + dt/6 (k1 + 2 k2 + 2 k3 + k4)` with a fixed evaluation order, so that
/// solvers sharing it produce bit-identical results on decoupled problems.
#[inline]
pub(crate) fn rk4_combine(y: f64, dt: f64, k1: f64, k2: f64, k3: f64, k4: f64) -> f64 {
    y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

pub(crate) fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(FhnError::InvalidTimeStep(dt))
    }
}
