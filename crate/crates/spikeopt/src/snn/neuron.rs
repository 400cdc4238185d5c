//! Leaky integrate-and-fire dynamics with an adaptive threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membrane and adaptation constants for one neuron population. Time is
/// measured in frames (one step per frame, dt = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Firing threshold before adaptation. mV
    pub v_th: f64,
    /// Resting potential the membrane leaks toward. mV
    pub v_rest: f64,
    /// Potential forced after a spike and during refraction. mV
    pub v_reset: f64,
    /// Membrane time constant. frames
    pub tau: f64,
    /// Refractory period. frames
    pub t_ref: u32,
    /// Threshold increment added on every spike. mV
    pub theta_plus: f64,
    /// Decay time constant of the adaptive threshold. frames
    pub tau_theta: f64,
}

impl NeuronParams {
    pub fn validate(&self, label: &str) -> Result<()> {
        let fail = |msg: String| Err(Error::Simulator(format!("{label}: {msg}")));
        for (name, v) in [
            ("v_th", self.v_th),
            ("v_rest", self.v_rest),
            ("v_reset", self.v_reset),
            ("tau", self.tau),
            ("theta_plus", self.theta_plus),
            ("tau_theta", self.tau_theta),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if self.tau <= 0.0 {
            return fail("membrane time constant must be positive".into());
        }
        if self.tau_theta <= 0.0 {
            return fail("threshold decay time constant must be positive".into());
        }
        if self.theta_plus < 0.0 {
            return fail("threshold increment must be non-negative".into());
        }
        if self.v_reset > self.v_th {
            return fail(format!("reset {} above threshold {}", self.v_reset, self.v_th));
        }
        Ok(())
    }
}

/// Mutable state of a single neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifNeuron {
    pub v: f64,
    /// Remaining refractory frames; input is ignored while positive.
    pub refractory: u32,
}

impl LifNeuron {
    pub fn new(p: &NeuronParams) -> Self {
        LifNeuron { v: p.v_rest, refractory: 0 }
    }

    /// Advances one frame with a frozen threshold offset. Refractory frames
    /// hold the membrane at reset and consume the input.
    pub fn step_frozen(&mut self, input: f64, threshold_offset: f64, p: &NeuronParams) -> bool {
        if self.refractory > 0 {
            self.refractory -= 1;
            self.v = p.v_reset;
            return false;
        }
        self.v += (p.v_rest - self.v) / p.tau + input;
        if self.v >= p.v_th + threshold_offset {
            self.v = p.v_reset;
            self.refractory = p.t_ref;
            true
        } else {
            false
        }
    }

    /// Advances one frame with adaptation: a spike raises `theta` by
    /// `theta_plus`, and `theta` decays exponentially every frame, spike or
    /// not, refractory or not.
    pub fn step(&mut self, input: f64, theta: &mut f64, p: &NeuronParams) -> bool {
        let spike = self.step_frozen(input, *theta, p);
        if spike {
            *theta += p.theta_plus;
        }
        *theta *= (-1.0 / p.tau_theta).exp();
        spike
    }
}
