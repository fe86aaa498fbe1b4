//! Velocity-Verlet evolution of the classical oscillator with the Bohmian
//! position frozen for the duration of one step.

use crate::error::{CoreError, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassicalState {
    pub x: f64,
    pub k: f64,
}

impl ClassicalState {
    pub fn new(x: f64, k: f64) -> Result<Self> {
        if !(x.is_finite() && k.is_finite()) {
            return Err(CoreError::BadParameter {
                name: "classical_state",
                value: if x.is_finite() { k } else { x },
                requirement: "finite",
            });
        }
        Ok(Self { x, k })
    }

    pub fn energy(&self, model: &Model) -> f64 {
        self.k * self.k / (2.0 * model.m_cl) + model.v_classical(self.x)
    }
}

/// One velocity-Verlet step under an arbitrary position-dependent force.
/// Symplectic and time-reversible for any force that depends on x alone.
pub fn verlet_step(x: f64, k: f64, mass: f64, dt: f64, force: impl Fn(f64) -> f64) -> (f64, f64) {
    let k_half = k + 0.5 * dt * force(x);
    let x_new = x + dt * k_half / mass;
    let k_new = k_half + 0.5 * dt * force(x_new);
    (x_new, k_new)
}

/// Velocity-Verlet step of the classical sector; `y` is the Bohmian position
/// held at its step-start value.
pub fn advance_classical(
    state: ClassicalState,
    y: f64,
    dt: f64,
    model: &Model,
) -> Result<ClassicalState> {
    debug_assert!(dt != 0.0);
    let (x, k) = verlet_step(state.x, state.k, model.m_cl, dt, |xc| {
        model.classical_force(xc, y)
    });
    ClassicalState::new(x, k)
}
