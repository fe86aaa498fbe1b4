//! Physical model: one quantum coordinate bilinearly coupled to one
//! classical oscillator.
//!
//! H = p^2/2m + V_q(x) + lambda x X + K^2/2M + (M omega_c^2 / 2) X^2,
//! with V_q either harmonic or a symmetric quartic double well. The
//! coupling strength is dimensionless once divided by sqrt(m M) omega
//! scales; lambda itself carries energy/(length^2).

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::Grid;

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QuantumPotential {
    /// V(x) = m omega^2 x^2 / 2
    Harmonic { omega: f64 },
    /// V(x) = barrier * ((x/a)^2 - 1)^2 with minima at +-a and V(0) = barrier.
    DoubleWell { barrier: f64, half_separation: f64 },
}

impl QuantumPotential {
    fn validate(&self) -> Result<()> {
        match *self {
            QuantumPotential::Harmonic { omega } => {
                if !(omega.is_finite() && omega > 0.0) {
                    return Err(CoreError::BadParameter {
                        name: "omega_q",
                        value: omega,
                        requirement: "finite and > 0",
                    });
                }
            }
            QuantumPotential::DoubleWell {
                barrier,
                half_separation,
            } => {
                if !(barrier.is_finite() && barrier > 0.0) {
                    return Err(CoreError::BadParameter {
                        name: "barrier",
                        value: barrier,
                        requirement: "finite and > 0",
                    });
                }
                if !(half_separation.is_finite() && half_separation > 0.0) {
                    return Err(CoreError::BadParameter {
                        name: "half_separation",
                        value: half_separation,
                        requirement: "finite and > 0",
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    pub hbar: f64,
    /// Quantum mass.
    pub m: f64,
    pub potential: QuantumPotential,
    /// Classical mass.
    pub m_cl: f64,
    /// Classical oscillator frequency.
    pub omega_c: f64,
    /// Bilinear coupling strength, V_int = lambda x X.
    pub lambda: f64,
}

impl Model {
    pub fn new(
        hbar: f64,
        m: f64,
        potential: QuantumPotential,
        m_cl: f64,
        omega_c: f64,
        lambda: f64,
    ) -> Result<Self> {
        for (name, value) in [("hbar", hbar), ("m", m), ("m_cl", m_cl), ("omega_c", omega_c)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CoreError::BadParameter {
                    name,
                    value,
                    requirement: "finite and > 0",
                });
            }
        }
        if !lambda.is_finite() {
            return Err(CoreError::BadParameter {
                name: "lambda",
                value: lambda,
                requirement: "finite",
            });
        }
        potential.validate()?;
        let model = Self {
            hbar,
            m,
            potential,
            m_cl,
            omega_c,
            lambda,
        };
        model.check_derivatives()?;
        Ok(model)
    }

    /// Closed-form derivatives must agree with central differences at 100
    /// deterministic sample points; guards the potential family against
    /// value/derivative drift when either form is edited.
    fn check_derivatives(&self) -> Result<()> {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5e1f);
        let mut uniform =
            move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 10.0 - 5.0;
        let h = 1e-5;
        let agree = |fd: f64, exact: f64| (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0);
        for _ in 0..100 {
            let x = uniform();
            let x_cl = uniform();
            let fd_q = (self.v_quantum(x + h) - self.v_quantum(x - h)) / (2.0 * h);
            let fd_c = (self.v_classical(x_cl + h) - self.v_classical(x_cl - h)) / (2.0 * h);
            let fd_ix = (self.v_int(x + h, x_cl) - self.v_int(x - h, x_cl)) / (2.0 * h);
            let fd_ic = (self.v_int(x, x_cl + h) - self.v_int(x, x_cl - h)) / (2.0 * h);
            let (gx, gc) = self.v_int_grad(x, x_cl);
            if !(agree(fd_q, self.v_quantum_deriv(x))
                && agree(fd_c, self.v_classical_deriv(x_cl))
                && agree(fd_ix, gx)
                && agree(fd_ic, gc))
            {
                return Err(CoreError::BadParameter {
                    name: "potential_derivative",
                    value: x,
                    requirement: "closed form must match central finite differences to 1e-6",
                });
            }
        }
        Ok(())
    }

    pub fn v_quantum(&self, x: f64) -> f64 {
        match self.potential {
            QuantumPotential::Harmonic { omega } => 0.5 * self.m * omega * omega * x * x,
            QuantumPotential::DoubleWell {
                barrier,
                half_separation,
            } => {
                let u = (x / half_separation) * (x / half_separation) - 1.0;
                barrier * u * u
            }
        }
    }

    pub fn v_quantum_deriv(&self, x: f64) -> f64 {
        match self.potential {
            QuantumPotential::Harmonic { omega } => self.m * omega * omega * x,
            QuantumPotential::DoubleWell {
                barrier,
                half_separation,
            } => {
                let a2 = half_separation * half_separation;
                let u = x * x / a2 - 1.0;
                4.0 * barrier * u * x / a2
            }
        }
    }

    pub fn v_classical_deriv(&self, x_cl: f64) -> f64 {
        self.m_cl * self.omega_c * self.omega_c * x_cl
    }

    /// (d/dx, d/dX) of the coupling term.
    pub fn v_int_grad(&self, x: f64, x_cl: f64) -> (f64, f64) {
        (self.lambda * x_cl, self.lambda * x)
    }

    /// V_q sampled on every grid point.
    pub fn v_quantum_on(&self, grid: &Grid) -> Vec<f64> {
        grid.points().iter().map(|&x| self.v_quantum(x)).collect()
    }

    pub fn v_classical(&self, x_cl: f64) -> f64 {
        0.5 * self.m_cl * self.omega_c * self.omega_c * x_cl * x_cl
    }

    pub fn v_int(&self, x: f64, x_cl: f64) -> f64 {
        self.lambda * x * x_cl
    }

    /// Force on the classical coordinate with the Bohmian point at `y`.
    pub fn classical_force(&self, x_cl: f64, y: f64) -> f64 {
        -self.v_classical_deriv(x_cl) - self.v_int_grad(y, x_cl).1
    }

    pub fn classical_period(&self) -> f64 {
        2.0 * core::f64::consts::PI / self.omega_c
    }

    pub fn decoupled(&self) -> Model {
        Model {
            lambda: 0.0,
            ..*self
        }
    }
}
