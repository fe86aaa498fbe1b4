//! Wavefunctions on the grid: packets, eigenstates, superpositions, and
//! quadrature/spectral expectation values.

use alloc::{sync::Arc, vec, vec::Vec};

use crate::error::{CoreError, Result};
use crate::fft::FftPlan;
use crate::grid::Grid;
use crate::model::{Model, QuantumPotential};
use crate::{cis, C64};

#[allow(unused_imports)]
use num_traits::Float;

/// Norm tolerance guaranteed right after construction or normalization.
pub const NORM_TOL_CONSTRUCT: f64 = 1e-10;
/// Norm tolerance required before expectation values are meaningful.
pub const NORM_TOL_EXPECT: f64 = 1e-8;
/// |psi| at either grid edge above this fraction of the peak marks the
/// state as touching the boundary.
pub const BOUNDARY_AMP_RATIO: f64 = 1e-6;
/// Highest harmonic-oscillator quantum number with an analytic builder.
pub const MAX_EIGENSTATE: usize = 4;

#[derive(Debug, Clone)]
pub struct WaveFunction {
    grid: Arc<Grid>,
    psi: Vec<C64>,
}

/// Expectation values of one state at frozen classical position X.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantumExpectations {
    pub x: f64,
    pub x2: f64,
    pub p: f64,
    pub kinetic: f64,
    pub v_q: f64,
    pub v_int: f64,
}

impl QuantumExpectations {
    /// Quantum-sector energy without the coupling term.
    pub fn energy_q(&self) -> f64 {
        self.kinetic + self.v_q
    }
}

impl WaveFunction {
    /// Wrap raw amplitudes and normalize them on the grid.
    pub fn from_amplitudes(grid: Arc<Grid>, psi: Vec<C64>) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(CoreError::GridMismatch("amplitude count != grid size"));
        }
        let mut wf = Self { grid, psi };
        wf.normalize()?;
        Ok(wf)
    }

    /// Gaussian packet exp(-(x-x0)^2/(4 sigma^2) + i k0 x), grid-normalized.
    ///
    /// sigma is the position-space standard deviation of |psi|^2.
    pub fn gaussian(grid: Arc<Grid>, x0: f64, sigma: f64, k0: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 2.0 * grid.spacing()) {
            return Err(CoreError::BadParameter {
                name: "sigma",
                value: sigma,
                requirement: "finite and > 2 grid spacings",
            });
        }
        if !(x0.is_finite() && k0.is_finite()) {
            return Err(CoreError::BadParameter {
                name: "x0_or_k0",
                value: if x0.is_finite() { k0 } else { x0 },
                requirement: "finite",
            });
        }
        if x0 - 5.0 * sigma < grid.x_min() || x0 + 5.0 * sigma > grid.x_max() {
            return Err(CoreError::BoundaryTouch(
                "gaussian support (x0 +- 5 sigma) exceeds grid",
            ));
        }
        let psi = grid
            .points()
            .iter()
            .map(|&x| {
                let d = x - x0;
                let env = (-d * d / (4.0 * sigma * sigma)).exp();
                cis(k0 * x) * env
            })
            .collect();
        Self::from_amplitudes(grid, psi)
    }

    /// Analytic harmonic-oscillator eigenstate phi_n via Hermite recurrence,
    /// renormalized on the grid. Requires a harmonic quantum potential.
    pub fn eigenstate(grid: Arc<Grid>, model: &Model, n: usize) -> Result<Self> {
        let omega = match model.potential {
            QuantumPotential::Harmonic { omega } => omega,
            QuantumPotential::DoubleWell { .. } => {
                return Err(CoreError::BadParameter {
                    name: "quantum_number",
                    value: n as f64,
                    requirement: "analytic eigenstates exist only for the harmonic potential",
                })
            }
        };
        if n > MAX_EIGENSTATE {
            return Err(CoreError::BadParameter {
                name: "quantum_number",
                value: n as f64,
                requirement: "at most 4",
            });
        }
        // Characteristic length and the outermost classical turning point.
        let sigma_c = (model.hbar / (model.m * omega)).sqrt();
        let turning = sigma_c * ((2 * n + 1) as f64).sqrt();
        if sigma_c <= 2.0 * grid.spacing() {
            return Err(CoreError::BadParameter {
                name: "grid_spacing",
                value: grid.spacing(),
                requirement: "eigenstate width must exceed 2 grid spacings",
            });
        }
        if turning + 5.0 * sigma_c > grid.x_max() || -(turning + 5.0 * sigma_c) < grid.x_min() {
            return Err(CoreError::BoundaryTouch("eigenstate tail exceeds grid"));
        }
        let psi = grid
            .points()
            .iter()
            .map(|&x| {
                let xi = x / sigma_c;
                let mut h_prev = 1.0f64;
                let mut h = if n == 0 { 1.0 } else { 2.0 * xi };
                for k in 1..n {
                    let next = 2.0 * xi * h - 2.0 * k as f64 * h_prev;
                    h_prev = h;
                    h = next;
                }
                C64::new(h * (-0.5 * xi * xi).exp(), 0.0)
            })
            .collect();
        Self::from_amplitudes(grid, psi)
    }

    /// Linear combination of states on one grid, renormalized.
    pub fn superposition(parts: &[(C64, &WaveFunction)]) -> Result<Self> {
        let (_, first) = parts.first().ok_or(CoreError::BadMixture("no components"))?;
        let grid = first.grid.clone();
        let mut psi = vec![C64::new(0.0, 0.0); grid.len()];
        for (coeff, wf) in parts {
            if !wf.grid.same_as(&grid) {
                return Err(CoreError::GridMismatch("superposition components"));
            }
            for (acc, &a) in psi.iter_mut().zip(wf.psi.iter()) {
                *acc += *coeff * a;
            }
        }
        Self::from_amplitudes(grid, psi)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.psi
    }

    /// Mutable amplitudes for the propagator; callers maintain the norm
    /// invariant (unitary steps only).
    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.psi
    }

    /// Discrete L2 norm sqrt(sum |psi_j|^2 dx).
    pub fn norm(&self) -> f64 {
        let s: f64 = self.psi.iter().map(|z| z.norm_sqr()).sum();
        (s * self.grid.spacing()).sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(CoreError::NotNormalized {
                norm,
                tol: NORM_TOL_CONSTRUCT,
            });
        }
        let s = 1.0 / norm;
        for z in self.psi.iter_mut() {
            *z = C64::new(z.re * s, z.im * s);
        }
        Ok(())
    }

    pub fn ensure_normalized(&self, tol: f64) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > tol {
            return Err(CoreError::NotNormalized { norm, tol });
        }
        Ok(())
    }

    /// |psi_j|^2 at every grid point.
    pub fn prob_density(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// True when both edge amplitudes stay below the boundary ratio of the
    /// peak, i.e. the packet has not reached the grid edge.
    pub fn boundary_clear(&self) -> bool {
        let peak = self
            .psi
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, |a, b| a.max(b));
        if peak == 0.0 {
            return false;
        }
        let lo = self.psi[0].norm();
        let hi = self.psi[self.psi.len() - 1].norm();
        lo < BOUNDARY_AMP_RATIO * peak && hi < BOUNDARY_AMP_RATIO * peak
    }

    /// Position-quadrature and spectral expectations at frozen classical X.
    ///
    /// `plan` must match the grid size; `buf` is scratch reused across calls.
    pub fn expectations(
        &self,
        x_cl: f64,
        model: &Model,
        plan: &FftPlan,
        buf: &mut Vec<C64>,
    ) -> Result<QuantumExpectations> {
        self.ensure_normalized(NORM_TOL_EXPECT)?;
        let dx = self.grid.spacing();
        let mut x = 0.0;
        let mut x2 = 0.0;
        let mut v_q = 0.0;
        for (&xj, z) in self.grid.points().iter().zip(self.psi.iter()) {
            let w = z.norm_sqr() * dx;
            x += xj * w;
            x2 += xj * xj * w;
            v_q += model.v_quantum(xj) * w;
        }
        buf.clear();
        buf.extend_from_slice(&self.psi);
        plan.forward(buf);
        let n = self.grid.len() as f64;
        let weight = dx / n;
        let mut p = 0.0;
        let mut kinetic = 0.0;
        for (&k, z) in self.grid.wavenumbers().iter().zip(buf.iter()) {
            let w = z.norm_sqr() * weight;
            p += model.hbar * k * w;
            kinetic += model.hbar * model.hbar * k * k / (2.0 * model.m) * w;
        }
        // Parseval carries the position-space normalization into k-space, so
        // the spectral sums need no extra norm division.
        Ok(QuantumExpectations {
            x,
            x2,
            p,
            kinetic,
            v_q,
            v_int: model.lambda * x * x_cl,
        })
    }

    /// Convenience wrapper building its own transform plan.
    pub fn expectations_alloc(&self, x_cl: f64, model: &Model) -> Result<QuantumExpectations> {
        let plan = FftPlan::new(self.grid.len())?;
        let mut buf = Vec::with_capacity(self.grid.len());
        self.expectations(x_cl, model, &plan, &mut buf)
    }

    /// L2 distance sqrt(sum |a_j - b_j|^2 dx) between two states.
    pub fn l2_distance(&self, other: &WaveFunction) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(CoreError::GridMismatch("l2 distance operands"));
        }
        let s: f64 = self
            .psi
            .iter()
            .zip(other.psi.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok((s * self.grid.spacing()).sqrt())
    }
}

/// Spectral first derivative: FFT, multiply by i k (Nyquist zeroed), inverse.
///
/// The Nyquist mode has no well-defined sign for odd derivatives; dropping it
/// keeps the derivative real for real inputs.
pub fn spectral_derivative(plan: &FftPlan, grid: &Grid, psi: &[C64], out: &mut Vec<C64>) {
    out.clear();
    out.extend_from_slice(psi);
    plan.forward(out);
    let n = grid.len();
    for (k_idx, z) in out.iter_mut().enumerate() {
        if k_idx == n / 2 {
            *z = C64::new(0.0, 0.0);
        } else {
            let k = grid.wavenumbers()[k_idx];
            *z = C64::new(-z.im * k, z.re * k);
        }
    }
    plan.inverse(out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuantumPotential;
    use approx::assert_abs_diff_eq;

    fn grid512() -> Arc<Grid> {
        Arc::new(Grid::new(-10.0, 10.0, 512).unwrap())
    }

    fn model_harmonic(lambda: f64) -> Model {
        Model::new(
            1.0,
            1.0,
            QuantumPotential::Harmonic { omega: 1.0 },
            1.0,
            1.0,
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_is_normalized_and_centered() {
        let wf = WaveFunction::gaussian(grid512(), 0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(wf.norm(), 1.0, epsilon = 1e-10);
        let e = wf.expectations_alloc(0.0, &model_harmonic(0.0)).unwrap();
        assert_abs_diff_eq!(e.x, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_moments_match_analytic() {
        let wf = WaveFunction::gaussian(grid512(), 1.0, 0.5, 2.0).unwrap();
        let m = model_harmonic(0.0);
        let e = wf.expectations_alloc(0.0, &m).unwrap();
        assert_abs_diff_eq!(e.x, 1.0, epsilon = 1e-6);
        // <p> = hbar k0
        assert_abs_diff_eq!(e.p, 2.0, epsilon = 1e-6);
        // <x^2> = x0^2 + sigma^2
        assert_abs_diff_eq!(e.x2, 1.25, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_boundary_and_resolution_errors() {
        assert!(matches!(
            WaveFunction::gaussian(grid512(), 9.5, 1.0, 0.0),
            Err(CoreError::BoundaryTouch(_))
        ));
        let coarse = Arc::new(Grid::new(-10.0, 10.0, 64).unwrap());
        assert!(matches!(
            WaveFunction::gaussian(coarse, 0.0, 0.5, 0.0),
            Err(CoreError::BadParameter { name: "sigma", .. })
        ));
    }

    #[test]
    fn ground_state_energy_is_half_hbar_omega() {
        let m = model_harmonic(0.0);
        let wf = WaveFunction::eigenstate(grid512(), &m, 0).unwrap();
        let e = wf.expectations_alloc(0.0, &m).unwrap();
        assert_abs_diff_eq!(e.x2, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(e.kinetic + e.v_q, 0.5, epsilon = 1e-6);
        // Real state: no momentum.
        assert_abs_diff_eq!(e.p, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn excited_states_are_orthonormal() {
        let m = model_harmonic(0.0);
        let states: Vec<WaveFunction> = (0..=MAX_EIGENSTATE)
            .map(|n| WaveFunction::eigenstate(grid512(), &m, n).unwrap())
            .collect();
        let dx = states[0].grid().spacing();
        for i in 0..states.len() {
            for j in 0..states.len() {
                let overlap: C64 = states[i]
                    .amplitudes()
                    .iter()
                    .zip(states[j].amplitudes())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(overlap.re * dx, want, epsilon = 1e-8);
                assert_abs_diff_eq!(overlap.im * dx, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn first_excited_has_odd_parity() {
        let m = model_harmonic(0.0);
        let wf = WaveFunction::eigenstate(grid512(), &m, 1).unwrap();
        let e = wf.expectations_alloc(0.0, &m).unwrap();
        assert_abs_diff_eq!(e.x, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn eigenstate_rejects_bad_requests() {
        let m = model_harmonic(0.0);
        assert!(WaveFunction::eigenstate(grid512(), &m, 5).is_err());
        let dw = Model::new(
            1.0,
            1.0,
            QuantumPotential::DoubleWell {
                barrier: 1.0,
                half_separation: 2.0,
            },
            1.0,
            1.0,
            0.0,
        )
        .unwrap();
        assert!(WaveFunction::eigenstate(grid512(), &dw, 0).is_err());
    }

    #[test]
    fn coupling_expectation_is_lambda_x_xcl() {
        let m = model_harmonic(0.1);
        let wf = WaveFunction::gaussian(grid512(), 1.0, 1.0, 0.0).unwrap();
        let e = wf.expectations_alloc(2.0, &m).unwrap();
        assert_abs_diff_eq!(e.v_int, 0.2, epsilon = 1e-6);
    }

    #[test]
    fn expectations_reject_denormalized_state() {
        let m = model_harmonic(0.0);
        let mut wf = WaveFunction::gaussian(grid512(), 0.0, 1.0, 0.0).unwrap();
        for z in wf.amplitudes_mut() {
            *z *= 1.001;
        }
        assert!(matches!(
            wf.expectations_alloc(0.0, &m),
            Err(CoreError::NotNormalized { .. })
        ));
    }

    #[test]
    fn superposition_mixes_and_renormalizes() {
        let m = model_harmonic(0.0);
        let phi0 = WaveFunction::eigenstate(grid512(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid512(), &m, 1).unwrap();
        let c = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = WaveFunction::superposition(&[(c, &phi0), (c, &phi1)]).unwrap();
        assert_abs_diff_eq!(plus.norm(), 1.0, epsilon = 1e-12);
        // <x> of (phi0+phi1)/sqrt(2) is the cross term <phi0|x|phi1> = 1/sqrt(2 m omega / hbar).
        let e = plus.expectations_alloc(0.0, &m).unwrap();
        assert_abs_diff_eq!(e.x, core::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-6);
    }

    #[test]
    fn spectral_derivative_matches_analytic_gaussian() {
        let grid = grid512();
        let wf = WaveFunction::gaussian(grid.clone(), 0.5, 1.2, 0.0).unwrap();
        let plan = FftPlan::new(grid.len()).unwrap();
        let mut out = Vec::new();
        spectral_derivative(&plan, &grid, wf.amplitudes(), &mut out);
        // d/dx of the real envelope: psi' = -(x-x0)/(2 sigma^2) psi.
        // Amplitudes below 1e-6 sit outside the trusted region (the
        // boundary-amplitude policy) and carry periodic-image
        // contamination of the same order, so only the band above it is
        // compared.
        for (j, &x) in grid.points().iter().enumerate() {
            if wf.amplitudes()[j].norm() < 1e-6 {
                continue;
            }
            let want = -(x - 0.5) / (2.0 * 1.2 * 1.2) * wf.amplitudes()[j].re;
            assert_abs_diff_eq!(out[j].re, want, epsilon = 1e-7);
            assert_abs_diff_eq!(out[j].im, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn spectral_momentum_matches_finite_difference() {
        let grid = grid512();
        let m = model_harmonic(0.0);
        for &(x0, k0) in &[(0.0, 1.0), (1.0, -2.0), (-0.5, 0.3)] {
            let wf = WaveFunction::gaussian(grid.clone(), x0, 0.8, k0).unwrap();
            let e = wf.expectations_alloc(0.0, &m).unwrap();
            // Central differences at spacings h and 2h, Richardson-combined
            // to cancel the O(h^2) truncation term. The remainder is
            // h^4 <k^5>/30, at most 5.3e-6 for these packets (k0 = -2).
            let psi = wf.amplitudes();
            let dx = grid.spacing();
            let n = psi.len();
            let mut p_h = 0.0;
            let mut p_2h = 0.0;
            for j in 2..n - 2 {
                let d1 = (psi[j + 1] - psi[j - 1]) / C64::new(2.0 * dx, 0.0);
                let d2 = (psi[j + 2] - psi[j - 2]) / C64::new(4.0 * dx, 0.0);
                p_h += (psi[j].conj() * d1).im * dx;
                p_2h += (psi[j].conj() * d2).im * dx;
            }
            let p_fd = (4.0 * p_h - p_2h) / 3.0;
            assert_abs_diff_eq!(e.p, p_fd, epsilon = 1e-5);
        }
    }
}
