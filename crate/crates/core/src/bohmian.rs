//! De Broglie-Bohm guidance: velocity field v = (hbar/m) Im(psi'/psi) with
//! node regularization, off-grid cubic evaluation, and the Heun trajectory
//! step.
//!
//! Near a node psi -> 0 and the raw ratio blows up. Points where |psi| falls
//! below eps_node times the peak are masked and filled by linear
//! interpolation between the nearest live neighbors; any trajectory that
//! evaluates the field inside a masked region carries a node-proximity flag
//! from then on, so contaminated replicas stay auditable.

use alloc::{sync::Arc, vec, vec::Vec};

use crate::error::{CoreError, Result};
use crate::fft::FftPlan;
use crate::grid::Grid;
use crate::wavefunction::{spectral_derivative, WaveFunction};
use crate::C64;

#[allow(unused_imports)]
use num_traits::Float;

/// Default node threshold as a fraction of the peak |psi|.
pub const EPS_NODE_DEFAULT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    node_mask: Vec<bool>,
}

/// Result of one interpolated field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub v: f64,
    /// True when the interpolation stencil touched a masked point.
    pub near_node: bool,
}

/// Result of one Heun trajectory step.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryStep {
    pub y: f64,
    pub near_node: bool,
    /// The step left the grid and was clamped back to the edge.
    pub escaped: bool,
}

impl VelocityField {
    /// Build the guidance field of `psi`, reusing an FFT plan and a scratch
    /// buffer for the spectral derivative.
    pub fn build(
        psi: &WaveFunction,
        m: f64,
        hbar: f64,
        eps_node: f64,
        plan: &FftPlan,
        scratch: &mut Vec<C64>,
    ) -> Result<Self> {
        let grid = psi.grid().clone();
        spectral_derivative(plan, &grid, psi.amplitudes(), scratch);
        let amps = psi.amplitudes();
        let peak_sqr = amps
            .iter()
            .map(|z| z.norm_sqr())
            .fold(0.0f64, |a, b| a.max(b));
        if peak_sqr == 0.0 {
            return Err(CoreError::AllPointsMasked);
        }
        let cut_sqr = eps_node * eps_node * peak_sqr;
        let n = grid.len();
        let mut values = vec![0.0; n];
        let mut node_mask = vec![false; n];
        let scale = hbar / m;
        let mut any_live = false;
        for j in 0..n {
            let denom = amps[j].norm_sqr();
            if denom < cut_sqr {
                node_mask[j] = true;
            } else {
                // Im(psi'/psi) = Im(psi' * conj(psi)) / |psi|^2
                values[j] = scale * (scratch[j] * amps[j].conj()).im / denom;
                any_live = true;
            }
        }
        if !any_live {
            return Err(CoreError::AllPointsMasked);
        }
        fill_masked_runs(&mut values, &node_mask);
        Ok(Self {
            grid,
            values,
            node_mask,
        })
    }

    /// Assemble a field from raw parts (testing and synthetic cases).
    pub fn from_raw(grid: Arc<Grid>, values: Vec<f64>, node_mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || node_mask.len() != grid.len() {
            return Err(CoreError::GridMismatch("field arrays != grid size"));
        }
        Ok(Self {
            grid,
            values,
            node_mask,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_mask(&self) -> &[bool] {
        &self.node_mask
    }

    /// Cubic (Catmull-Rom) interpolation at `y`; reproduces linear fields
    /// exactly and grid-point values bitwise.
    pub fn sample(&self, y: f64) -> Result<FieldSample> {
        if !self.grid.contains(y) {
            return Err(CoreError::BoundaryTouch("field evaluation outside grid"));
        }
        let t_full = self.grid.fractional_index(y);
        let j = (t_full.floor() as usize).min(self.grid.len() - 1);
        let t = t_full - j as f64;
        let n = self.grid.len();
        if t == 0.0 {
            return Ok(FieldSample {
                v: self.values[j],
                near_node: self.node_mask[j],
            });
        }
        let jm = j.saturating_sub(1);
        let j1 = (j + 1).min(n - 1);
        let j2 = (j + 2).min(n - 1);
        let (v0, v1, v2, v3) = (
            self.values[jm],
            self.values[j],
            self.values[j1],
            self.values[j2],
        );
        let near_node =
            self.node_mask[jm] || self.node_mask[j] || self.node_mask[j1] || self.node_mask[j2];
        let v = 0.5
            * (2.0 * v1
                + (-v0 + v2) * t
                + (2.0 * v0 - 5.0 * v1 + 4.0 * v2 - v3) * t * t
                + (-v0 + 3.0 * v1 - 3.0 * v2 + v3) * t * t * t);
        Ok(FieldSample { v, near_node })
    }
}

/// Linear fill of masked runs from the nearest live neighbors; runs touching
/// an edge copy the single live neighbor.
fn fill_masked_runs(values: &mut [f64], mask: &[bool]) {
    let n = values.len();
    let mut j = 0;
    while j < n {
        if !mask[j] {
            j += 1;
            continue;
        }
        let run_start = j;
        while j < n && mask[j] {
            j += 1;
        }
        let run_end = j; // exclusive
        let left = run_start.checked_sub(1);
        let right = if run_end < n { Some(run_end) } else { None };
        match (left, right) {
            (Some(l), Some(r)) => {
                let span = (r - l) as f64;
                for i in run_start..run_end {
                    let t = (i - l) as f64 / span;
                    values[i] = values[l] * (1.0 - t) + values[r] * t;
                }
            }
            (Some(l), None) => {
                let v = values[l];
                values[run_start..run_end].fill(v);
            }
            (None, Some(r)) => {
                let v = values[r];
                values[run_start..run_end].fill(v);
            }
            (None, None) => unreachable!("caller guarantees at least one live point"),
        }
    }
}

/// Heun step for one trajectory using the guidance fields at the step's
/// start and end times. Escaping evaluations clamp to the grid edge and
/// flag the step.
pub fn advance_bohmian(
    y: f64,
    field_t: &VelocityField,
    field_t_dt: &VelocityField,
    dt: f64,
) -> Result<TrajectoryStep> {
    debug_assert!(dt > 0.0);
    let grid = field_t.grid();
    let mut near_node = false;
    let mut escaped = false;
    let clamp = |y: f64, escaped: &mut bool| -> f64 {
        if grid.contains(y) {
            y
        } else {
            *escaped = true;
            // Largest representable point inside the grid on the high side.
            let hi = grid.x_min() + (grid.len() - 1) as f64 * grid.spacing();
            y.max(grid.x_min()).min(hi)
        }
    };
    let s0 = field_t.sample(y)?;
    near_node |= s0.near_node;
    let predictor = clamp(y + dt * s0.v, &mut escaped);
    let s1 = field_t_dt.sample(predictor)?;
    near_node |= s1.near_node;
    let corrected = clamp(y + 0.5 * dt * (s0.v + s1.v), &mut escaped);
    Ok(TrajectoryStep {
        y: corrected,
        near_node,
        escaped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, QuantumPotential};
    use crate::propagator::Propagator;
    use approx::assert_abs_diff_eq;

    fn grid512() -> Arc<Grid> {
        Arc::new(Grid::new(-12.8, 12.8, 512).unwrap())
    }

    fn harmonic() -> Model {
        Model::new(
            1.0,
            1.0,
            QuantumPotential::Harmonic { omega: 1.0 },
            1.0,
            1.0,
            0.0,
        )
        .unwrap()
    }

    fn build_field(psi: &WaveFunction, eps: f64) -> VelocityField {
        let plan = FftPlan::new(psi.grid().len()).unwrap();
        let mut scratch = Vec::new();
        VelocityField::build(psi, 1.0, 1.0, eps, &plan, &mut scratch).unwrap()
    }

    #[test]
    fn real_ground_state_has_zero_velocity() {
        let m = harmonic();
        let wf = WaveFunction::eigenstate(grid512(), &m, 0).unwrap();
        let f = build_field(&wf, EPS_NODE_DEFAULT);
        // At the deepest live tail point |psi| ~ eps_node * peak, so FFT
        // rounding in psi' is amplified by up to 1/eps_node; the residual
        // floor is a few 1e-9, still eight orders below the velocity scale.
        for (j, &v) in f.values().iter().enumerate() {
            if !f.node_mask()[j] {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn boosted_packet_moves_at_hbar_k0_over_m() {
        let wf = WaveFunction::gaussian(grid512(), 0.0, 1.0, 2.0).unwrap();
        let f = build_field(&wf, EPS_NODE_DEFAULT);
        let center = f.sample(0.0).unwrap();
        assert!(!center.near_node);
        assert_abs_diff_eq!(center.v, 2.0, epsilon = 1e-4);
    }

    #[test]
    fn excited_state_node_is_masked() {
        let m = harmonic();
        let wf = WaveFunction::eigenstate(grid512(), &m, 1).unwrap();
        let f = build_field(&wf, 1e-6);
        // phi_1 vanishes at the origin; x=0 is a grid point (index 256).
        assert!(f.node_mask()[256]);
        // Same rounding floor as the ground-state test: 1/|psi|
        // amplification near the mask threshold.
        for (j, &v) in f.values().iter().enumerate() {
            if !f.node_mask()[j] {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-8);
            }
        }
        let s = f.sample(0.012).unwrap();
        assert!(s.near_node);
    }

    #[test]
    fn cubic_reproduces_linear_fields_exactly() {
        let grid = grid512();
        let values: Vec<f64> = grid.points().iter().map(|&x| 0.3 * x - 1.1).collect();
        let mask = vec![false; grid.len()];
        let f = VelocityField::from_raw(grid.clone(), values, mask).unwrap();
        for &y in &[-7.31, -0.024, 3.7001, 11.99] {
            let s = f.sample(y).unwrap();
            assert_abs_diff_eq!(s.v, 0.3 * y - 1.1, epsilon = 1e-12);
        }
        // Grid points are returned bitwise.
        let j = 300;
        let y = grid.points()[j];
        assert_eq!(f.sample(y).unwrap().v, f.values()[j]);
    }

    #[test]
    fn sample_outside_grid_errors() {
        let wf = WaveFunction::gaussian(grid512(), 0.0, 1.0, 0.0).unwrap();
        let f = build_field(&wf, EPS_NODE_DEFAULT);
        assert!(f.sample(12.8).is_err());
        assert!(f.sample(-12.81).is_err());
    }

    #[test]
    fn zero_field_keeps_trajectory_fixed() {
        let grid = grid512();
        let f = VelocityField::from_raw(grid.clone(), vec![0.0; 512], vec![false; 512]).unwrap();
        let step = advance_bohmian(1.234, &f, &f, 0.01).unwrap();
        assert_eq!(step.y, 1.234);
        assert!(!step.near_node && !step.escaped);
    }

    #[test]
    fn free_packet_trajectory_follows_scaling_law() {
        // Bohmian trajectories of a spreading free Gaussian obey
        // y(t) = y0 sigma(t)/sigma(0).
        let grid = grid512();
        let dt = 1e-3;
        let sigma0 = 1.0;
        let zeros = vec![0.0; grid.len()];
        let prop = Propagator::with_potential(grid.clone(), &zeros, 1.0, 1.0, 0.0, dt).unwrap();
        let mut wf = WaveFunction::gaussian(grid.clone(), 0.0, sigma0, 0.0).unwrap();
        let plan = FftPlan::new(grid.len()).unwrap();
        let mut scratch = Vec::new();
        let mut field =
            VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch).unwrap();
        let mut y = sigma0;
        for _ in 0..1000 {
            prop.propagate(&mut wf, 0.0).unwrap();
            let next =
                VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch).unwrap();
            let step = advance_bohmian(y, &field, &next, dt).unwrap();
            assert!(!step.escaped);
            y = step.y;
            field = next;
        }
        let t = 1.0;
        let want = sigma0 * (1.0 + (t / (2.0 * sigma0 * sigma0)).powi(2)).sqrt();
        assert_abs_diff_eq!(y, want, epsilon = 1e-3);
    }

    #[test]
    fn trajectory_endpoint_error_is_second_order() {
        // Coarse grid: dx = 0.2 keeps the dt = 0.02 rung inside the
        // propagator's Nyquist-phase bound while the packet (sigma >= 1)
        // stays spectrally converged.
        let grid = Arc::new(Grid::new(-12.8, 12.8, 128).unwrap());
        let endpoint = |dt: f64| {
            let zeros = vec![0.0; grid.len()];
            let prop = Propagator::with_potential(grid.clone(), &zeros, 1.0, 1.0, 0.0, dt).unwrap();
            let mut wf = WaveFunction::gaussian(grid.clone(), 0.0, 1.0, 0.0).unwrap();
            let plan = FftPlan::new(grid.len()).unwrap();
            let mut scratch = Vec::new();
            let mut field =
                VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch).unwrap();
            let steps = (2.0 / dt).round() as usize;
            let mut y = 1.0;
            for _ in 0..steps {
                prop.propagate(&mut wf, 0.0).unwrap();
                let next = VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch)
                    .unwrap();
                y = advance_bohmian(y, &field, &next, dt).unwrap().y;
                field = next;
            }
            let want = (1.0 + 1.0f64).sqrt(); // sigma(2)/sigma(0) with the test parameters
            (y - want).abs()
        };
        let ratio = endpoint(0.02) / endpoint(0.01);
        assert!(
            (3.0..=5.0).contains(&ratio),
            "endpoint error ratio {ratio:.2} outside 4 +- 25%"
        );
    }

    #[test]
    fn decoupled_trajectories_never_cross() {
        let grid = grid512();
        let model = harmonic();
        let dt = 1e-3;
        let prop = Propagator::new(grid.clone(), &model, dt).unwrap();
        let mut wf = WaveFunction::gaussian(grid.clone(), 1.0, 0.9, 0.0).unwrap();
        let plan = FftPlan::new(grid.len()).unwrap();
        let mut scratch = Vec::new();
        let mut field =
            VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch).unwrap();
        let mut ys: Vec<f64> = (0..16).map(|i| -0.5 + 0.2 * i as f64).collect();
        for _ in 0..1000 {
            prop.propagate(&mut wf, 0.0).unwrap();
            let next =
                VelocityField::build(&wf, 1.0, 1.0, EPS_NODE_DEFAULT, &plan, &mut scratch).unwrap();
            for y in ys.iter_mut() {
                *y = advance_bohmian(*y, &field, &next, dt).unwrap().y;
            }
            field = next;
            for w in ys.windows(2) {
                assert!(w[0] < w[1], "trajectories crossed");
            }
        }
    }

    #[test]
    fn masked_run_fill_is_linear_between_neighbors() {
        let mut values = vec![1.0, 0.0, 0.0, 0.0, 5.0, 2.0];
        let mask = vec![false, true, true, true, false, false];
        fill_masked_runs(&mut values, &mask);
        assert_abs_diff_eq!(values[1], 2.0);
        assert_abs_diff_eq!(values[2], 3.0);
        assert_abs_diff_eq!(values[3], 4.0);
        // Edge run copies the single live neighbor.
        let mut values = vec![0.0, 0.0, 7.0, 3.0];
        let mask = vec![true, true, false, false];
        fill_masked_runs(&mut values, &mask);
        assert_abs_diff_eq!(values[0], 7.0);
        assert_abs_diff_eq!(values[1], 7.0);
    }
}
