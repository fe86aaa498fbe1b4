//! Exact two-coordinate quantum propagation used as the ground-truth
//! oracle: the heavy coordinate is treated quantum-mechanically instead of
//! classically, so the hybrid scheme's output can be compared against a
//! controlled reference. Also carries the closed-form normal-mode solution
//! for the all-harmonic bilinear model, which checks the oracle itself.
//!
//! Amplitudes are stored row-major with the light coordinate x as the row
//! index and the heavy coordinate X contiguous: `amps[j_q * n_c + j_c]`.

use alloc::{sync::Arc, vec, vec::Vec};

use crate::ensemble::{ClassicalInit, Ensemble, EnsembleStepper, InitialMixture};
use crate::error::{CoreError, Result};
use crate::fft::FftPlan;
use crate::grid::Grid;
use crate::model::{Model, QuantumPotential};
use crate::stats::MeanErr;
use crate::wavefunction::WaveFunction;
use crate::{cis, C64};

#[allow(unused_imports)]
use num_traits::Float;

pub const NORM_TOL_2D: f64 = 1e-10;
const STEP_NORM_TOL: f64 = 1e-8;
const BOUNDARY_AMP_RATIO: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct WaveFunction2D {
    grid_q: Arc<Grid>,
    grid_c: Arc<Grid>,
    amps: Vec<C64>,
}

impl WaveFunction2D {
    pub fn from_amplitudes(grid_q: Arc<Grid>, grid_c: Arc<Grid>, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != grid_q.len() * grid_c.len() {
            return Err(CoreError::GridMismatch("2d amplitude count"));
        }
        let mut psi = Self {
            grid_q,
            grid_c,
            amps,
        };
        psi.normalize()?;
        Ok(psi)
    }

    /// Product state psi_q(x) * psi_c(X) of two normalized 1D states.
    pub fn product(psi_q: &WaveFunction, psi_c: &WaveFunction) -> Result<Self> {
        psi_q.ensure_normalized(1e-8)?;
        psi_c.ensure_normalized(1e-8)?;
        let aq = psi_q.amplitudes();
        let ac = psi_c.amplitudes();
        let n_c = ac.len();
        let mut amps = vec![C64::new(0.0, 0.0); aq.len() * n_c];
        for (jq, zq) in aq.iter().enumerate() {
            for (jc, zc) in ac.iter().enumerate() {
                amps[jq * n_c + jc] = zq * zc;
            }
        }
        Self::from_amplitudes(psi_q.grid().clone(), psi_c.grid().clone(), amps)
    }

    pub fn grid_q(&self) -> &Arc<Grid> {
        &self.grid_q
    }

    pub fn grid_c(&self) -> &Arc<Grid> {
        &self.grid_c
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    fn weight(&self) -> f64 {
        self.grid_q.spacing() * self.grid_c.spacing()
    }

    pub fn norm(&self) -> f64 {
        let s: f64 = self.amps.iter().map(|z| z.norm_sqr()).sum();
        (s * self.weight()).sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(CoreError::NotNormalized {
                norm: n,
                tol: NORM_TOL_2D,
            });
        }
        let inv = 1.0 / n;
        for z in self.amps.iter_mut() {
            *z *= inv;
        }
        Ok(())
    }

    /// All four edge lines must stay below `BOUNDARY_AMP_RATIO` of the
    /// peak amplitude; a touched edge means wrap-around contamination.
    pub fn boundary_clear(&self) -> bool {
        let n_q = self.grid_q.len();
        let n_c = self.grid_c.len();
        let peak = self
            .amps
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        let cut = BOUNDARY_AMP_RATIO * peak;
        let edge_q = (0..n_c)
            .any(|jc| self.amps[jc].norm() > cut || self.amps[(n_q - 1) * n_c + jc].norm() > cut);
        let edge_c = (0..n_q)
            .any(|jq| self.amps[jq * n_c].norm() > cut || self.amps[jq * n_c + n_c - 1].norm() > cut);
        !(edge_q || edge_c)
    }

    /// Position density marginal over the light coordinate.
    pub fn density_q(&self) -> Vec<f64> {
        let n_q = self.grid_q.len();
        let n_c = self.grid_c.len();
        let dxc = self.grid_c.spacing();
        let mut d = vec![0.0; n_q];
        for jq in 0..n_q {
            let row = &self.amps[jq * n_c..(jq + 1) * n_c];
            d[jq] = row.iter().map(|z| z.norm_sqr()).sum::<f64>() * dxc;
        }
        d
    }

    /// Quadrature moments, heavy-sector momentum mean, and the reduced
    /// density matrix of the light coordinate with its purity.
    pub fn marginals(&self, hbar: f64) -> Result<Marginals2D> {
        let n_q = self.grid_q.len();
        let n_c = self.grid_c.len();
        let w = self.weight();
        let xs = self.grid_q.points();
        let cs = self.grid_c.points();
        let mut x = 0.0;
        let mut x2 = 0.0;
        let mut big_x = 0.0;
        let mut big_x2 = 0.0;
        for jq in 0..n_q {
            for jc in 0..n_c {
                let p = self.amps[jq * n_c + jc].norm_sqr() * w;
                x += xs[jq] * p;
                x2 += xs[jq] * xs[jq] * p;
                big_x += cs[jc] * p;
                big_x2 += cs[jc] * cs[jc] * p;
            }
        }
        // Heavy-sector momentum via row transforms; Parseval weight w/n_c.
        let plan_c = FftPlan::new(n_c)?;
        let kcs = self.grid_c.wavenumbers();
        let mut row = vec![C64::new(0.0, 0.0); n_c];
        let mut p_c = 0.0;
        for jq in 0..n_q {
            row.copy_from_slice(&self.amps[jq * n_c..(jq + 1) * n_c]);
            plan_c.forward(&mut row);
            for (jc, z) in row.iter().enumerate() {
                p_c += hbar * kcs[jc] * z.norm_sqr();
            }
        }
        p_c *= w / n_c as f64;
        // Partial trace over the heavy coordinate: kernel units 1/length.
        let dxc = self.grid_c.spacing();
        let mut rho_q = vec![C64::new(0.0, 0.0); n_q * n_q];
        for j in 0..n_q {
            let row_j = &self.amps[j * n_c..(j + 1) * n_c];
            for k in j..n_q {
                let row_k = &self.amps[k * n_c..(k + 1) * n_c];
                let mut s = C64::new(0.0, 0.0);
                for jc in 0..n_c {
                    s += row_j[jc] * row_k[jc].conj();
                }
                rho_q[j * n_q + k] = s * dxc;
            }
        }
        for j in 0..n_q {
            for k in (j + 1)..n_q {
                rho_q[k * n_q + j] = rho_q[j * n_q + k].conj();
            }
        }
        let dxq = self.grid_q.spacing();
        let purity: f64 = rho_q.iter().map(|z| z.norm_sqr()).sum::<f64>() * dxq * dxq;
        Ok(Marginals2D {
            x,
            x2,
            big_x,
            big_x2,
            p_c,
            rho_q,
            purity,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Marginals2D {
    pub x: f64,
    pub x2: f64,
    pub big_x: f64,
    pub big_x2: f64,
    pub p_c: f64,
    /// Reduced density matrix of the light coordinate, row-major kernel
    /// values with units 1/length.
    pub rho_q: Vec<C64>,
    pub purity: f64,
}

/// Split-operator propagator on the full two-coordinate grid with masses
/// (m, M) and potential V_q(x) + V_c(X) + lambda x X.
pub struct Propagator2D {
    grid_q: Arc<Grid>,
    grid_c: Arc<Grid>,
    plan_q: FftPlan,
    plan_c: FftPlan,
    half_kick: Vec<C64>,
    kin: Vec<C64>,
    col: Vec<C64>,
}

impl Propagator2D {
    pub fn new(grid_q: Arc<Grid>, grid_c: Arc<Grid>, model: &Model, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(CoreError::BadParameter {
                name: "dt",
                value: dt,
                requirement: "finite and nonzero",
            });
        }
        for (kmax, mass) in [
            (grid_q.max_wavenumber(), model.m),
            (grid_c.max_wavenumber(), model.m_cl),
        ] {
            let phase = model.hbar * kmax * kmax * dt.abs() / (2.0 * mass);
            if phase >= core::f64::consts::PI {
                return Err(CoreError::TimestepTooLarge { phase });
            }
        }
        let n_q = grid_q.len();
        let n_c = grid_c.len();
        let mut half_kick = vec![C64::new(0.0, 0.0); n_q * n_c];
        for (jq, &xq) in grid_q.points().iter().enumerate() {
            let vq = model.v_quantum(xq);
            for (jc, &xc) in grid_c.points().iter().enumerate() {
                let v = vq + model.v_classical(xc) + model.v_int(xq, xc);
                half_kick[jq * n_c + jc] = cis(-v * dt / (2.0 * model.hbar));
            }
        }
        let mut kin = vec![C64::new(0.0, 0.0); n_q * n_c];
        for (jq, &kq) in grid_q.wavenumbers().iter().enumerate() {
            let tq = model.hbar * kq * kq / (2.0 * model.m);
            for (jc, &kc) in grid_c.wavenumbers().iter().enumerate() {
                let tc = model.hbar * kc * kc / (2.0 * model.m_cl);
                kin[jq * n_c + jc] = cis(-(tq + tc) * dt);
            }
        }
        Ok(Self {
            grid_q: grid_q.clone(),
            grid_c,
            plan_q: FftPlan::new(n_q)?,
            plan_c: FftPlan::new(n_c)?,
            half_kick,
            kin,
            col: vec![C64::new(0.0, 0.0); n_q],
        })
    }

    fn transform_q(&mut self, amps: &mut [C64], inverse: bool) {
        let n_q = self.grid_q.len();
        let n_c = self.grid_c.len();
        for jc in 0..n_c {
            for jq in 0..n_q {
                self.col[jq] = amps[jq * n_c + jc];
            }
            if inverse {
                self.plan_q.inverse(&mut self.col);
            } else {
                self.plan_q.forward(&mut self.col);
            }
            for jq in 0..n_q {
                amps[jq * n_c + jc] = self.col[jq];
            }
        }
    }

    pub fn step(&mut self, psi: &mut WaveFunction2D) -> Result<()> {
        if !psi.grid_q.same_as(&self.grid_q) || !psi.grid_c.same_as(&self.grid_c) {
            return Err(CoreError::GridMismatch("2d propagator grids"));
        }
        let w = psi.weight();
        let before: f64 = psi.amps.iter().map(|z| z.norm_sqr()).sum();
        for (z, k) in psi.amps.iter_mut().zip(&self.half_kick) {
            *z *= k;
        }
        let n_c = self.grid_c.len();
        for row in psi.amps.chunks_mut(n_c) {
            self.plan_c.forward(row);
        }
        self.transform_q(&mut psi.amps, false);
        for (z, k) in psi.amps.iter_mut().zip(&self.kin) {
            *z *= k;
        }
        self.transform_q(&mut psi.amps, true);
        for row in psi.amps.chunks_mut(n_c) {
            self.plan_c.inverse(row);
        }
        for (z, k) in psi.amps.iter_mut().zip(&self.half_kick) {
            *z *= k;
        }
        let after: f64 = psi.amps.iter().map(|z| z.norm_sqr()).sum();
        let drift = ((after * w).sqrt() - (before * w).sqrt()).abs();
        if !(drift <= STEP_NORM_TOL) {
            return Err(CoreError::NotNormalized {
                norm: (after * w).sqrt(),
                tol: STEP_NORM_TOL,
            });
        }
        Ok(())
    }
}

/// Ground-state width of the heavy oscillator: the least-arbitrary
/// quantum stand-in for a classical point at (X0, K0).
pub fn heavy_ground_width(model: &Model) -> f64 {
    (model.hbar / (2.0 * model.m_cl * model.omega_c)).sqrt()
}

/// Map a classical point to a heavy-sector Gaussian packet of
/// `width_scale` times the ground-state width.
pub fn heavy_packet(
    grid_c: Arc<Grid>,
    model: &Model,
    x0: f64,
    k0: f64,
    width_scale: f64,
) -> Result<WaveFunction> {
    if !(width_scale.is_finite() && width_scale > 0.0) {
        return Err(CoreError::BadParameter {
            name: "width_scale",
            value: width_scale,
            requirement: "finite and > 0",
        });
    }
    WaveFunction::gaussian(grid_c, x0, width_scale * heavy_ground_width(model), k0)
}

/// Closed-form mean trajectory (⟨x⟩, ⟨X⟩) of the all-harmonic bilinear
/// model, from the normal modes of the mass-weighted coupling matrix.
/// Mean positions of Gaussian states follow the classical solution
/// exactly because the Hamiltonian is quadratic.
pub fn bilinear_mean_trajectory(
    model: &Model,
    x0: f64,
    v0: f64,
    big_x0: f64,
    big_v0: f64,
    t: f64,
) -> Result<(f64, f64)> {
    let omega_q = match model.potential {
        QuantumPotential::Harmonic { omega } => omega,
        QuantumPotential::DoubleWell { .. } => {
            return Err(CoreError::BadParameter {
                name: "potential",
                value: 0.0,
                requirement: "harmonic for the normal-mode closed form",
            })
        }
    };
    let a = omega_q * omega_q;
    let b = model.omega_c * model.omega_c;
    let g = model.lambda / (model.m * model.m_cl).sqrt();
    // Mode frequencies must stay real: the coupled quadratic form must be
    // positive definite.
    let disc = (0.25 * (a - b) * (a - b) + g * g).sqrt();
    let mu1 = 0.5 * (a + b) - disc;
    let mu2 = 0.5 * (a + b) + disc;
    if mu1 <= 0.0 {
        return Err(CoreError::BadParameter {
            name: "lambda",
            value: model.lambda,
            requirement: "below the stability bound m M w_q^2 w_c^2",
        });
    }
    // Eigenvector angle of [[a, g], [g, b]]: mode 1 along (cos th, sin th).
    let th = 0.5 * (-2.0 * g).atan2(b - a);
    let (s, c) = th.sin_cos();
    // Mass-weighted coordinates and velocities.
    let q = [model.m.sqrt() * x0, model.m_cl.sqrt() * big_x0];
    let qd = [model.m.sqrt() * v0, model.m_cl.sqrt() * big_v0];
    let modes = [
        (mu1.sqrt(), c * q[0] + s * q[1], c * qd[0] + s * qd[1]),
        (mu2.sqrt(), -s * q[0] + c * q[1], -s * qd[0] + c * qd[1]),
    ];
    let mut out = [0.0f64; 2];
    for (i, basis) in [[c, -s], [s, c]].iter().enumerate() {
        let mut val = 0.0;
        for (m_idx, &(w, amp, vel)) in modes.iter().enumerate() {
            let phase = amp * (w * t).cos() + vel / w * (w * t).sin();
            val += basis[m_idx] * phase;
        }
        out[i] = val;
    }
    Ok((out[0] / model.m.sqrt(), out[1] / model.m_cl.sqrt()))
}

/// Hybrid ensemble vs exact two-coordinate run from matched initial
/// states, with the classical point mapped to a heavy Gaussian packet.
#[derive(Debug, Clone)]
pub struct HybridExactComparison {
    pub times: Vec<f64>,
    pub hybrid_x: Vec<MeanErr>,
    pub hybrid_big_x: Vec<MeanErr>,
    pub hybrid_x2: Vec<MeanErr>,
    pub exact_x: Vec<f64>,
    pub exact_big_x: Vec<f64>,
    pub exact_x2: Vec<f64>,
    /// First recorded time at which |hybrid <X> - exact <X>| exceeds
    /// `tolerance` times the peak |exact <X>| (floored at the heavy
    /// packet width); None if it never does.
    pub agreement_horizon: Option<f64>,
    pub tolerance: f64,
    pub flagged_fraction: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn compare_hybrid_exact(
    psi_q: &WaveFunction,
    grid_c: Arc<Grid>,
    x_cl0: f64,
    k_cl0: f64,
    n: usize,
    seed: u64,
    model: &Model,
    dt: f64,
    steps: u64,
    stride: u64,
    eps_node: f64,
    width_scale: f64,
    tolerance: f64,
    stepper: &impl EnsembleStepper,
) -> Result<HybridExactComparison> {
    if stride == 0 || steps % stride != 0 {
        return Err(CoreError::BadParameter {
            name: "record_stride",
            value: stride as f64,
            requirement: "nonzero and dividing the step count",
        });
    }
    let mixture = InitialMixture::pure(
        ClassicalInit::Point {
            x: x_cl0,
            k: k_cl0,
        },
        psi_q.clone(),
    )?;
    let mut hybrid = Ensemble::sample_initial(&mixture, n, seed, model, dt, eps_node)?;
    let packet = heavy_packet(grid_c.clone(), model, x_cl0, k_cl0, width_scale)?;
    let mut exact = WaveFunction2D::product(psi_q, &packet)?;
    let mut prop = Propagator2D::new(psi_q.grid().clone(), grid_c, model, dt)?;

    let mut times = Vec::new();
    let mut hybrid_x = Vec::new();
    let mut hybrid_big_x = Vec::new();
    let mut hybrid_x2 = Vec::new();
    let mut exact_x = Vec::new();
    let mut exact_big_x = Vec::new();
    let mut exact_x2 = Vec::new();

    let mut record = |h: &Ensemble, e: &WaveFunction2D| -> Result<()> {
        let obs = h.observables()?;
        let m2 = e.marginals(model.hbar)?;
        times.push(h.time());
        hybrid_x.push(obs.x_q);
        hybrid_big_x.push(obs.x_cl);
        hybrid_x2.push(obs.x_q2);
        exact_x.push(m2.x);
        exact_big_x.push(m2.big_x);
        exact_x2.push(m2.x2);
        Ok(())
    };
    record(&hybrid, &exact)?;
    let mut done = 0;
    while done < steps {
        hybrid.evolve_steps(stride, stepper)?;
        for _ in 0..stride {
            prop.step(&mut exact)?;
        }
        done += stride;
        record(&hybrid, &exact)?;
    }
    drop(record);

    // Normalization floor: excursions below the heavy packet's own
    // quantum width are indistinguishable from its zero-point spread, so
    // agreement is never judged against a smaller scale.
    let peak = exact_big_x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = tolerance * peak.max(width_scale * heavy_ground_width(model));
    let mut horizon = None;
    for (i, t) in times.iter().enumerate() {
        if (hybrid_big_x[i].mean - exact_big_x[i]).abs() > cut {
            horizon = Some(*t);
            break;
        }
    }
    Ok(HybridExactComparison {
        times,
        hybrid_x,
        hybrid_big_x,
        hybrid_x2,
        exact_x,
        exact_big_x,
        exact_x2,
        agreement_horizon: horizon,
        tolerance,
        flagged_fraction: hybrid.flagged_fraction(),
    })
}
