//! Deterministic numerical experiments for the failure modes of the
//! back-reaction prescription: energy drift against a decoupled baseline,
//! loss of the |psi|^2 distribution of the guided positions, dependence of
//! final observables on intermediate re-sampling, dependence on the
//! mixture realizing a given density matrix, and bit-level determinism
//! probes. Every experiment is a pure function of (config, seeds).

use alloc::vec::Vec;

use crate::bohmian::{advance_bohmian, VelocityField};
use crate::density::{density_matrix_estimate, DensityMatrixEstimate};
use crate::ensemble::{
    Ensemble, EnsembleObservables, EnsembleStepper, EnergyMeans,
    InitialMixture, Replica, ReplicaFlags, ReplicaJob, StepContext,
};
use crate::error::{CoreError, Result};
use crate::stats;
use crate::wavefunction::WaveFunction;

#[allow(unused_imports)]
use num_traits::Float;

/// Fraction of flagged replicas above which a run's statistics are
/// considered contaminated by regularization or boundary effects.
pub const CONTAMINATION_LIMIT: f64 = 0.01;

/// Minimum ensemble size for distributional (KS) metrics.
pub const MIN_KS_ENSEMBLE: usize = 1000;

// ---------------------------------------------------------------------------
// Energy audit

#[derive(Debug, Clone)]
pub struct EnergyAudit {
    pub times: Vec<f64>,
    pub e_qexp: Vec<f64>,
    pub e_point: Vec<f64>,
    pub components: Vec<EnergyMeans>,
    /// max_t |E(t) - E(0)| / |E(0)| for each energy flavor.
    pub drift_qexp: f64,
    pub drift_point: f64,
    /// Same metric from a companion run with the coupling turned off,
    /// isolating integrator error from scheme error.
    pub baseline_drift_qexp: f64,
    pub baseline_drift_point: f64,
    pub flagged_fraction: f64,
    pub contaminated: bool,
}

fn energy_series(
    mixture: &InitialMixture,
    n: usize,
    seed: u64,
    model: &crate::model::Model,
    dt: f64,
    steps: u64,
    stride: u64,
    eps_node: f64,
    stepper: &impl EnsembleStepper,
) -> Result<(Vec<f64>, Vec<EnergyMeans>, f64)> {
    if stride == 0 || steps % stride != 0 {
        return Err(CoreError::BadParameter {
            name: "record_stride",
            value: stride as f64,
            requirement: "nonzero and dividing the step count",
        });
    }
    let mut e = Ensemble::sample_initial(mixture, n, seed, model, dt, eps_node)?;
    let plan = crate::fft::FftPlan::new(e.grid().len())?;
    let mut buf = Vec::new();
    let mut times = Vec::new();
    let mut comps = Vec::new();
    times.push(e.time());
    comps.push(e.energy_means(&plan, &mut buf)?);
    let mut done = 0;
    while done < steps {
        e.evolve_steps(stride, stepper)?;
        done += stride;
        times.push(e.time());
        comps.push(e.energy_means(&plan, &mut buf)?);
    }
    Ok((times, comps, e.flagged_fraction()))
}

/// Track both ensemble energies over a run and compare their drift to the
/// decoupled companion run at identical step size.
#[allow(clippy::too_many_arguments)]
pub fn energy_audit(
    mixture: &InitialMixture,
    n: usize,
    seed: u64,
    model: &crate::model::Model,
    dt: f64,
    steps: u64,
    stride: u64,
    eps_node: f64,
    stepper: &impl EnsembleStepper,
) -> Result<EnergyAudit> {
    let (times, comps, flagged) =
        energy_series(mixture, n, seed, model, dt, steps, stride, eps_node, stepper)?;
    let e_qexp: Vec<f64> = comps.iter().map(|c| c.e_qexp).collect();
    let e_point: Vec<f64> = comps.iter().map(|c| c.e_point).collect();
    let drift_qexp = stats::relative_drift(&e_qexp);
    let drift_point = stats::relative_drift(&e_point);
    let (baseline_drift_qexp, baseline_drift_point) = if model.lambda == 0.0 {
        (drift_qexp, drift_point)
    } else {
        let base = model.decoupled();
        let (_, bc, _) =
            energy_series(mixture, n, seed, &base, dt, steps, stride, eps_node, stepper)?;
        let bq: Vec<f64> = bc.iter().map(|c| c.e_qexp).collect();
        let bp: Vec<f64> = bc.iter().map(|c| c.e_point).collect();
        (stats::relative_drift(&bq), stats::relative_drift(&bp))
    };
    Ok(EnergyAudit {
        times,
        e_qexp,
        e_point,
        components: comps,
        drift_qexp,
        drift_point,
        baseline_drift_qexp,
        baseline_drift_point,
        flagged_fraction: flagged,
        contaminated: flagged > CONTAMINATION_LIMIT,
    })
}

// ---------------------------------------------------------------------------
// Equivariance

#[derive(Debug, Clone, Copy)]
pub struct EquivarianceReport {
    /// KS distance between the empirical CDF of guided positions and the
    /// CDF of the ensemble-mean density.
    pub ks_distance: f64,
    /// Approximate 99% one-sample threshold 1.63/sqrt(N); approximate
    /// because the reference distribution is itself estimated.
    pub threshold: f64,
    pub n: usize,
}

/// KS comparison of guided positions against an explicit reference
/// density on the grid.
pub fn equivariance_from_parts(
    ys: &[f64],
    density: &[f64],
    grid: &alloc::sync::Arc<crate::grid::Grid>,
) -> Result<EquivarianceReport> {
    let n = ys.len();
    if n < MIN_KS_ENSEMBLE {
        return Err(CoreError::BadParameter {
            name: "replica_count",
            value: n as f64,
            requirement: "at least 1000 for distributional metrics",
        });
    }
    let cdf = crate::sampling::GridCdf::from_density(grid.clone(), density)?;
    let mut sorted = ys.to_vec();
    let ks_distance = stats::ks_one_sample(&mut sorted, |y| cdf.eval(y));
    Ok(EquivarianceReport {
        ks_distance,
        threshold: stats::ks_threshold_one_sample_99(n),
        n,
    })
}

/// KS comparison of an ensemble's guided positions against its own mean
/// density (1/N) sum |psi_i|^2.
pub fn equivariance_metric(e: &Ensemble) -> Result<EquivarianceReport> {
    equivariance_from_parts(&e.ys(), &e.mean_density(), e.grid())
}

// ---------------------------------------------------------------------------
// Decoupled shared-carrier evolution

/// Result of evolving many guided positions under one common carrier
/// wavefunction with the coupling off.
#[derive(Debug, Clone)]
pub struct SharedCarrierRun {
    pub psi: WaveFunction,
    pub ys: Vec<f64>,
    pub flags: Vec<ReplicaFlags>,
}

/// Decoupled evolution of N positions guided by a single carrier.
///
/// With the coupling off, replicas sharing one initial wavefunction keep
/// bit-identical wavefunctions forever, so the per-replica quantum work
/// collapses to one carrier. The call sequence here mirrors the replica
/// step exactly (same half-step propagator, same empty coupling table,
/// same provisional-then-commit ordering), which keeps the result
/// bit-identical to the full per-replica machinery.
pub fn evolve_shared_carrier(
    psi0: &WaveFunction,
    ys: &[f64],
    model: &crate::model::Model,
    dt: f64,
    steps: u64,
    eps_node: f64,
) -> Result<SharedCarrierRun> {
    if model.lambda != 0.0 {
        return Err(CoreError::BadParameter {
            name: "lambda",
            value: model.lambda,
            requirement: "exactly 0 for shared-carrier evolution",
        });
    }
    let grid = psi0.grid().clone();
    let prop = crate::propagator::Propagator::new(grid, model, 0.5 * dt)?;
    let empty: Vec<crate::C64> = Vec::new();
    let mut deriv: Vec<crate::C64> = Vec::new();
    let mut psi = psi0.clone();
    let mut psi_next = psi0.clone();
    let mut ys = ys.to_vec();
    let mut flags = alloc::vec![ReplicaFlags::default(); ys.len()];
    let mut prev_field: Option<VelocityField> = None;
    for _ in 0..steps {
        let field_t = match prev_field.take() {
            Some(f) => f,
            None => VelocityField::build(
                &psi,
                model.m,
                model.hbar,
                eps_node,
                prop.plan(),
                &mut deriv,
            )?,
        };
        prop.step(psi.amplitudes_mut(), &empty)?;
        psi_next.clone_from(&psi);
        prop.step(psi_next.amplitudes_mut(), &empty)?;
        let field_dt = VelocityField::build(
            &psi_next,
            model.m,
            model.hbar,
            eps_node,
            prop.plan(),
            &mut deriv,
        )?;
        for (y, f) in ys.iter_mut().zip(flags.iter_mut()) {
            let moved = advance_bohmian(*y, &field_t, &field_dt, dt)?;
            *y = moved.y;
            f.node_proximity |= moved.near_node;
            f.boundary |= moved.escaped;
        }
        core::mem::swap(&mut psi, &mut psi_next);
        prev_field = Some(field_dt);
    }
    Ok(SharedCarrierRun { psi, ys, flags })
}

// ---------------------------------------------------------------------------
// Composability

#[derive(Debug, Clone)]
pub struct ComposabilityReport {
    pub one_shot: EnsembleObservables,
    pub two_stage: EnsembleObservables,
    /// Per-observable (mean difference) / (combined standard error), in
    /// `EnsembleObservables::NAMES` order.
    pub z_scores: [f64; 7],
    pub max_abs_z: f64,
    pub flagged_fraction_one_shot: f64,
    pub flagged_fraction_two_stage: f64,
}

fn observable_z_scores(a: &EnsembleObservables, b: &EnsembleObservables) -> [f64; 7] {
    let aa = a.as_array();
    let bb = b.as_array();
    let mut z = [0.0; 7];
    for i in 0..7 {
        z[i] = stats::z_score(aa[i], bb[i]);
    }
    z
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    mixture: &InitialMixture,
    n: usize,
    seed: u64,
    model: &crate::model::Model,
    dt: f64,
    steps1: u64,
    steps2: u64,
    resample_seed: Option<u64>,
    eps_node: f64,
    stepper: &impl EnsembleStepper,
) -> Result<Ensemble> {
    let mut e = Ensemble::sample_initial(mixture, n, seed, model, dt, eps_node)?;
    e.evolve_steps(steps1, stepper)?;
    if let Some(rs) = resample_seed {
        e.resample_bohmian(rs)?;
    }
    e.evolve_steps(steps2 - steps1, stepper)?;
    Ok(e)
}

/// Compare evolving straight to t2 against evolving to t1, re-drawing the
/// guided positions from the instantaneous |psi_i|^2, and continuing to
/// t2. Both arms start from the same sampled ensemble.
#[allow(clippy::too_many_arguments)]
pub fn composability_test(
    mixture: &InitialMixture,
    n: usize,
    seed: u64,
    resample_seed: u64,
    model: &crate::model::Model,
    dt: f64,
    steps1: u64,
    steps2: u64,
    eps_node: f64,
    stepper: &impl EnsembleStepper,
) -> Result<ComposabilityReport> {
    if !(steps1 > 0 && steps1 < steps2) {
        return Err(CoreError::BadParameter {
            name: "intermediate_time",
            value: steps1 as f64,
            requirement: "strictly between 0 and the final time",
        });
    }
    let one = run_arm(
        mixture, n, seed, model, dt, steps2, steps2, None, eps_node, stepper,
    )?;
    let two = run_arm(
        mixture,
        n,
        seed,
        model,
        dt,
        steps1,
        steps2,
        Some(resample_seed),
        eps_node,
        stepper,
    )?;
    let one_obs = one.observables()?;
    let two_obs = two.observables()?;
    let z_scores = observable_z_scores(&one_obs, &two_obs);
    Ok(ComposabilityReport {
        one_shot: one_obs,
        two_stage: two_obs,
        z_scores,
        max_abs_z: stats::max_abs_z(&z_scores),
        flagged_fraction_one_shot: one.flagged_fraction(),
        flagged_fraction_two_stage: two.flagged_fraction(),
    })
}

// ---------------------------------------------------------------------------
// Density-matrix representation dependence

#[derive(Debug, Clone)]
pub struct RhoEquivalenceReport {
    pub initial_rho_distance: f64,
    pub final_rho_distance: f64,
    pub final_observable_z_scores: [f64; 7],
    pub max_abs_z: f64,
    pub n: usize,
    /// 5/sqrt(N): the sampling slack granted to both the precondition and
    /// the decoupled control.
    pub sampling_tolerance: f64,
    pub initial_rho: DensityMatrixEstimate,
    pub final_rho_first: DensityMatrixEstimate,
    pub final_rho_second: DensityMatrixEstimate,
    pub flagged_fraction_first: f64,
    pub flagged_fraction_second: f64,
}

/// Evolve two mixtures that realize the same density matrix and report
/// how far apart their density-matrix estimates end up.
///
/// Precondition: the two sampled initial ensembles must agree in trace
/// norm within 5/sqrt(N) and have matching classical moments; otherwise
/// the experiment would compare different physical states.
#[allow(clippy::too_many_arguments)]
pub fn rho_equivalence_test(
    mix1: &InitialMixture,
    mix2: &InitialMixture,
    n: usize,
    seed1: u64,
    seed2: u64,
    model: &crate::model::Model,
    dt: f64,
    steps: u64,
    eps_node: f64,
    stepper: &impl EnsembleStepper,
) -> Result<RhoEquivalenceReport> {
    let tol = 5.0 / (n as f64).sqrt();
    let mut e1 = Ensemble::sample_initial(mix1, n, seed1, model, dt, eps_node)?;
    let mut e2 = Ensemble::sample_initial(mix2, n, seed2, model, dt, eps_node)?;
    let r1 = density_matrix_estimate(&e1)?;
    let r2 = density_matrix_estimate(&e2)?;
    let initial = r1.l1_distance(&r2)?;
    if initial > tol {
        return Err(CoreError::BadDensityMatrix(
            "initial mixtures do not realize the same density matrix",
        ));
    }
    let cm1 = r1.classical_moments;
    let cm2 = r2.classical_moments;
    let scale = 1.0 / (n as f64).sqrt();
    let classical_gap = (cm1.x - cm2.x)
        .abs()
        .max((cm1.k - cm2.k).abs())
        .max((cm1.x2 - cm2.x2).abs());
    if classical_gap > 5.0 * scale.max(1e-12) {
        return Err(CoreError::BadDensityMatrix(
            "initial classical marginals differ",
        ));
    }
    e1.evolve_steps(steps, stepper)?;
    e2.evolve_steps(steps, stepper)?;
    let f1 = density_matrix_estimate(&e1)?;
    let f2 = density_matrix_estimate(&e2)?;
    let final_distance = f1.l1_distance(&f2)?;
    let o1 = e1.observables()?;
    let o2 = e2.observables()?;
    let z = observable_z_scores(&o1, &o2);
    Ok(RhoEquivalenceReport {
        initial_rho_distance: initial,
        final_rho_distance: final_distance,
        final_observable_z_scores: z,
        max_abs_z: stats::max_abs_z(&z),
        n,
        sampling_tolerance: tol,
        initial_rho: r1,
        final_rho_first: f1,
        final_rho_second: f2,
        flagged_fraction_first: e1.flagged_fraction(),
        flagged_fraction_second: e2.flagged_fraction(),
    })
}

// ---------------------------------------------------------------------------
// Determinism probes

/// Evolve two copies of one replica independently and confirm they stay
/// bit-identical at every step.
pub fn determinism_check(proto: &Replica, job: &ReplicaJob) -> Result<bool> {
    let mut a = proto.clone();
    let mut b = proto.clone();
    let grid = proto.psi.grid().clone();
    let mut ctx_a = StepContext::new(grid.clone(), job.model, job.dt)?;
    let mut ctx_b = StepContext::new(grid, job.model, job.dt)?;
    let single = ReplicaJob { steps: 1, ..*job };
    for _ in 0..job.steps {
        crate::ensemble::step_replica(&mut a, &mut ctx_a, &single)?;
        crate::ensemble::step_replica(&mut b, &mut ctx_b, &single)?;
        if !crate::ensemble::replicas_bit_identical(&a, &b) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Perturb the guided position by `delta`, evolve both copies, and return
/// the first step at which any state bit differs; `None` if they never
/// separate within the step budget. A `Some` result shows the
/// determinism check above is not vacuous.
pub fn perturbation_divergence(
    proto: &Replica,
    job: &ReplicaJob,
    delta: f64,
) -> Result<Option<u64>> {
    let mut a = proto.clone();
    let mut b = proto.clone();
    b.y += delta;
    let grid = proto.psi.grid().clone();
    let mut ctx_a = StepContext::new(grid.clone(), job.model, job.dt)?;
    let mut ctx_b = StepContext::new(grid, job.model, job.dt)?;
    let single = ReplicaJob { steps: 1, ..*job };
    for step in 1..=job.steps {
        crate::ensemble::step_replica(&mut a, &mut ctx_a, &single)?;
        crate::ensemble::step_replica(&mut b, &mut ctx_b, &single)?;
        if !crate::ensemble::replicas_bit_identical(&a, &b) {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::ClassicalState;
    use crate::ensemble::{ensembles_bit_identical, ClassicalInit, SequentialStepper};
    use crate::model::{Model, QuantumPotential};
    use alloc::sync::Arc;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn grid() -> Arc<crate::grid::Grid> {
        Arc::new(crate::grid::Grid::new(-12.8, 12.8, 128).unwrap())
    }

    fn model(lambda: f64) -> Model {
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

    fn ground_mixture(m: &Model) -> InitialMixture {
        let psi = WaveFunction::eigenstate(grid(), m, 0).unwrap();
        InitialMixture::pure(ClassicalInit::Point { x: 1.0, k: 0.0 }, psi).unwrap()
    }

    const DT: f64 = 2e-3;

    #[test]
    fn audit_components_sum_to_totals_and_baseline_matches_decoupled() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let audit = energy_audit(
            &mix,
            4,
            3,
            &m,
            DT,
            40,
            10,
            1e-6,
            &SequentialStepper,
        )
        .unwrap();
        assert_eq!(audit.times.len(), 5);
        for c in &audit.components {
            let sum = c.kinetic + c.v_q + c.v_int_exp + c.cl_kinetic + c.v_c;
            assert_abs_diff_eq!(sum, c.e_qexp, epsilon = 1e-12);
        }
        assert_eq!(audit.drift_qexp, audit.baseline_drift_qexp);
        assert!(audit.drift_qexp < 1e-7, "decoupled drift {:.2e}", audit.drift_qexp);
        assert!(!audit.contaminated);
    }

    #[test]
    fn audit_rejects_bad_stride() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        assert!(energy_audit(&mix, 4, 3, &m, DT, 40, 7, 1e-6, &SequentialStepper).is_err());
    }

    #[test]
    fn equivariance_holds_at_sampling_time() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let e = Ensemble::sample_initial(&mix, 2000, 17, &m, DT, 1e-6).unwrap();
        let rep = equivariance_metric(&e).unwrap();
        assert!(
            rep.ks_distance <= rep.threshold,
            "KS {:.4} vs {:.4}",
            rep.ks_distance,
            rep.threshold
        );
    }

    #[test]
    fn equivariance_requires_large_ensembles() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let e = Ensemble::sample_initial(&mix, 100, 17, &m, DT, 1e-6).unwrap();
        assert!(equivariance_metric(&e).is_err());
    }

    #[test]
    fn shared_carrier_matches_full_machinery_bitwise() {
        let m = model(0.0);
        let psi = WaveFunction::gaussian(grid(), 1.0, 0.707, 0.0).unwrap();
        let ys = [0.4, -0.2, 1.1, 0.0, -0.9, 0.66, 0.05, -1.3];
        let replicas: Vec<Replica> = ys
            .iter()
            .map(|&y| Replica {
                u: ClassicalState::new(1.0, 0.0).unwrap(),
                psi: psi.clone(),
                y,
                flags: ReplicaFlags::default(),
            })
            .collect();
        let mut full =
            Ensemble::from_replicas(replicas, m, DT, 0.0, 0, 1e-6).unwrap();
        full.evolve_steps(50, &SequentialStepper).unwrap();
        let fast = evolve_shared_carrier(&psi, &ys, &m, DT, 50, 1e-6).unwrap();
        for (r, (y_fast, f_fast)) in full
            .replicas()
            .iter()
            .zip(fast.ys.iter().zip(&fast.flags))
        {
            assert_eq!(r.y.to_bits(), y_fast.to_bits());
            assert_eq!(r.flags, *f_fast);
        }
        for (za, zb) in full.replicas()[0]
            .psi
            .amplitudes()
            .iter()
            .zip(fast.psi.amplitudes())
        {
            assert_eq!(za.re.to_bits(), zb.re.to_bits());
            assert_eq!(za.im.to_bits(), zb.im.to_bits());
        }
    }

    #[test]
    fn shared_carrier_requires_decoupled_model() {
        let m = model(0.1);
        let psi = WaveFunction::gaussian(grid(), 1.0, 0.707, 0.0).unwrap();
        assert!(evolve_shared_carrier(&psi, &[0.0, 0.1], &m, DT, 5, 1e-6).is_err());
    }

    #[test]
    fn composability_rejects_bad_time_ordering() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let r = composability_test(&mix, 8, 1, 2, &m, DT, 50, 50, 1e-6, &SequentialStepper);
        assert!(r.is_err());
        let r = composability_test(&mix, 8, 1, 2, &m, DT, 0, 50, 1e-6, &SequentialStepper);
        assert!(r.is_err());
    }

    #[test]
    fn decoupled_arms_agree_exactly() {
        // With the coupling off, re-drawing guided positions cannot move
        // any observable: the wavefunction and classical state never see
        // y, and both energy flavors coincide.
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let rep = composability_test(
            &mix,
            64,
            9,
            10,
            &m,
            DT,
            25,
            50,
            1e-6,
            &SequentialStepper,
        )
        .unwrap();
        assert!(rep.max_abs_z <= 1e-12, "z {:.3e}", rep.max_abs_z);
    }

    #[test]
    fn skipping_the_resample_reproduces_one_shot_bits() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let one = run_arm(&mix, 8, 4, &m, DT, 60, 60, None, 1e-6, &SequentialStepper).unwrap();
        let two = run_arm(&mix, 8, 4, &m, DT, 25, 60, None, 1e-6, &SequentialStepper).unwrap();
        assert!(ensembles_bit_identical(&one, &two));
    }

    #[test]
    fn determinism_check_confirms_pure_stepping() {
        let m = model(0.25);
        let psi = WaveFunction::gaussian(grid(), 0.5, 0.8, 0.0).unwrap();
        let proto = Replica {
            u: ClassicalState::new(1.0, -0.2).unwrap(),
            psi,
            y: 0.3,
            flags: ReplicaFlags::default(),
        };
        let job = ReplicaJob {
            model: &m,
            dt: DT,
            eps_node: 1e-6,
            steps: 200,
        };
        assert!(determinism_check(&proto, &job).unwrap());
    }

    #[test]
    fn perturbed_position_diverges() {
        let m = model(0.25);
        let psi = WaveFunction::gaussian(grid(), 0.5, 0.8, 0.0).unwrap();
        let proto = Replica {
            u: ClassicalState::new(1.0, -0.2).unwrap(),
            psi,
            y: 0.3,
            flags: ReplicaFlags::default(),
        };
        let job = ReplicaJob {
            model: &m,
            dt: DT,
            eps_node: 1e-6,
            steps: 50,
        };
        let when = perturbation_divergence(&proto, &job, 1e-12).unwrap();
        assert!(when.is_some(), "perturbation never separated the copies");
    }

    #[test]
    fn rho_test_rejects_unequal_mixtures() {
        let m = model(0.0);
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let point = ClassicalInit::Point { x: 1.0, k: 0.0 };
        let m1 = InitialMixture::pure(point, phi0).unwrap();
        let m2 = InitialMixture::pure(point, phi1).unwrap();
        let r = rho_equivalence_test(
            &m1,
            &m2,
            200,
            1,
            2,
            &m,
            DT,
            10,
            1e-6,
            &SequentialStepper,
        );
        assert!(matches!(r, Err(CoreError::BadDensityMatrix(_))));
    }

    #[test]
    fn decoupled_rho_control_stays_within_sampling_error() {
        let m = model(0.0);
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let half = crate::C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = WaveFunction::superposition(&[(half, &phi0), (half, &phi1)]).unwrap();
        let minus = WaveFunction::superposition(&[(half, &phi0), (-half, &phi1)]).unwrap();
        let point = ClassicalInit::Point { x: 1.0, k: 0.0 };
        let fock = InitialMixture::new(vec![
            crate::ensemble::MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: phi0,
            },
            crate::ensemble::MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: phi1,
            },
        ])
        .unwrap();
        let sup = InitialMixture::new(vec![
            crate::ensemble::MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: plus,
            },
            crate::ensemble::MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: minus,
            },
        ])
        .unwrap();
        let rep = rho_equivalence_test(
            &fock,
            &sup,
            800,
            5,
            6,
            &m,
            DT,
            50,
            1e-6,
            &SequentialStepper,
        )
        .unwrap();
        assert!(rep.initial_rho_distance <= rep.sampling_tolerance);
        assert!(
            rep.final_rho_distance <= rep.sampling_tolerance,
            "final {:.4} vs tol {:.4}",
            rep.final_rho_distance,
            rep.sampling_tolerance
        );
    }
}
