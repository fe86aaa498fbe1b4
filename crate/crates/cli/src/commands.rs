//! Subcommand implementations.
//!
//! Every command follows the same contract: validate the config (exit 2
//! on rejection), run the physics, write its CSV artifacts plus a
//! summary.json recording the full config echo, metrics, and control-arm
//! outcomes, then exit 0 only when clean. Exit 3 flags a contaminated
//! run (more than 1% of replicas touched a node or the grid boundary, so
//! the numbers cannot be trusted); exit 4 flags a failed control arm.
//! Contamination wins when both occur. Findings themselves (a large KS
//! distance, a large z-score, early loss of agreement with the exact
//! reference) are metrics, not failures: the controls only certify that
//! the machinery producing them is sound.

use std::path::PathBuf;
use std::sync::Arc;

use qcbohm_core::diagnostics::{self, CONTAMINATION_LIMIT, MIN_KS_ENSEMBLE};
use qcbohm_core::ensemble::{
    ensembles_bit_identical, ClassicalInit, Ensemble, EnsembleObservables, InitialMixture,
    MixtureComponent, ReplicaJob,
};
use qcbohm_core::error::CoreError;
use qcbohm_core::exact2d;
use qcbohm_core::fft::FftPlan;
use qcbohm_core::grid::Grid;
use qcbohm_core::model::{Model, QuantumPotential};
use qcbohm_core::stats::{self, MeanErr};
use qcbohm_core::wavefunction::WaveFunction;
use qcbohm_core::C64;
use serde::Serialize;

use crate::config::{ClassicalSpec, ConfigError, RunConfig};
use crate::output::{self, cells, fmt, ControlResult, SeedEcho, Summary};
use crate::stepper::RayonStepper;
use crate::CliError;

/// Flags shared by every config-driven subcommand.
#[derive(Debug, Clone)]
pub struct CommonOpts {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
}

fn runtime(e: CoreError) -> CliError {
    CliError::Runtime(e.into())
}

/// Config, model, grid, mixture, stepper, and output directory: the
/// shared setup for one run.
struct Prepared {
    cfg: RunConfig,
    model: Model,
    grid: Arc<Grid>,
    mixture: InitialMixture,
    stepper: RayonStepper,
    out: PathBuf,
}

impl Prepared {
    fn new(o: &CommonOpts) -> Result<Self, CliError> {
        let cfg = RunConfig::load(&o.config, o.seed)?;
        let model = cfg.build_model()?;
        let grid = cfg.build_grid()?;
        let mixture = cfg.build_mixture(&cfg.components, &grid, &model)?;
        let stepper = RayonStepper::new(o.threads).map_err(CliError::Runtime)?;
        let out = output::ensure_out_dir(&o.out).map_err(CliError::Runtime)?;
        Ok(Self {
            cfg,
            model,
            grid,
            mixture,
            stepper,
            out,
        })
    }

    fn sample(&self, n: usize, seed: u64) -> Result<Ensemble, CliError> {
        Ensemble::sample_initial(
            &self.mixture,
            n,
            seed,
            &self.model,
            self.cfg.dt,
            self.cfg.eps_node,
        )
        .map_err(runtime)
    }

    /// Write summary.json and map the outcome to the process exit status.
    fn finish<M: Serialize>(
        &self,
        command: &'static str,
        metrics: M,
        controls: Vec<ControlResult>,
        flagged_fraction: f64,
    ) -> Result<i32, CliError> {
        let contaminated = flagged_fraction > CONTAMINATION_LIMIT;
        let exit_status = if contaminated {
            3
        } else if controls.iter().any(|c| !c.pass) {
            4
        } else {
            0
        };
        let summary = Summary {
            command,
            scenario: &self.cfg.scenario,
            seeds: SeedEcho::of(&self.cfg),
            config: Some(&self.cfg),
            metrics,
            controls,
            flagged_fraction,
            contaminated,
            exit_status,
        };
        output::write_summary(&self.out, &summary).map_err(CliError::Runtime)?;
        Ok(exit_status)
    }
}

fn observables_header() -> Vec<String> {
    let mut h = vec!["time".to_owned()];
    for name in EnsembleObservables::NAMES {
        h.push(format!("{name}_mean"));
        h.push(format!("{name}_stderr"));
    }
    h
}

fn observables_row(time: f64, obs: &EnsembleObservables) -> Vec<String> {
    let mut row = vec![fmt(time)];
    for m in obs.as_array() {
        row.push(fmt(m.mean));
        row.push(fmt(m.stderr));
    }
    row
}

fn write_csv_owned_header(
    path: &std::path::Path,
    header: &[String],
    rows: Vec<Vec<String>>,
) -> Result<(), CliError> {
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    output::write_csv(path, &refs, rows).map_err(CliError::Runtime)
}

// ---------------------------------------------------------------------------
// evolve

#[derive(Serialize)]
struct EvolveMetrics {
    final_time: f64,
    max_norm_error: f64,
    final_observables: EnsembleObservables,
}

pub fn evolve(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    let mut e = p.sample(cfg.replicas, cfg.seed)?;

    let mut rows = vec![observables_row(e.time(), &e.observables().map_err(runtime)?)];
    let mut done = 0;
    while done < cfg.steps {
        e.evolve_steps(cfg.output_stride, &p.stepper).map_err(runtime)?;
        done += cfg.output_stride;
        rows.push(observables_row(e.time(), &e.observables().map_err(runtime)?));
    }
    write_csv_owned_header(&p.out.join("observables.csv"), &observables_header(), rows)?;

    let mut replica_rows = Vec::with_capacity(e.len());
    for (i, r) in e.replicas().iter().enumerate() {
        replica_rows.push(vec![
            i.to_string(),
            fmt(e.time()),
            fmt(r.u.x),
            fmt(r.u.k),
            fmt(r.y),
            u8::from(r.flags.node_proximity).to_string(),
            u8::from(r.flags.boundary).to_string(),
        ]);
    }
    output::write_csv(
        &p.out.join("replicas.csv"),
        &["replica", "time", "x_cl", "k_cl", "y", "flag_node", "flag_boundary"],
        replica_rows,
    )
    .map_err(CliError::Runtime)?;

    let k = cfg.dump_wavefunctions.min(e.len());
    let xs = p.grid.points();
    let mut wf_rows = Vec::with_capacity(k * p.grid.len());
    for (i, r) in e.replicas().iter().take(k).enumerate() {
        for (j, a) in r.psi.amplitudes().iter().enumerate() {
            wf_rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt(xs[j]),
                fmt(a.re),
                fmt(a.im),
            ]);
        }
    }
    output::write_csv(
        &p.out.join("wavefunctions.csv"),
        &["replica", "grid_index", "x", "re", "im"],
        wf_rows,
    )
    .map_err(CliError::Runtime)?;

    let max_norm_error = e
        .replicas()
        .iter()
        .map(|r| (r.psi.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    // The propagator is unitary up to rounding at any coupling strength,
    // so norm drift beyond rounding accumulation means a broken run.
    let norm_bound = 1e-8 * (cfg.steps as f64 / 1e4).max(1.0);
    let controls = vec![ControlResult::upper(
        "unitarity_max_norm_error",
        max_norm_error,
        norm_bound,
    )];
    let metrics = EvolveMetrics {
        final_time: e.time(),
        max_norm_error,
        final_observables: e.observables().map_err(runtime)?,
    };
    p.finish("evolve", metrics, controls, e.flagged_fraction())
}

// ---------------------------------------------------------------------------
// energy-audit

#[derive(Serialize)]
struct EnergyMetrics {
    drift_qexp: f64,
    drift_point: f64,
    baseline_drift_qexp: f64,
    baseline_drift_point: f64,
    drift_ratio_qexp: f64,
    drift_ratio_point: f64,
}

/// Integrator-quality bound for the decoupled baseline drifts. Loose
/// enough for any sane step size, tight enough that a coupled-run excess
/// over it is unambiguous.
const BASELINE_DRIFT_BOUND: f64 = 1e-6;

pub fn energy_audit(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    let audit = diagnostics::energy_audit(
        &p.mixture,
        cfg.replicas,
        cfg.seed,
        &p.model,
        cfg.dt,
        cfg.steps,
        cfg.output_stride,
        cfg.eps_node,
        &p.stepper,
    )
    .map_err(runtime)?;

    let header = [
        "time",
        "e_qexp",
        "e_point",
        "kinetic_q",
        "v_q",
        "v_int_exp",
        "v_int_point",
        "kinetic_cl",
        "v_c",
    ];
    let rows: Vec<Vec<String>> = audit
        .times
        .iter()
        .zip(&audit.components)
        .map(|(&t, c)| {
            cells(&[
                t,
                c.e_qexp,
                c.e_point,
                c.kinetic,
                c.v_q,
                c.v_int_exp,
                c.v_int_point,
                c.cl_kinetic,
                c.v_c,
            ])
        })
        .collect();
    output::write_csv(&p.out.join("energy.csv"), &header, rows).map_err(CliError::Runtime)?;

    let floor = f64::MIN_POSITIVE;
    let metrics = EnergyMetrics {
        drift_qexp: audit.drift_qexp,
        drift_point: audit.drift_point,
        baseline_drift_qexp: audit.baseline_drift_qexp,
        baseline_drift_point: audit.baseline_drift_point,
        drift_ratio_qexp: audit.drift_qexp / audit.baseline_drift_qexp.max(floor),
        drift_ratio_point: audit.drift_point / audit.baseline_drift_point.max(floor),
    };
    let controls = vec![
        ControlResult::upper(
            "baseline_drift_qexp",
            audit.baseline_drift_qexp,
            BASELINE_DRIFT_BOUND,
        ),
        ControlResult::upper(
            "baseline_drift_point",
            audit.baseline_drift_point,
            BASELINE_DRIFT_BOUND,
        ),
    ];
    p.finish("energy-audit", metrics, controls, audit.flagged_fraction)
}

// ---------------------------------------------------------------------------
// equivariance

#[derive(Serialize)]
struct EquivarianceMetrics {
    ks_distance: f64,
    threshold: f64,
    threshold_with_slack: f64,
    exceeds: bool,
    n: usize,
    control_ks_distance: f64,
    control_threshold_with_slack: f64,
    control_n: usize,
}

/// Additive slack on the KS threshold absorbing the bias from comparing
/// against an estimated (rather than known) reference density.
const KS_SLACK: f64 = 0.01;

struct EquivArm {
    ys: Vec<f64>,
    density: Vec<f64>,
    flags: Vec<(bool, bool)>,
    flagged_fraction: f64,
}

fn run_equiv_arm(
    p: &Prepared,
    model: &Model,
    n: usize,
) -> Result<EquivArm, CliError> {
    let cfg = &p.cfg;
    // With the coupling off and a single component, every replica shares
    // one carrier wavefunction, so the quantum work collapses to a single
    // propagation that the core evolves bit-identically to the
    // per-replica path.
    if model.lambda == 0.0 && cfg.components.len() == 1 {
        let e0 = Ensemble::sample_initial(&p.mixture, n, cfg.seed, model, cfg.dt, cfg.eps_node)
            .map_err(runtime)?;
        let ys0 = e0.ys();
        drop(e0);
        let run = diagnostics::evolve_shared_carrier(
            &p.mixture.components()[0].psi,
            &ys0,
            model,
            cfg.dt,
            cfg.steps,
            cfg.eps_node,
        )
        .map_err(runtime)?;
        let flagged = run.flags.iter().filter(|f| f.any()).count() as f64 / n as f64;
        Ok(EquivArm {
            density: run.psi.prob_density(),
            flags: run
                .flags
                .iter()
                .map(|f| (f.node_proximity, f.boundary))
                .collect(),
            ys: run.ys,
            flagged_fraction: flagged,
        })
    } else {
        let mut e = Ensemble::sample_initial(&p.mixture, n, cfg.seed, model, cfg.dt, cfg.eps_node)
            .map_err(runtime)?;
        e.evolve_steps(cfg.steps, &p.stepper).map_err(runtime)?;
        Ok(EquivArm {
            ys: e.ys(),
            density: e.mean_density(),
            flags: e
                .replicas()
                .iter()
                .map(|r| (r.flags.node_proximity, r.flags.boundary))
                .collect(),
            flagged_fraction: e.flagged_fraction(),
        })
    }
}

pub fn equivariance(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    if cfg.replicas < MIN_KS_ENSEMBLE {
        return Err(CliError::Config(cfg.attributed(
            "replicas",
            &format!("at least {MIN_KS_ENSEMBLE} replicas needed for distributional comparisons"),
        )));
    }

    let arm = run_equiv_arm(&p, &p.model, cfg.replicas)?;
    let report = diagnostics::equivariance_from_parts(&arm.ys, &arm.density, &p.grid)
        .map_err(runtime)?;

    // Decoupled control: the identical pipeline with the coupling off
    // must stay within the threshold, pinning any excess on the coupling
    // rather than on sampling, trajectory integration, or the KS metric.
    let (control, control_n) = if cfg.lambda == 0.0 {
        (report, cfg.replicas)
    } else {
        let n_c = cfg.control_replicas.max(MIN_KS_ENSEMBLE);
        let carm = run_equiv_arm(&p, &p.model.decoupled(), n_c)?;
        (
            diagnostics::equivariance_from_parts(&carm.ys, &carm.density, &p.grid)
                .map_err(runtime)?,
            n_c,
        )
    };

    let ys_rows: Vec<Vec<String>> = arm
        .ys
        .iter()
        .zip(&arm.flags)
        .enumerate()
        .map(|(i, (&y, &(node, boundary)))| {
            vec![
                i.to_string(),
                fmt(y),
                u8::from(node).to_string(),
                u8::from(boundary).to_string(),
            ]
        })
        .collect();
    output::write_csv(
        &p.out.join("ys.csv"),
        &["replica", "y", "flag_node", "flag_boundary"],
        ys_rows,
    )
    .map_err(CliError::Runtime)?;

    let density_rows: Vec<Vec<String>> = p
        .grid
        .points()
        .iter()
        .zip(&arm.density)
        .map(|(&x, &d)| cells(&[x, d]))
        .collect();
    output::write_csv(&p.out.join("density.csv"), &["x", "mean_density"], density_rows)
        .map_err(CliError::Runtime)?;

    let metrics = EquivarianceMetrics {
        ks_distance: report.ks_distance,
        threshold: report.threshold,
        threshold_with_slack: report.threshold + KS_SLACK,
        exceeds: report.ks_distance > report.threshold + KS_SLACK,
        n: report.n,
        control_ks_distance: control.ks_distance,
        control_threshold_with_slack: control.threshold + KS_SLACK,
        control_n,
    };
    let controls = vec![ControlResult::upper(
        "decoupled_ks_distance",
        control.ks_distance,
        control.threshold + KS_SLACK,
    )];
    p.finish("equivariance", metrics, controls, arm.flagged_fraction)
}

// ---------------------------------------------------------------------------
// composability

/// One composability run: straight to t2 in one shot; a chained arm
/// stopping at t1 and continuing untouched (must be bit-identical to the
/// one-shot arm; only checked when requested); a two-stage arm whose
/// guided positions are redrawn from each replica's instantaneous
/// |psi|^2 at t1 before continuing.
struct ThreeArms {
    one_shot: Ensemble,
    two_stage: Ensemble,
    chained_identical: Option<bool>,
}

fn run_three_arms(
    p: &Prepared,
    mixture: &InitialMixture,
    model: &Model,
    n: usize,
    t1: u64,
    t2: u64,
    check_chain: bool,
) -> Result<ThreeArms, CliError> {
    let cfg = &p.cfg;
    let sample = || {
        Ensemble::sample_initial(mixture, n, cfg.seed, model, cfg.dt, cfg.eps_node).map_err(runtime)
    };
    let mut one_shot = sample()?;
    one_shot.evolve_steps(t2, &p.stepper).map_err(runtime)?;

    let chained_identical = if check_chain {
        let mut chained = sample()?;
        chained.evolve_steps(t1, &p.stepper).map_err(runtime)?;
        chained.evolve_steps(t2 - t1, &p.stepper).map_err(runtime)?;
        Some(ensembles_bit_identical(&one_shot, &chained))
    } else {
        None
    };

    let mut two_stage = sample()?;
    two_stage.evolve_steps(t1, &p.stepper).map_err(runtime)?;
    two_stage
        .resample_bohmian(cfg.resample_seed)
        .map_err(runtime)?;
    two_stage.evolve_steps(t2 - t1, &p.stepper).map_err(runtime)?;

    Ok(ThreeArms {
        one_shot,
        two_stage,
        chained_identical,
    })
}

/// The seven ensemble observables plus the mean guided position, which
/// is the quantity the mid-run redraw acts on directly.
fn arm_comparison(a: &Ensemble, b: &Ensemble) -> Result<ArmComparison, CliError> {
    let oa = a.observables().map_err(runtime)?;
    let ob = b.observables().map_err(runtime)?;
    let ya = MeanErr::from_values(&a.ys());
    let yb = MeanErr::from_values(&b.ys());
    let mut names: Vec<&'static str> = EnsembleObservables::NAMES.to_vec();
    names.push("y");
    let mut first: Vec<MeanErr> = oa.as_array().to_vec();
    first.push(ya);
    let mut second: Vec<MeanErr> = ob.as_array().to_vec();
    second.push(yb);
    let z: Vec<f64> = first
        .iter()
        .zip(&second)
        .map(|(&x, &y)| stats::z_score(x, y))
        .collect();
    let max_abs_z = stats::max_abs_z(&z);
    Ok(ArmComparison {
        names,
        first,
        second,
        z,
        max_abs_z,
    })
}

struct ArmComparison {
    names: Vec<&'static str>,
    first: Vec<MeanErr>,
    second: Vec<MeanErr>,
    z: Vec<f64>,
    max_abs_z: f64,
}

#[derive(Serialize)]
struct ComposabilityMetrics {
    steps_intermediate: u64,
    steps_final: u64,
    observable_names: Vec<&'static str>,
    z_scores: Vec<f64>,
    max_abs_z: f64,
    flagged_fraction_one_shot: f64,
    flagged_fraction_two_stage: f64,
    control_max_abs_z: f64,
}

pub fn composability(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    let t1 = cfg.require_intermediate()?;
    let t2 = cfg.steps;

    let arms = run_three_arms(&p, &p.mixture, &p.model, cfg.replicas, t1, t2, true)?;
    let cmp = arm_comparison(&arms.one_shot, &arms.two_stage)?;

    // Decoupled control: with the coupling off the redraw replaces
    // |psi|^2 samples by fresh |psi|^2 samples, so every comparison must
    // sit inside sampling noise.
    let control_max_abs_z = if cfg.lambda == 0.0 {
        cmp.max_abs_z
    } else {
        let carms = run_three_arms(
            &p,
            &p.mixture,
            &p.model.decoupled(),
            cfg.control_replicas,
            t1,
            t2,
            false,
        )?;
        arm_comparison(&carms.one_shot, &carms.two_stage)?.max_abs_z
    };

    let rows: Vec<Vec<String>> = cmp
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            vec![
                (*name).to_owned(),
                fmt(cmp.first[i].mean),
                fmt(cmp.first[i].stderr),
                fmt(cmp.second[i].mean),
                fmt(cmp.second[i].stderr),
                fmt(cmp.z[i]),
            ]
        })
        .collect();
    output::write_csv(
        &p.out.join("z_scores.csv"),
        &[
            "observable",
            "one_shot_mean",
            "one_shot_stderr",
            "two_stage_mean",
            "two_stage_stderr",
            "z",
        ],
        rows,
    )
    .map_err(CliError::Runtime)?;

    let flagged = arms
        .one_shot
        .flagged_fraction()
        .max(arms.two_stage.flagged_fraction());
    let metrics = ComposabilityMetrics {
        steps_intermediate: t1,
        steps_final: t2,
        observable_names: cmp.names.clone(),
        z_scores: cmp.z.clone(),
        max_abs_z: cmp.max_abs_z,
        flagged_fraction_one_shot: arms.one_shot.flagged_fraction(),
        flagged_fraction_two_stage: arms.two_stage.flagged_fraction(),
        control_max_abs_z,
    };
    let controls = vec![
        ControlResult::flag(
            "chained_no_resample_bit_identical",
            arms.chained_identical.unwrap_or(false),
        ),
        ControlResult::upper("decoupled_max_abs_z", control_max_abs_z, 3.0),
    ];
    p.finish("composability", metrics, controls, flagged)
}

// ---------------------------------------------------------------------------
// rho-test

#[derive(Serialize)]
struct RhoMetrics {
    initial_rho_distance: f64,
    final_rho_distance: f64,
    sampling_tolerance: f64,
    distance_growth: f64,
    observable_names: Vec<&'static str>,
    z_scores: Vec<f64>,
    max_abs_z: f64,
    purity_initial: f64,
    purity_final_first: f64,
    purity_final_second: f64,
    control_final_rho_distance: f64,
    control_sampling_tolerance: f64,
}

pub fn rho_test(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    cfg.require_alt_mixture()?;
    let mix2 = cfg.build_alt_mixture(&p.grid, &p.model)?;

    let run = |model: &Model, n: usize| {
        diagnostics::rho_equivalence_test(
            &p.mixture,
            &mix2,
            n,
            cfg.seed,
            cfg.seed_alt,
            model,
            cfg.dt,
            cfg.steps,
            cfg.eps_node,
            &p.stepper,
        )
    };

    let rep = match run(&p.model, cfg.replicas) {
        Ok(r) => r,
        // The two preparations failing to realize the same initial state
        // is a configuration defect, not a finding.
        Err(CoreError::BadDensityMatrix(msg)) => {
            return Err(CliError::Config(ConfigError {
                path: cfg.path.clone(),
                line: None,
                key: Some("component_alt".into()),
                message: msg.to_owned(),
            }))
        }
        Err(e) => return Err(runtime(e)),
    };

    // Decoupled control: with the coupling off both preparations evolve
    // under the same unitary, so their estimates must stay within
    // sampling distance of each other.
    let (control_final, control_tol) = if cfg.lambda == 0.0 {
        (rep.final_rho_distance, rep.sampling_tolerance)
    } else {
        match run(&p.model.decoupled(), cfg.control_replicas) {
            Ok(c) => (c.final_rho_distance, c.sampling_tolerance),
            Err(CoreError::BadDensityMatrix(msg)) => {
                return Err(CliError::Config(ConfigError {
                    path: cfg.path.clone(),
                    line: None,
                    key: Some("component_alt".into()),
                    message: format!("decoupled control arm: {msg}"),
                }))
            }
            Err(e) => return Err(runtime(e)),
        }
    };

    let n_grid = p.grid.len();
    let diag = |est: &qcbohm_core::density::DensityMatrixEstimate, j: usize| -> f64 {
        est.matrix()[j * n_grid + j].re
    };
    let rho_rows: Vec<Vec<String>> = p
        .grid
        .points()
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            cells(&[
                x,
                diag(&rep.initial_rho, j),
                diag(&rep.final_rho_first, j),
                diag(&rep.final_rho_second, j),
            ])
        })
        .collect();
    output::write_csv(
        &p.out.join("rho_diag.csv"),
        &["x", "initial", "final_first", "final_second"],
        rho_rows,
    )
    .map_err(CliError::Runtime)?;

    let names: Vec<&'static str> = EnsembleObservables::NAMES.to_vec();
    let z_rows: Vec<Vec<String>> = names
        .iter()
        .zip(&rep.final_observable_z_scores)
        .map(|(name, &z)| vec![(*name).to_owned(), fmt(z)])
        .collect();
    output::write_csv(&p.out.join("z_scores.csv"), &["observable", "z"], z_rows)
        .map_err(CliError::Runtime)?;

    let flagged = rep.flagged_fraction_first.max(rep.flagged_fraction_second);
    let metrics = RhoMetrics {
        initial_rho_distance: rep.initial_rho_distance,
        final_rho_distance: rep.final_rho_distance,
        sampling_tolerance: rep.sampling_tolerance,
        distance_growth: rep.final_rho_distance / rep.sampling_tolerance,
        observable_names: names,
        z_scores: rep.final_observable_z_scores.to_vec(),
        max_abs_z: rep.max_abs_z,
        purity_initial: rep.initial_rho.purity(),
        purity_final_first: rep.final_rho_first.purity(),
        purity_final_second: rep.final_rho_second.purity(),
        control_final_rho_distance: control_final,
        control_sampling_tolerance: control_tol,
    };
    let controls = vec![ControlResult::upper(
        "decoupled_final_rho_distance",
        control_final,
        control_tol,
    )];
    p.finish("rho-test", metrics, controls, flagged)
}

// ---------------------------------------------------------------------------
// exact-compare

#[derive(Serialize)]
struct ExactCompareMetrics {
    agreement_horizon: Option<f64>,
    tolerance: f64,
    final_time: f64,
    max_rel_big_x_error: f64,
    final_abs_x_error: f64,
    final_abs_big_x_error: f64,
    control_agreement_horizon: Option<f64>,
}

fn point_initials(cfg: &RunConfig) -> Result<(f64, f64), CliError> {
    if cfg.components.len() != 1 {
        return Err(CliError::Config(cfg.attributed(
            "component",
            "exact-compare needs exactly one mixture component",
        )));
    }
    match cfg.components[0].classical {
        ClassicalSpec::Point { x, k } => Ok((x, k)),
        ClassicalSpec::Gauss { .. } => Err(CliError::Config(cfg.attributed(
            "component",
            "exact-compare needs a point classical initial condition",
        ))),
    }
}

pub fn exact_compare(o: &CommonOpts) -> Result<i32, CliError> {
    let p = Prepared::new(o)?;
    let cfg = &p.cfg;
    let (x0, k0) = point_initials(cfg)?;
    let grid_c = cfg.build_grid_c()?;
    let psi = p.mixture.components()[0].psi.clone();

    let run = |model: &Model, n: usize| {
        exact2d::compare_hybrid_exact(
            &psi,
            grid_c.clone(),
            x0,
            k0,
            n,
            cfg.seed,
            model,
            cfg.dt,
            cfg.steps,
            cfg.output_stride,
            cfg.eps_node,
            cfg.width_scale,
            cfg.tolerance,
            &p.stepper,
        )
    };
    let cmp = run(&p.model, cfg.replicas).map_err(runtime)?;

    // Decoupled control: with the coupling off the hybrid scheme is exact
    // up to integrator error, so it must track the two-coordinate
    // reference for the whole run.
    let control_horizon = if cfg.lambda == 0.0 {
        cmp.agreement_horizon
    } else {
        run(&p.model.decoupled(), cfg.control_replicas)
            .map_err(runtime)?
            .agreement_horizon
    };

    let header = [
        "time",
        "hybrid_x_mean",
        "hybrid_x_stderr",
        "exact_x",
        "hybrid_X_mean",
        "hybrid_X_stderr",
        "exact_X",
        "hybrid_x2_mean",
        "hybrid_x2_stderr",
        "exact_x2",
    ];
    let rows: Vec<Vec<String>> = cmp
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            cells(&[
                t,
                cmp.hybrid_x[i].mean,
                cmp.hybrid_x[i].stderr,
                cmp.exact_x[i],
                cmp.hybrid_big_x[i].mean,
                cmp.hybrid_big_x[i].stderr,
                cmp.exact_big_x[i],
                cmp.hybrid_x2[i].mean,
                cmp.hybrid_x2[i].stderr,
                cmp.exact_x2[i],
            ])
        })
        .collect();
    output::write_csv(&p.out.join("comparison.csv"), &header, rows)
        .map_err(CliError::Runtime)?;

    let peak_big_x = cmp
        .exact_big_x
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let max_rel_big_x_error = cmp
        .hybrid_big_x
        .iter()
        .zip(&cmp.exact_big_x)
        .map(|(h, &e)| (h.mean - e).abs() / peak_big_x)
        .fold(0.0, f64::max);
    let last = cmp.times.len() - 1;
    let metrics = ExactCompareMetrics {
        agreement_horizon: cmp.agreement_horizon,
        tolerance: cmp.tolerance,
        final_time: cmp.times[last],
        max_rel_big_x_error,
        final_abs_x_error: (cmp.hybrid_x[last].mean - cmp.exact_x[last]).abs(),
        final_abs_big_x_error: (cmp.hybrid_big_x[last].mean - cmp.exact_big_x[last]).abs(),
        control_agreement_horizon: control_horizon,
    };
    let controls = vec![ControlResult::flag(
        "decoupled_tracks_exact",
        control_horizon.is_none(),
    )];
    p.finish("exact-compare", metrics, controls, cmp.flagged_fraction)
}

// ---------------------------------------------------------------------------
// selftest

/// Master seed for the pinned selftest battery.
const SELFTEST_SEED: u64 = 7;

struct SelftestCtx {
    stepper: RayonStepper,
    grid: Arc<Grid>,
    model0: Model,
}

fn selftest_model(lambda: f64) -> Model {
    Model::new(
        1.0,
        1.0,
        QuantumPotential::Harmonic { omega: 1.0 },
        2.0,
        0.2,
        lambda,
    )
    .expect("selftest model parameters are valid")
}

fn coherent_packet(grid: &Arc<Grid>, model: &Model) -> Result<WaveFunction, CoreError> {
    // Ground-state width displaced to x0 = 1: a coherent state whose
    // position mean follows cos(omega t) exactly.
    let sigma = (model.hbar / (2.0 * model.m)).sqrt();
    WaveFunction::gaussian(grid.clone(), 1.0, sigma, 0.0)
}

fn single_mixture(psi: WaveFunction) -> Result<InitialMixture, CoreError> {
    InitialMixture::pure(ClassicalInit::Point { x: 1.0, k: 0.0 }, psi)
}

/// Run the pinned self-test battery: fast, deterministic checks that the
/// sampled initial conditions, the decoupled integrator, the trajectory
/// transport, the statistical metrics, and the parallel driver all
/// behave. Every check ends in a named pass/fail line.
pub fn selftest(out: &std::path::Path, threads: usize) -> Result<i32, CliError> {
    let stepper = RayonStepper::new(threads).map_err(CliError::Runtime)?;
    let grid = Arc::new(Grid::new(-12.8, 12.8, 256).map_err(runtime)?);
    let ctx = SelftestCtx {
        stepper,
        grid,
        model0: selftest_model(0.0),
    };
    let out = output::ensure_out_dir(out).map_err(CliError::Runtime)?;

    let mut checks: Vec<ControlResult> = Vec::new();
    let mut record = |c: ControlResult| {
        println!(
            "[{}] {}: value {:.3e} vs bound {:.3e} ... {}",
            if c.pass { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.bound,
            if c.pass { "pass" } else { "fail" }
        );
        checks.push(c);
    };

    selftest_sampling(&ctx, &mut record)?;
    selftest_decoupled_run(&ctx, &mut record)?;
    selftest_coherent(&ctx, &mut record)?;
    selftest_equivariance(&ctx, &mut record)?;
    selftest_composability(&ctx, &mut record)?;
    selftest_rho(&ctx, &mut record)?;
    selftest_exact(&ctx, &mut record)?;
    selftest_determinism(&ctx, &mut record)?;
    selftest_threads(&ctx, &mut record)?;

    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                fmt(c.value),
                fmt(c.bound),
                u8::from(c.pass).to_string(),
            ]
        })
        .collect();
    output::write_csv(&out.join("checks.csv"), &["check", "value", "bound", "pass"], rows)
        .map_err(CliError::Runtime)?;

    let all_pass = checks.iter().all(|c| c.pass);
    let exit_status = if all_pass { 0 } else { 4 };
    let summary = Summary {
        command: "selftest",
        scenario: "selftest",
        seeds: SeedEcho {
            master: SELFTEST_SEED,
            alt: SELFTEST_SEED + 1,
            resample: SELFTEST_SEED + 2,
        },
        config: None::<&RunConfig>,
        metrics: (),
        controls: checks,
        flagged_fraction: 0.0,
        contaminated: false,
        exit_status,
    };
    output::write_summary(&out, &summary).map_err(CliError::Runtime)?;
    Ok(exit_status)
}

type Record<'a> = &'a mut dyn FnMut(ControlResult);

fn selftest_sampling(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let psi = coherent_packet(&ctx.grid, &ctx.model0).map_err(runtime)?;
    let mixture = single_mixture(psi).map_err(runtime)?;
    let e = Ensemble::sample_initial(&mixture, 4000, SELFTEST_SEED, &ctx.model0, 1e-3, 1e-6)
        .map_err(runtime)?;
    let rep = diagnostics::equivariance_metric(&e).map_err(runtime)?;
    record(ControlResult::upper(
        "initial_sampling_ks",
        rep.ks_distance,
        rep.threshold + KS_SLACK,
    ));
    Ok(())
}

fn selftest_decoupled_run(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let psi = coherent_packet(&ctx.grid, &ctx.model0).map_err(runtime)?;
    let mixture = single_mixture(psi).map_err(runtime)?;
    let mut e = Ensemble::sample_initial(&mixture, 2, SELFTEST_SEED, &ctx.model0, 1e-3, 1e-6)
        .map_err(runtime)?;
    let plan = FftPlan::new(ctx.grid.len()).map_err(runtime)?;
    let mut buf: Vec<C64> = Vec::new();
    let mut eq = Vec::new();
    let mut ep = Vec::new();
    let em = e.energy_means(&plan, &mut buf).map_err(runtime)?;
    eq.push(em.e_qexp);
    ep.push(em.e_point);
    for _ in 0..10 {
        e.evolve_steps(1000, &ctx.stepper).map_err(runtime)?;
        let em = e.energy_means(&plan, &mut buf).map_err(runtime)?;
        eq.push(em.e_qexp);
        ep.push(em.e_point);
    }
    record(ControlResult::upper(
        "decoupled_energy_drift_qexp",
        stats::relative_drift(&eq),
        1e-6,
    ));
    record(ControlResult::upper(
        "decoupled_energy_drift_point",
        stats::relative_drift(&ep),
        1e-6,
    ));
    let norm_err = e
        .replicas()
        .iter()
        .map(|r| (r.psi.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    record(ControlResult::upper("norm_preservation", norm_err, 1e-8));
    Ok(())
}

fn selftest_coherent(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let psi = coherent_packet(&ctx.grid, &ctx.model0).map_err(runtime)?;
    let mixture = single_mixture(psi).map_err(runtime)?;
    let mut e = Ensemble::sample_initial(&mixture, 2, SELFTEST_SEED, &ctx.model0, 1e-3, 1e-6)
        .map_err(runtime)?;
    let mut max_err: f64 = 0.0;
    for _ in 0..10 {
        e.evolve_steps(628, &ctx.stepper).map_err(runtime)?;
        let obs = e.observables().map_err(runtime)?;
        max_err = max_err.max((obs.x_q.mean - e.time().cos()).abs());
    }
    record(ControlResult::upper(
        "coherent_oscillation_error",
        max_err,
        1e-4,
    ));
    Ok(())
}

fn selftest_equivariance(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let psi = coherent_packet(&ctx.grid, &ctx.model0).map_err(runtime)?;
    let mixture = single_mixture(psi.clone()).map_err(runtime)?;
    let e0 = Ensemble::sample_initial(&mixture, 4000, SELFTEST_SEED, &ctx.model0, 1e-3, 1e-6)
        .map_err(runtime)?;
    let ys0 = e0.ys();
    drop(e0);
    let run = diagnostics::evolve_shared_carrier(&psi, &ys0, &ctx.model0, 1e-3, 6280, 1e-6)
        .map_err(runtime)?;
    let rep = diagnostics::equivariance_from_parts(&run.ys, &run.psi.prob_density(), &ctx.grid)
        .map_err(runtime)?;
    record(ControlResult::upper(
        "decoupled_equivariance_ks",
        rep.ks_distance,
        rep.threshold + KS_SLACK,
    ));
    Ok(())
}

fn selftest_composability(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let grid = Arc::new(Grid::new(-12.8, 12.8, 128).map_err(runtime)?);
    let sigma = (0.5f64).sqrt();
    let a = WaveFunction::gaussian(grid.clone(), -1.0, sigma, 0.0).map_err(runtime)?;
    let b = WaveFunction::gaussian(grid.clone(), 1.0, sigma, 0.0).map_err(runtime)?;
    let mixture = InitialMixture::new(vec![
        MixtureComponent {
            weight: 0.5,
            classical: ClassicalInit::Point { x: 0.0, k: 0.0 },
            psi: a,
        },
        MixtureComponent {
            weight: 0.5,
            classical: ClassicalInit::Point { x: 0.0, k: 0.0 },
            psi: b,
        },
    ])
    .map_err(runtime)?;
    let model = &ctx.model0;
    let dt = 2e-3;
    let sample =
        || Ensemble::sample_initial(&mixture, 400, SELFTEST_SEED, model, dt, 1e-6).map_err(runtime);

    let mut one = sample()?;
    one.evolve_steps(400, &ctx.stepper).map_err(runtime)?;
    let mut chained = sample()?;
    chained.evolve_steps(200, &ctx.stepper).map_err(runtime)?;
    chained.evolve_steps(200, &ctx.stepper).map_err(runtime)?;
    record(ControlResult::flag(
        "chained_no_resample_bit_identical",
        ensembles_bit_identical(&one, &chained),
    ));
    drop(chained);
    let mut two = sample()?;
    two.evolve_steps(200, &ctx.stepper).map_err(runtime)?;
    two.resample_bohmian(SELFTEST_SEED + 2).map_err(runtime)?;
    two.evolve_steps(200, &ctx.stepper).map_err(runtime)?;

    let oa = one.observables().map_err(runtime)?;
    let ob = two.observables().map_err(runtime)?;
    let mut zs: Vec<f64> = oa
        .as_array()
        .iter()
        .zip(ob.as_array().iter())
        .map(|(&x, &y)| stats::z_score(x, y))
        .collect();
    zs.push(stats::z_score(
        MeanErr::from_values(&one.ys()),
        MeanErr::from_values(&two.ys()),
    ));
    record(ControlResult::upper(
        "decoupled_composability_max_z",
        stats::max_abs_z(&zs),
        3.0,
    ));
    Ok(())
}

fn selftest_rho(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let grid = Arc::new(Grid::new(-12.8, 12.8, 128).map_err(runtime)?);
    let model = &ctx.model0;
    let phi0 = WaveFunction::eigenstate(grid.clone(), model, 0).map_err(runtime)?;
    let phi1 = WaveFunction::eigenstate(grid.clone(), model, 1).map_err(runtime)?;
    let half = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let plus =
        WaveFunction::superposition(&[(half, &phi0), (half, &phi1)]).map_err(runtime)?;
    let minus =
        WaveFunction::superposition(&[(half, &phi0), (-half, &phi1)]).map_err(runtime)?;
    let cl = ClassicalInit::Point { x: 1.0, k: 0.0 };
    let mk = |x: WaveFunction, y: WaveFunction| {
        InitialMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                classical: cl,
                psi: x,
            },
            MixtureComponent {
                weight: 0.5,
                classical: cl,
                psi: y,
            },
        ])
    };
    let mix1 = mk(phi0, phi1).map_err(runtime)?;
    let mix2 = mk(plus, minus).map_err(runtime)?;
    let rep = diagnostics::rho_equivalence_test(
        &mix1,
        &mix2,
        800,
        SELFTEST_SEED,
        SELFTEST_SEED + 1,
        model,
        2e-3,
        50,
        1e-6,
        &ctx.stepper,
    )
    .map_err(runtime)?;
    record(ControlResult::upper(
        "decoupled_rho_distance",
        rep.final_rho_distance,
        rep.sampling_tolerance,
    ));
    Ok(())
}

fn selftest_exact(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let grid_q = Arc::new(Grid::new(-12.8, 12.8, 128).map_err(runtime)?);
    let grid_c = Arc::new(Grid::new(-6.4, 6.4, 128).map_err(runtime)?);
    let model = selftest_model(0.0);
    let sigma = (model.hbar / (2.0 * model.m)).sqrt();
    let psi = WaveFunction::gaussian(grid_q, 1.0, sigma, 0.0).map_err(runtime)?;
    let cmp = exact2d::compare_hybrid_exact(
        &psi,
        grid_c,
        0.5,
        0.3,
        200,
        SELFTEST_SEED,
        &model,
        5e-3,
        200,
        50,
        1e-6,
        1.0,
        0.05,
        &ctx.stepper,
    )
    .map_err(runtime)?;
    record(ControlResult::flag(
        "decoupled_tracks_exact",
        cmp.agreement_horizon.is_none(),
    ));
    Ok(())
}

fn selftest_determinism(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let model = selftest_model(0.1);
    let psi = coherent_packet(&ctx.grid, &model).map_err(runtime)?;
    let mixture = single_mixture(psi).map_err(runtime)?;
    let e = Ensemble::sample_initial(&mixture, 2, SELFTEST_SEED, &model, 1e-3, 1e-6)
        .map_err(runtime)?;
    let job = ReplicaJob {
        model: &model,
        dt: 1e-3,
        eps_node: 1e-6,
        steps: 100,
    };
    let same = diagnostics::determinism_check(&e.replicas()[0], &job).map_err(runtime)?;
    record(ControlResult::flag("replica_determinism", same));
    Ok(())
}

fn selftest_threads(ctx: &SelftestCtx, record: Record) -> Result<(), CliError> {
    let model = selftest_model(0.1);
    let psi = coherent_packet(&ctx.grid, &model).map_err(runtime)?;
    let mixture = single_mixture(psi).map_err(runtime)?;
    let run = |threads: usize| -> Result<Ensemble, CliError> {
        let stepper = RayonStepper::new(threads).map_err(CliError::Runtime)?;
        let mut e = Ensemble::sample_initial(&mixture, 64, SELFTEST_SEED, &model, 1e-3, 1e-6)
            .map_err(runtime)?;
        e.evolve_steps(100, &stepper).map_err(runtime)?;
        Ok(e)
    };
    let a = run(1)?;
    let b = run(4)?;
    record(ControlResult::flag(
        "thread_count_invariance",
        ensembles_bit_identical(&a, &b),
    ));
    Ok(())
}
