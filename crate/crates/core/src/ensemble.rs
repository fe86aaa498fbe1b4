//! Replica ensembles implementing the hybrid prescription: sample, evolve,
//! re-sample, observe.
//!
//! One replica carries (classical state, wavefunction, Bohmian position).
//! A step interleaves the three sub-evolutions symmetrically:
//!
//!   classical dt/2 | quantum dt/2 | Bohmian dt (Heun, fields at t and t+dt)
//!   | quantum dt/2 | classical dt/2
//!
//! The classical position is frozen across the two quantum half-steps, so
//! both share one coupling phase table; the t+dt guidance field comes from
//! provisionally completing the second quantum half-step, whose input does
//! not depend on the Bohmian update. Replicas never read each other's
//! state, which makes parallel evolution bitwise equal to sequential.

use alloc::{sync::Arc, vec::Vec};

use crate::bohmian::{advance_bohmian, VelocityField};
use crate::classical::{advance_classical, ClassicalState};
use crate::error::{CoreError, Result};
use crate::fft::FftPlan;
use crate::grid::Grid;
use crate::model::Model;
use crate::propagator::Propagator;
use crate::sampling::{normal_pair, replica_rng, uniform_f64, GridCdf};
use crate::stats::MeanErr;
use crate::wavefunction::WaveFunction;
use crate::C64;

#[allow(unused_imports)]
use num_traits::Float;

/// Relative slack for deciding that a target time is a whole number of
/// steps away. Plain f64 division of an exact multiple misses by a few ulp,
/// so exact comparison is unusable; anything within this slack rounds to
/// the nearest integer, anything beyond is rejected as incommensurate.
pub const TIME_COMMENSURATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReplicaFlags {
    pub node_proximity: bool,
    pub boundary: bool,
}

impl ReplicaFlags {
    pub fn any(&self) -> bool {
        self.node_proximity || self.boundary
    }
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub u: ClassicalState,
    pub psi: WaveFunction,
    pub y: f64,
    pub flags: ReplicaFlags,
}

/// Classical part of one mixture component.
#[derive(Debug, Clone, Copy)]
pub enum ClassicalInit {
    Point {
        x: f64,
        k: f64,
    },
    Gaussian {
        mean_x: f64,
        std_x: f64,
        mean_k: f64,
        std_k: f64,
    },
}

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub classical: ClassicalInit,
    pub psi: WaveFunction,
}

/// Finite mixture over (classical distribution, wavefunction) pairs; the
/// sampled stand-in for a distribution on the combined manifold.
#[derive(Debug, Clone)]
pub struct InitialMixture {
    components: Vec<MixtureComponent>,
}

impl InitialMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or(CoreError::BadMixture("no components"))?;
        let grid = first.psi.grid().clone();
        let mut total = 0.0;
        for c in &components {
            if !(c.weight > 0.0 && c.weight <= 1.0 && c.weight.is_finite()) {
                return Err(CoreError::BadMixture("weights must lie in (0, 1]"));
            }
            if !c.psi.grid().same_as(&grid) {
                return Err(CoreError::GridMismatch("mixture component grids"));
            }
            c.psi.ensure_normalized(1e-8)?;
            if let ClassicalInit::Gaussian { std_x, std_k, .. } = c.classical {
                if !(std_x >= 0.0 && std_k >= 0.0) {
                    return Err(CoreError::BadMixture("negative classical width"));
                }
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::BadMixture("weights must sum to 1"));
        }
        Ok(Self { components })
    }

    /// Single component with probability one.
    pub fn pure(classical: ClassicalInit, psi: WaveFunction) -> Result<Self> {
        Self::new(alloc::vec![MixtureComponent {
            weight: 1.0,
            classical,
            psi,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.components[0].psi.grid()
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    replicas: Vec<Replica>,
    model: Model,
    dt: f64,
    t_origin: f64,
    steps_done: u64,
    seed: u64,
    eps_node: f64,
}

/// Everything `evolve_replica` needs besides the replica itself; one value
/// shared read-only across however many workers the stepper uses.
#[derive(Debug, Clone, Copy)]
pub struct ReplicaJob<'a> {
    pub model: &'a Model,
    pub dt: f64,
    pub eps_node: f64,
    pub steps: u64,
}

/// Strategy for mapping `evolve_replica` over an ensemble. Implementations
/// must apply the closure to every replica exactly once; because replicas
/// are independent, any schedule yields bit-identical results.
pub trait EnsembleStepper {
    fn run(&self, replicas: &mut [Replica], job: &ReplicaJob) -> Result<()>;
}

/// In-order, single-threaded reference stepper.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialStepper;

impl EnsembleStepper for SequentialStepper {
    fn run(&self, replicas: &mut [Replica], job: &ReplicaJob) -> Result<()> {
        for r in replicas.iter_mut() {
            evolve_replica(r, job)?;
        }
        Ok(())
    }
}

/// Reusable per-replica stepping state: the half-step propagator plus
/// scratch buffers, so the inner loop allocates only velocity fields.
pub struct StepContext {
    prop: Propagator,
    coupling: Vec<C64>,
    deriv: Vec<C64>,
    psi_next: Option<WaveFunction>,
    prev_field: Option<VelocityField>,
}

impl StepContext {
    pub fn new(grid: Arc<Grid>, model: &Model, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CoreError::BadParameter {
                name: "dt",
                value: dt,
                requirement: "finite and > 0",
            });
        }
        let prop = Propagator::new(grid, model, 0.5 * dt)?;
        Ok(Self {
            prop,
            coupling: Vec::new(),
            deriv: Vec::new(),
            psi_next: None,
            prev_field: None,
        })
    }

    pub fn plan(&self) -> &FftPlan {
        self.prop.plan()
    }
}

/// One symmetric hybrid step of a single replica.
pub fn step_replica(r: &mut Replica, ctx: &mut StepContext, job: &ReplicaJob) -> Result<()> {
    let model = job.model;
    let half = 0.5 * job.dt;
    r.u = advance_classical(r.u, r.y, half, model)?;
    let field_t = match ctx.prev_field.take() {
        Some(f) => f,
        None => VelocityField::build(
            &r.psi,
            model.m,
            model.hbar,
            job.eps_node,
            ctx.prop.plan(),
            &mut ctx.deriv,
        )?,
    };
    ctx.prop.fill_coupling(r.u.x, &mut ctx.coupling);
    ctx.prop.step(r.psi.amplitudes_mut(), &ctx.coupling)?;
    let psi_next = match ctx.psi_next.as_mut() {
        Some(p) => {
            p.clone_from(&r.psi);
            p
        }
        None => ctx.psi_next.get_or_insert_with(|| r.psi.clone()),
    };
    ctx.prop.step(psi_next.amplitudes_mut(), &ctx.coupling)?;
    let field_dt = VelocityField::build(
        psi_next,
        model.m,
        model.hbar,
        job.eps_node,
        ctx.prop.plan(),
        &mut ctx.deriv,
    )?;
    let moved = advance_bohmian(r.y, &field_t, &field_dt, job.dt)?;
    r.y = moved.y;
    r.flags.node_proximity |= moved.near_node;
    r.flags.boundary |= moved.escaped;
    let committed = ctx.psi_next.as_mut().expect("psi_next populated above");
    core::mem::swap(&mut r.psi, committed);
    r.u = advance_classical(r.u, r.y, half, model)?;
    if !r.psi.boundary_clear() {
        r.flags.boundary = true;
    }
    ctx.prev_field = Some(field_dt);
    Ok(())
}

/// Advance one replica by `job.steps` steps with its own fresh context.
pub fn evolve_replica(r: &mut Replica, job: &ReplicaJob) -> Result<()> {
    let mut ctx = StepContext::new(r.psi.grid().clone(), job.model, job.dt)?;
    for _ in 0..job.steps {
        step_replica(r, &mut ctx, job)?;
    }
    Ok(())
}

impl Ensemble {
    /// Draw N replicas from the mixture. Per replica, in fixed order: one
    /// uniform picks the component, two normals fill a Gaussian classical
    /// state (a point consumes none), one uniform draws y by inverse CDF of
    /// that component's |psi|^2.
    pub fn sample_initial(
        mixture: &InitialMixture,
        n: usize,
        seed: u64,
        model: &Model,
        dt: f64,
        eps_node: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(CoreError::BadParameter {
                name: "replica_count",
                value: n as f64,
                requirement: "at least 2",
            });
        }
        // Validate the step size up front so a bad dt fails at construction,
        // not thousands of replicas into the first evolve.
        StepContext::new(mixture.grid().clone(), model, dt)?;
        let cdfs: Vec<GridCdf> = mixture
            .components()
            .iter()
            .map(|c| GridCdf::from_density(c.psi.grid().clone(), &c.psi.prob_density()))
            .collect::<Result<_>>()?;
        let mut replicas = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = replica_rng(seed, i as u64);
            let pick = uniform_f64(&mut rng);
            let mut acc = 0.0;
            let mut idx = mixture.components().len() - 1;
            for (c_idx, c) in mixture.components().iter().enumerate() {
                acc += c.weight;
                if pick < acc {
                    idx = c_idx;
                    break;
                }
            }
            let component = &mixture.components()[idx];
            let u = match component.classical {
                ClassicalInit::Point { x, k } => ClassicalState::new(x, k)?,
                ClassicalInit::Gaussian {
                    mean_x,
                    std_x,
                    mean_k,
                    std_k,
                } => {
                    let (z1, z2) = normal_pair(&mut rng);
                    ClassicalState::new(mean_x + std_x * z1, mean_k + std_k * z2)?
                }
            };
            let y = cdfs[idx].sample(&mut rng);
            replicas.push(Replica {
                u,
                psi: component.psi.clone(),
                y,
                flags: ReplicaFlags::default(),
            });
        }
        Ok(Self {
            replicas,
            model: *model,
            dt,
            t_origin: 0.0,
            steps_done: 0,
            seed,
            eps_node,
        })
    }

    /// Assemble an ensemble from explicit replicas (tests, custom drivers).
    pub fn from_replicas(
        replicas: Vec<Replica>,
        model: Model,
        dt: f64,
        time: f64,
        seed: u64,
        eps_node: f64,
    ) -> Result<Self> {
        if replicas.len() < 2 {
            return Err(CoreError::EmptyEnsemble);
        }
        let grid = replicas[0].psi.grid().clone();
        for r in &replicas {
            if !r.psi.grid().same_as(&grid) {
                return Err(CoreError::GridMismatch("replica grids"));
            }
        }
        Ok(Self {
            replicas,
            model,
            dt,
            t_origin: time,
            steps_done: 0,
            seed,
            eps_node,
        })
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn replicas_mut(&mut self) -> &mut [Replica] {
        &mut self.replicas
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eps_node(&self) -> f64 {
        self.eps_node
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.replicas[0].psi.grid()
    }

    /// Current time as origin + step count * dt; the integer step counter
    /// keeps chained evolution bit-identical to a single evolution.
    pub fn time(&self) -> f64 {
        self.t_origin + self.steps_done as f64 * self.dt
    }

    /// Number of steps to reach `t_target`, or an error if it is not a
    /// whole number of steps away (within `TIME_COMMENSURATE_TOL`).
    pub fn steps_to(&self, t_target: f64) -> Result<u64> {
        let ratio = (t_target - self.time()) / self.dt;
        let rounded = ratio.round();
        let err = CoreError::IncommensurateTime {
            target: t_target,
            from: self.time(),
            dt: self.dt,
        };
        if !(ratio.is_finite() && rounded >= 0.0) {
            return Err(err);
        }
        if (ratio - rounded).abs() > TIME_COMMENSURATE_TOL * ratio.abs().max(1.0) {
            return Err(err);
        }
        Ok(rounded as u64)
    }

    /// Advance every replica to `t_target` on the given stepper.
    pub fn evolve_to(&mut self, t_target: f64, stepper: &impl EnsembleStepper) -> Result<()> {
        let steps = self.steps_to(t_target)?;
        self.evolve_steps(steps, stepper)
    }

    pub fn evolve_steps(&mut self, steps: u64, stepper: &impl EnsembleStepper) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let job = ReplicaJob {
            model: &self.model,
            dt: self.dt,
            eps_node: self.eps_node,
            steps,
        };
        stepper.run(&mut self.replicas, &job)?;
        self.steps_done += steps;
        Ok(())
    }

    /// Redraw every Bohmian position from its replica's current |psi|^2.
    /// Classical state and wavefunction are untouched; node flags reset
    /// because they describe the discarded trajectory.
    pub fn resample_bohmian(&mut self, seed: u64) -> Result<()> {
        for (i, r) in self.replicas.iter_mut().enumerate() {
            let cdf = GridCdf::from_density(r.psi.grid().clone(), &r.psi.prob_density())?;
            let mut rng = replica_rng(seed, i as u64);
            r.y = cdf.sample(&mut rng);
            r.flags.node_proximity = false;
        }
        Ok(())
    }

    pub fn ys(&self) -> Vec<f64> {
        self.replicas.iter().map(|r| r.y).collect()
    }

    /// Ensemble-mean position density (1/N) sum |psi_i|^2 on the grid.
    pub fn mean_density(&self) -> Vec<f64> {
        let n = self.grid().len();
        let mut acc = alloc::vec![0.0f64; n];
        for r in &self.replicas {
            for (a, z) in acc.iter_mut().zip(r.psi.amplitudes()) {
                *a += z.norm_sqr();
            }
        }
        let inv = 1.0 / self.replicas.len() as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        acc
    }

    pub fn flagged_fraction(&self) -> f64 {
        let flagged = self.replicas.iter().filter(|r| r.flags.any()).count();
        flagged as f64 / self.replicas.len() as f64
    }

    /// Per-replica energies and moments reduced in replica order.
    pub fn observables(&self) -> Result<EnsembleObservables> {
        let plan = FftPlan::new(self.grid().len())?;
        let mut buf = Vec::new();
        let n = self.len();
        let mut cols = ObservableColumns::with_capacity(n);
        for r in &self.replicas {
            let e = r.psi.expectations(r.u.x, &self.model, &plan, &mut buf)?;
            let cl = r.u.energy(&self.model);
            cols.x_q.push(e.x);
            cols.x_q2.push(e.x2);
            cols.x_cl.push(r.u.x);
            cols.k_cl.push(r.u.k);
            cols.x_cl2.push(r.u.x * r.u.x);
            cols.e_qexp.push(e.energy_q() + e.v_int + cl);
            cols.e_point
                .push(e.energy_q() + self.model.v_int(r.y, r.u.x) + cl);
        }
        Ok(cols.summarize())
    }

    /// Ensemble-mean energy components for the audit time series.
    pub fn energy_means(&self, plan: &FftPlan, buf: &mut Vec<C64>) -> Result<EnergyMeans> {
        let inv = 1.0 / self.len() as f64;
        let mut m = EnergyMeans::default();
        for r in &self.replicas {
            let e = r.psi.expectations(r.u.x, &self.model, plan, buf)?;
            m.kinetic += e.kinetic * inv;
            m.v_q += e.v_q * inv;
            m.v_int_exp += e.v_int * inv;
            m.v_int_point += self.model.v_int(r.y, r.u.x) * inv;
            m.cl_kinetic += r.u.k * r.u.k / (2.0 * self.model.m_cl) * inv;
            m.v_c += self.model.v_classical(r.u.x) * inv;
        }
        m.e_qexp = m.kinetic + m.v_q + m.v_int_exp + m.cl_kinetic + m.v_c;
        m.e_point = m.kinetic + m.v_q + m.v_int_point + m.cl_kinetic + m.v_c;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleObservables {
    pub x_q: MeanErr,
    pub x_q2: MeanErr,
    pub x_cl: MeanErr,
    pub k_cl: MeanErr,
    pub x_cl2: MeanErr,
    pub e_qexp: MeanErr,
    pub e_point: MeanErr,
}

impl EnsembleObservables {
    pub const NAMES: [&'static str; 7] =
        ["x_q", "x_q2", "x_cl", "k_cl", "x_cl2", "e_qexp", "e_point"];

    pub fn as_array(&self) -> [MeanErr; 7] {
        [
            self.x_q, self.x_q2, self.x_cl, self.k_cl, self.x_cl2, self.e_qexp, self.e_point,
        ]
    }
}

struct ObservableColumns {
    x_q: Vec<f64>,
    x_q2: Vec<f64>,
    x_cl: Vec<f64>,
    k_cl: Vec<f64>,
    x_cl2: Vec<f64>,
    e_qexp: Vec<f64>,
    e_point: Vec<f64>,
}

impl ObservableColumns {
    fn with_capacity(n: usize) -> Self {
        Self {
            x_q: Vec::with_capacity(n),
            x_q2: Vec::with_capacity(n),
            x_cl: Vec::with_capacity(n),
            k_cl: Vec::with_capacity(n),
            x_cl2: Vec::with_capacity(n),
            e_qexp: Vec::with_capacity(n),
            e_point: Vec::with_capacity(n),
        }
    }

    fn summarize(&self) -> EnsembleObservables {
        EnsembleObservables {
            x_q: MeanErr::from_values(&self.x_q),
            x_q2: MeanErr::from_values(&self.x_q2),
            x_cl: MeanErr::from_values(&self.x_cl),
            k_cl: MeanErr::from_values(&self.k_cl),
            x_cl2: MeanErr::from_values(&self.x_cl2),
            e_qexp: MeanErr::from_values(&self.e_qexp),
            e_point: MeanErr::from_values(&self.e_point),
        }
    }
}

/// Bitwise equality of two replicas across classical state, Bohmian
/// position, wavefunction amplitudes, and flags.
pub fn replicas_bit_identical(a: &Replica, b: &Replica) -> bool {
    a.u.x.to_bits() == b.u.x.to_bits()
        && a.u.k.to_bits() == b.u.k.to_bits()
        && a.y.to_bits() == b.y.to_bits()
        && a.flags == b.flags
        && a.psi.amplitudes().len() == b.psi.amplitudes().len()
        && a.psi
            .amplitudes()
            .iter()
            .zip(b.psi.amplitudes())
            .all(|(za, zb)| za.re.to_bits() == zb.re.to_bits() && za.im.to_bits() == zb.im.to_bits())
}

/// Bitwise equality of whole ensembles, replica by replica.
pub fn ensembles_bit_identical(a: &Ensemble, b: &Ensemble) -> bool {
    a.len() == b.len()
        && a.time().to_bits() == b.time().to_bits()
        && a.replicas()
            .iter()
            .zip(b.replicas())
            .all(|(ra, rb)| replicas_bit_identical(ra, rb))
}

/// Ensemble-mean energy decomposition at one time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyMeans {
    pub kinetic: f64,
    pub v_q: f64,
    pub v_int_exp: f64,
    pub v_int_point: f64,
    pub cl_kinetic: f64,
    pub v_c: f64,
    pub e_qexp: f64,
    pub e_point: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuantumPotential;
    use crate::stats;
    use approx::assert_abs_diff_eq;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::new(-12.8, 12.8, 128).unwrap())
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
    fn mixture_validation() {
        let m = model(0.0);
        let psi = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        assert!(InitialMixture::new(alloc::vec![]).is_err());
        let bad_weight = MixtureComponent {
            weight: 0.6,
            classical: ClassicalInit::Point { x: 0.0, k: 0.0 },
            psi: psi.clone(),
        };
        assert!(InitialMixture::new(alloc::vec![bad_weight]).is_err());
        let ok = InitialMixture::pure(ClassicalInit::Point { x: 0.0, k: 0.0 }, psi);
        assert!(ok.is_ok());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let a = Ensemble::sample_initial(&mix, 64, 9, &m, DT, 1e-6).unwrap();
        let b = Ensemble::sample_initial(&mix, 64, 9, &m, DT, 1e-6).unwrap();
        let c = Ensemble::sample_initial(&mix, 64, 10, &m, DT, 1e-6).unwrap();
        for (ra, rb) in a.replicas().iter().zip(b.replicas()) {
            assert_eq!(ra.y.to_bits(), rb.y.to_bits());
            assert_eq!(ra.u.x.to_bits(), rb.u.x.to_bits());
        }
        assert!(a
            .replicas()
            .iter()
            .zip(c.replicas())
            .any(|(ra, rc)| ra.y != rc.y));
    }

    #[test]
    fn sampled_positions_follow_component_density() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let e = Ensemble::sample_initial(&mix, 4000, 3, &m, DT, 1e-6).unwrap();
        let mut ys = e.ys();
        // Ground state density is normal with sigma^2 = hbar/(2 m omega) = 1/2.
        let d = stats::ks_one_sample(&mut ys, |y| 0.5 * (1.0 + libm::erf(y)));
        assert!(d <= stats::ks_threshold_one_sample_99(4000), "KS {d:.4}");
    }

    #[test]
    fn component_counts_are_binomial() {
        let m = model(0.0);
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let mix = InitialMixture::new(alloc::vec![
            MixtureComponent {
                weight: 0.5,
                classical: ClassicalInit::Point { x: 1.0, k: 0.0 },
                psi: phi0,
            },
            MixtureComponent {
                weight: 0.5,
                classical: ClassicalInit::Point { x: -1.0, k: 0.0 },
                psi: phi1,
            },
        ])
        .unwrap();
        let n = 10_000;
        let e = Ensemble::sample_initial(&mix, n, 21, &m, DT, 1e-6).unwrap();
        let first = e.replicas().iter().filter(|r| r.u.x > 0.0).count() as f64;
        let half = n as f64 / 2.0;
        assert!((first - half).abs() < 3.0 * (n as f64 / 4.0).sqrt());
    }

    #[test]
    fn gaussian_classical_init_moments() {
        let m = model(0.0);
        let psi = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let mix = InitialMixture::pure(
            ClassicalInit::Gaussian {
                mean_x: 2.0,
                std_x: 0.3,
                mean_k: -1.0,
                std_k: 0.5,
            },
            psi,
        )
        .unwrap();
        let n = 20_000;
        let e = Ensemble::sample_initial(&mix, n, 4, &m, DT, 1e-6).unwrap();
        let xs: Vec<f64> = e.replicas().iter().map(|r| r.u.x).collect();
        let ks: Vec<f64> = e.replicas().iter().map(|r| r.u.k).collect();
        let sx = MeanErr::from_values(&xs);
        let sk = MeanErr::from_values(&ks);
        assert_abs_diff_eq!(sx.mean, 2.0, epsilon = 5.0 * 0.3 / (n as f64).sqrt());
        assert_abs_diff_eq!(sk.mean, -1.0, epsilon = 5.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn evolve_zero_steps_is_identity() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 8, 1, &m, DT, 1e-6).unwrap();
        let before = e.clone();
        e.evolve_to(e.time(), &SequentialStepper).unwrap();
        assert_eq!(e.time(), before.time());
        for (ra, rb) in e.replicas().iter().zip(before.replicas()) {
            assert_eq!(ra.y.to_bits(), rb.y.to_bits());
        }
    }

    #[test]
    fn incommensurate_target_rejected() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let e = Ensemble::sample_initial(&mix, 4, 1, &m, DT, 1e-6).unwrap();
        assert!(matches!(
            e.steps_to(DT * 10.5),
            Err(CoreError::IncommensurateTime { .. })
        ));
        assert!(matches!(
            e.steps_to(-DT),
            Err(CoreError::IncommensurateTime { .. })
        ));
        assert_eq!(e.steps_to(DT * 10.0).unwrap(), 10);
        // A target assembled by repeated addition lands a few ulp off an
        // exact multiple; the tolerance must absorb that.
        let mut t = 0.0;
        for _ in 0..7 {
            t += DT;
        }
        assert_eq!(e.steps_to(t).unwrap(), 7);
    }

    #[test]
    fn decoupled_step_matches_isolated_sectors() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 2, 5, &m, DT, 1e-6).unwrap();
        let r0 = e.replicas()[0].clone();
        // Isolated quantum evolution: two half-steps of the same propagator.
        let prop = Propagator::new(grid(), &m, 0.5 * DT).unwrap();
        let mut psi_alone = r0.psi.clone();
        prop.propagate(&mut psi_alone, r0.u.x).unwrap();
        prop.propagate(&mut psi_alone, r0.u.x).unwrap();
        // Isolated classical evolution: the two framing half-steps.
        let u_mid = advance_classical(r0.u, r0.y, 0.5 * DT, &m).unwrap();
        e.evolve_steps(1, &SequentialStepper).unwrap();
        let stepped = &e.replicas()[0];
        assert!(stepped.psi.l2_distance(&psi_alone).unwrap() < 1e-12);
        let u_alone = advance_classical(u_mid, stepped.y, 0.5 * DT, &m).unwrap();
        assert_abs_diff_eq!(stepped.u.x, u_alone.x, epsilon = 1e-15);
        assert_abs_diff_eq!(stepped.u.k, u_alone.k, epsilon = 1e-15);
    }

    #[test]
    fn identical_replicas_stay_bit_identical() {
        let m = model(0.25);
        let psi = WaveFunction::gaussian(grid(), 0.5, 0.8, 0.0).unwrap();
        let proto = Replica {
            u: ClassicalState::new(1.0, -0.3).unwrap(),
            psi,
            y: 0.7,
            flags: ReplicaFlags::default(),
        };
        let mut e = Ensemble::from_replicas(
            alloc::vec![proto.clone(), proto],
            m,
            DT,
            0.0,
            0,
            1e-6,
        )
        .unwrap();
        e.evolve_steps(200, &SequentialStepper).unwrap();
        let [a, b] = e.replicas() else { panic!() };
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.u.x.to_bits(), b.u.x.to_bits());
        assert_eq!(a.u.k.to_bits(), b.u.k.to_bits());
        for (za, zb) in a.psi.amplitudes().iter().zip(b.psi.amplitudes()) {
            assert_eq!(za.re.to_bits(), zb.re.to_bits());
            assert_eq!(za.im.to_bits(), zb.im.to_bits());
        }
    }

    #[test]
    fn chained_evolve_equals_single_evolve() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let mut one = Ensemble::sample_initial(&mix, 6, 2, &m, DT, 1e-6).unwrap();
        let mut two = one.clone();
        one.evolve_steps(100, &SequentialStepper).unwrap();
        two.evolve_steps(37, &SequentialStepper).unwrap();
        two.evolve_steps(63, &SequentialStepper).unwrap();
        assert_eq!(one.time().to_bits(), two.time().to_bits());
        for (ra, rb) in one.replicas().iter().zip(two.replicas()) {
            assert_eq!(ra.y.to_bits(), rb.y.to_bits());
            assert_eq!(ra.u.x.to_bits(), rb.u.x.to_bits());
            for (za, zb) in ra.psi.amplitudes().iter().zip(rb.psi.amplitudes()) {
                assert_eq!(za.re.to_bits(), zb.re.to_bits());
            }
        }
    }

    #[test]
    fn deleting_replicas_leaves_others_untouched() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let mut full = Ensemble::sample_initial(&mix, 6, 8, &m, DT, 1e-6).unwrap();
        let mut subset = full.clone();
        let kept: Vec<Replica> = subset
            .replicas()
            .iter()
            .step_by(2)
            .cloned()
            .collect();
        subset = Ensemble::from_replicas(kept, m, DT, 0.0, 8, 1e-6).unwrap();
        full.evolve_steps(50, &SequentialStepper).unwrap();
        subset.evolve_steps(50, &SequentialStepper).unwrap();
        for (rs, rf) in subset.replicas().iter().zip(full.replicas().iter().step_by(2)) {
            assert_eq!(rs.y.to_bits(), rf.y.to_bits());
            assert_eq!(rs.u.k.to_bits(), rf.u.k.to_bits());
        }
    }

    #[test]
    fn decoupled_classical_mean_follows_oscillator() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 4, 1, &m, 1e-3, 1e-6).unwrap();
        e.evolve_steps(3000, &SequentialStepper).unwrap();
        let obs = e.observables().unwrap();
        let want = (3.0f64).cos(); // X0 cos(omega_c t), X0 = 1, t = 3
        assert_abs_diff_eq!(obs.x_cl.mean, want, epsilon = 1e-6);
    }

    #[test]
    fn resample_redraws_from_current_density() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 4000, 13, &m, DT, 1e-6).unwrap();
        let mut before = e.ys();
        e.resample_bohmian(14).unwrap();
        let mut after = e.ys();
        assert_ne!(before[0].to_bits(), after[0].to_bits());
        // Same law at t=0: two-sample KS below the 99% threshold.
        let d = stats::ks_two_sample(&mut before, &mut after);
        assert!(d <= stats::ks_threshold_two_sample_99(4000, 4000), "KS {d:.4}");
        // Determinism: same resample seed, same draw.
        let mut e2 = Ensemble::sample_initial(&mix, 4000, 13, &m, DT, 1e-6).unwrap();
        e2.resample_bohmian(14).unwrap();
        for (ra, rb) in e.replicas().iter().zip(e2.replicas()) {
            assert_eq!(ra.y.to_bits(), rb.y.to_bits());
        }
    }

    #[test]
    fn ground_state_point_energy_example() {
        // E_qexp = E0 + classical = hbar omega/2 + V_c(1) = 0.5 + 0.5.
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let e = Ensemble::sample_initial(&mix, 100, 1, &m, DT, 1e-6).unwrap();
        let obs = e.observables().unwrap();
        assert_abs_diff_eq!(obs.e_qexp.mean, 1.0, epsilon = 1e-6);
        assert_eq!(obs.e_qexp.stderr, 0.0);
        assert_eq!(obs.x_cl.stderr, 0.0);
    }

    #[test]
    fn decoupled_energy_flavors_agree() {
        let m = model(0.0);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 8, 6, &m, DT, 1e-6).unwrap();
        e.evolve_steps(25, &SequentialStepper).unwrap();
        let obs = e.observables().unwrap();
        assert_abs_diff_eq!(obs.e_qexp.mean, obs.e_point.mean, epsilon = 1e-12);
    }

    #[test]
    fn energy_components_sum_to_totals() {
        let m = model(0.25);
        let mix = ground_mixture(&m);
        let mut e = Ensemble::sample_initial(&mix, 8, 6, &m, DT, 1e-6).unwrap();
        e.evolve_steps(40, &SequentialStepper).unwrap();
        let plan = FftPlan::new(e.grid().len()).unwrap();
        let mut buf = Vec::new();
        let em = e.energy_means(&plan, &mut buf).unwrap();
        let sum = em.kinetic + em.v_q + em.v_int_exp + em.cl_kinetic + em.v_c;
        assert_abs_diff_eq!(sum, em.e_qexp, epsilon = 1e-12);
        let sum_p = em.kinetic + em.v_q + em.v_int_point + em.cl_kinetic + em.v_c;
        assert_abs_diff_eq!(sum_p, em.e_point, epsilon = 1e-12);
    }

    #[test]
    fn richardson_self_convergence_is_second_order() {
        let m = model(0.25);
        let grid = grid();
        let psi = WaveFunction::gaussian(grid.clone(), 0.8, 0.7, 0.5).unwrap();
        let proto = Replica {
            u: ClassicalState::new(1.0, 0.2).unwrap(),
            psi,
            y: 0.4,
            flags: ReplicaFlags::default(),
        };
        let horizon = 0.4;
        let run = |dt: f64| {
            let mut r = proto.clone();
            let job = ReplicaJob {
                model: &m,
                dt,
                eps_node: 1e-6,
                steps: (horizon / dt).round() as u64,
            };
            evolve_replica(&mut r, &job).unwrap();
            r
        };
        let diff = |a: &Replica, b: &Replica| {
            let dpsi = a.psi.l2_distance(&b.psi).unwrap();
            ((a.u.x - b.u.x).powi(2)
                + (a.u.k - b.u.k).powi(2)
                + (a.y - b.y).powi(2)
                + dpsi * dpsi)
                .sqrt()
        };
        let c1 = run(0.02);
        let c2 = run(0.01);
        let c3 = run(0.005);
        let ratio = diff(&c1, &c2) / diff(&c2, &c3);
        assert!(
            (3.0..=5.0).contains(&ratio),
            "self-convergence ratio {ratio:.2} outside 4 +- 25%"
        );
    }
}
