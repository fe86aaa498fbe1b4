//! Grid-discretized reduced density matrix of the quantum sector plus
//! classical phase-space moments: the coarse estimate of the full hybrid
//! state used to compare ensembles that should represent the same physics.
//!
//! Matrix entries are kernel values rho(x_j, x_k) with units 1/length, so
//! the trace is sum_j rho_jj * dx and operator algebra carries a dx weight
//! per contraction. Distances between estimates use the trace norm (sum of
//! absolute eigenvalues), which is invariant under the unitary quantum
//! evolution; two estimates of one state stay as close at time T as they
//! started, making the sampling tolerance time-independent.

use alloc::{sync::Arc, vec, vec::Vec};

use crate::ensemble::Ensemble;
use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::wavefunction::WaveFunction;
use crate::C64;

#[allow(unused_imports)]
use num_traits::Float;

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const EIGENVALUE_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassicalMoments {
    pub x: f64,
    pub k: f64,
    pub x2: f64,
    pub k2: f64,
    pub xk: f64,
}

#[derive(Debug, Clone)]
pub struct DensityMatrixEstimate {
    grid: Arc<Grid>,
    /// Row-major n x n kernel values rho(x_j, x_k), units 1/length.
    rho: Vec<C64>,
    pub classical_moments: ClassicalMoments,
    pub replica_count: usize,
}

/// Equal-weight estimate from an ensemble: rho = (1/N) sum_i psi_i psi_i^+
/// plus classical moments over replicas.
pub fn density_matrix_estimate(e: &Ensemble) -> Result<DensityMatrixEstimate> {
    let pairs: Vec<(f64, &WaveFunction)> = e
        .replicas()
        .iter()
        .map(|r| (1.0 / e.len() as f64, &r.psi))
        .collect();
    let mut m = ClassicalMoments::default();
    let inv = 1.0 / e.len() as f64;
    for r in e.replicas() {
        m.x += r.u.x * inv;
        m.k += r.u.k * inv;
        m.x2 += r.u.x * r.u.x * inv;
        m.k2 += r.u.k * r.u.k * inv;
        m.xk += r.u.x * r.u.k * inv;
    }
    DensityMatrixEstimate::from_weighted(&pairs, m, e.len())
}

impl DensityMatrixEstimate {
    /// Weighted mixture of pure states; weights must sum to 1 for a unit
    /// trace. The upper triangle is accumulated and mirrored, so the
    /// result is Hermitian to the bit.
    pub fn from_weighted(
        states: &[(f64, &WaveFunction)],
        classical_moments: ClassicalMoments,
        replica_count: usize,
    ) -> Result<Self> {
        let first = states.first().ok_or(CoreError::EmptyEnsemble)?;
        let grid = first.1.grid().clone();
        let n = grid.len();
        let mut rho = vec![C64::new(0.0, 0.0); n * n];
        for (w, psi) in states {
            if !psi.grid().same_as(&grid) {
                return Err(CoreError::GridMismatch("density matrix states"));
            }
            let a = psi.amplitudes();
            for j in 0..n {
                let aj = a[j];
                for k in j..n {
                    rho[j * n + k] += *w * aj * a[k].conj();
                }
            }
        }
        for j in 0..n {
            for k in (j + 1)..n {
                rho[k * n + j] = rho[j * n + k].conj();
            }
        }
        Ok(Self {
            grid,
            rho,
            classical_moments,
            replica_count,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &[C64] {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        let n = self.grid.len();
        let mut t = 0.0;
        for j in 0..n {
            t += self.rho[j * n + j].re;
        }
        t * self.grid.spacing()
    }

    /// Tr rho^2 with the dx contraction weight; 1 for a pure state.
    pub fn purity(&self) -> f64 {
        let dx = self.grid.spacing();
        let s: f64 = self.rho.iter().map(|z| z.norm_sqr()).sum();
        s * dx * dx
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.grid.len();
        let mut worst = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                let d = self.rho[j * n + k] - self.rho[k * n + j].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the operator (rho * dx); at least 0 up to
    /// rounding, since the estimate is a convex sum of projectors.
    pub fn min_eigenvalue(&self) -> f64 {
        let eigs = hermitian_eigenvalues(&self.rho, self.grid.len(), self.grid.spacing());
        eigs.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn validate(&self) -> Result<()> {
        if self.hermiticity_error() > HERMITICITY_TOL {
            return Err(CoreError::BadDensityMatrix("not Hermitian"));
        }
        if (self.trace() - 1.0).abs() > TRACE_TOL {
            return Err(CoreError::BadDensityMatrix("trace differs from 1"));
        }
        if self.min_eigenvalue() < EIGENVALUE_FLOOR {
            return Err(CoreError::BadDensityMatrix("negative eigenvalue"));
        }
        Ok(())
    }

    /// Trace-norm distance sum |eig(delta * dx)| between two estimates.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(CoreError::GridMismatch("density matrix grids"));
        }
        let n = self.grid.len();
        let delta: Vec<C64> = self
            .rho
            .iter()
            .zip(&other.rho)
            .map(|(a, b)| a - b)
            .collect();
        let eigs = hermitian_eigenvalues(&delta, n, self.grid.spacing());
        Ok(eigs.iter().map(|e| e.abs()).sum())
    }
}

/// Eigenvalues of the Hermitian operator (m * dx), via the real symmetric
/// embedding [[X, -Y], [Y, X]] of m = X + iY, whose spectrum is that of m
/// with every eigenvalue doubled.
fn hermitian_eigenvalues(m: &[C64], n: usize, dx: f64) -> Vec<f64> {
    let dim = 2 * n;
    let mut b = vec![0.0f64; dim * dim];
    for j in 0..n {
        for k in 0..n {
            let z = m[j * n + k] * dx;
            b[j * dim + k] = z.re;
            b[j * dim + (n + k)] = -z.im;
            b[(n + j) * dim + k] = z.im;
            b[(n + j) * dim + (n + k)] = z.re;
        }
    }
    let all = symmetric_eigenvalues(&mut b, dim);
    // Doubled spectrum: sort and keep every other value, pairing each
    // eigenvalue with its duplicate.
    let mut sorted = all;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    sorted.into_iter().step_by(2).collect()
}

/// Cyclic Jacobi eigenvalues of a real symmetric matrix (row-major,
/// destroyed in place). Plain and allocation-light; adequate for the
/// few-hundred-dimensional matrices the estimates live on.
fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };
    let target = 1e-13 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        if off(a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-3 * target / n as f64 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_p = akp - s * (akq + tau * akp);
                    let new_q = akq + s * (akp - tau * akq);
                    a[k * n + p] = new_p;
                    a[p * n + k] = new_p;
                    a[k * n + q] = new_q;
                    a[q * n + k] = new_q;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
            }
        }
    }
    (0..n).map(|j| a[j * n + j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{ClassicalInit, Ensemble, InitialMixture, MixtureComponent};
    use crate::model::{Model, QuantumPotential};
    use approx::assert_abs_diff_eq;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::new(-12.8, 12.8, 128).unwrap())
    }

    fn model() -> Model {
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

    #[test]
    fn jacobi_matches_analytic_two_by_two() {
        let mut a = vec![2.0, 1.0, 1.0, 2.0];
        let mut eigs = symmetric_eigenvalues(&mut a, 2);
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_abs_diff_eq!(eigs[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eigs[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_leaves_diagonal_matrices_alone() {
        let mut a = vec![0.0; 16];
        for (j, v) in [3.0, -1.0, 0.5, 7.0].iter().enumerate() {
            a[j * 4 + j] = *v;
        }
        let mut eigs = symmetric_eigenvalues(&mut a, 4);
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(eigs, vec![-1.0, 0.5, 3.0, 7.0]);
    }

    #[test]
    fn jacobi_preserves_trace_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 24;
        let mut a = vec![0.0f64; n * n];
        for j in 0..n {
            for k in j..n {
                let v = crate::sampling::uniform_f64(&mut rng) - 0.5;
                a[j * n + k] = v;
                a[k * n + j] = v;
            }
        }
        let trace: f64 = (0..n).map(|j| a[j * n + j]).sum();
        let eigs = symmetric_eigenvalues(&mut a, n);
        let sum: f64 = eigs.iter().sum();
        assert_abs_diff_eq!(sum, trace, epsilon = 1e-10);
    }

    #[test]
    fn hermitian_embedding_handles_complex_entries() {
        // [[1, i], [-i, 1]] has eigenvalues 0 and 2.
        let m = vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(0.0, -1.0),
            C64::new(1.0, 0.0),
        ];
        let mut eigs = hermitian_eigenvalues(&m, 2, 1.0);
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_abs_diff_eq!(eigs[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eigs[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_state_estimate_is_a_projector() {
        let psi = WaveFunction::gaussian(grid(), 0.7, 0.9, 0.3).unwrap();
        let est = DensityMatrixEstimate::from_weighted(
            &[(0.5, &psi), (0.5, &psi)],
            ClassicalMoments::default(),
            8,
        )
        .unwrap();
        assert_abs_diff_eq!(est.trace(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.purity(), 1.0, epsilon = 1e-10);
        assert_eq!(est.hermiticity_error(), 0.0);
        assert!(est.min_eigenvalue() >= EIGENVALUE_FLOOR);
        est.validate().unwrap();
        // Eigenvalues of a projector: one 1, rest 0.
        let eigs = hermitian_eigenvalues(est.matrix(), est.grid().len(), est.grid().spacing());
        let top = eigs.iter().cloned().fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(top, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn equal_mixture_purity_is_half() {
        let m = model();
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let mix = InitialMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                classical: ClassicalInit::Point { x: 1.0, k: 0.0 },
                psi: phi0,
            },
            MixtureComponent {
                weight: 0.5,
                classical: ClassicalInit::Point { x: 1.0, k: 0.0 },
                psi: phi1,
            },
        ])
        .unwrap();
        let n = 4000;
        let e = Ensemble::sample_initial(&mix, n, 11, &m, 1e-3, 1e-6).unwrap();
        let est = density_matrix_estimate(&e).unwrap();
        est.validate().unwrap();
        assert_abs_diff_eq!(est.purity(), 0.5, epsilon = 2.0 / (n as f64).sqrt());
        assert_abs_diff_eq!(est.classical_moments.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.classical_moments.k2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fock_and_superposition_mixtures_agree() {
        // { phi0 w 1/2, phi1 w 1/2 } and { (phi0 +- phi1)/sqrt(2) w 1/2 }
        // realize the same density matrix; sampled estimates agree in
        // trace norm within 5/sqrt(N).
        let m = model();
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let half = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        let plus = WaveFunction::superposition(&[(half, &phi0), (half, &phi1)]).unwrap();
        let minus = WaveFunction::superposition(&[(half, &phi0), (-half, &phi1)]).unwrap();
        let point = ClassicalInit::Point { x: 1.0, k: 0.0 };
        let fock = InitialMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: phi0.clone(),
            },
            MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: phi1.clone(),
            },
        ])
        .unwrap();
        let sup = InitialMixture::new(vec![
            MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: plus.clone(),
            },
            MixtureComponent {
                weight: 0.5,
                classical: point,
                psi: minus.clone(),
            },
        ])
        .unwrap();
        let n = 4000;
        let ea = Ensemble::sample_initial(&fock, n, 5, &m, 1e-3, 1e-6).unwrap();
        let eb = Ensemble::sample_initial(&sup, n, 6, &m, 1e-3, 1e-6).unwrap();
        let ra = density_matrix_estimate(&ea).unwrap();
        let rb = density_matrix_estimate(&eb).unwrap();
        let d = ra.l1_distance(&rb).unwrap();
        assert!(d <= 5.0 / (n as f64).sqrt(), "trace distance {d:.4}");
        // Exact-weight estimates agree to rounding: the identity is
        // algebraic, not statistical.
        let pa = DensityMatrixEstimate::from_weighted(
            &[(0.5, &phi0), (0.5, &phi1)],
            ClassicalMoments::default(),
            2,
        )
        .unwrap();
        let pb = DensityMatrixEstimate::from_weighted(
            &[(0.5, &plus), (0.5, &minus)],
            ClassicalMoments::default(),
            2,
        )
        .unwrap();
        assert!(pa.l1_distance(&pb).unwrap() <= 1e-12);
    }

    #[test]
    fn distance_to_self_is_zero() {
        let m = model();
        let psi = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let est = DensityMatrixEstimate::from_weighted(
            &[(1.0, &psi)],
            ClassicalMoments::default(),
            4,
        )
        .unwrap();
        assert_abs_diff_eq!(est.l1_distance(&est).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn orthogonal_projectors_are_trace_distance_two() {
        let m = model();
        let phi0 = WaveFunction::eigenstate(grid(), &m, 0).unwrap();
        let phi1 = WaveFunction::eigenstate(grid(), &m, 1).unwrap();
        let p0 = DensityMatrixEstimate::from_weighted(
            &[(1.0, &phi0)],
            ClassicalMoments::default(),
            2,
        )
        .unwrap();
        let p1 = DensityMatrixEstimate::from_weighted(
            &[(1.0, &phi1)],
            ClassicalMoments::default(),
            2,
        )
        .unwrap();
        assert_abs_diff_eq!(p0.l1_distance(&p1).unwrap(), 2.0, epsilon = 1e-8);
    }
}
