//! Deterministic sampling: per-replica counter-based RNG streams, the few
//! scalar distributions the ensemble needs, and inverse-CDF draws from a
//! grid-discretized density.
//!
//! Every draw is pinned at the bit level: uniforms take the top 53 bits of a
//! ChaCha8 output word, normals come from Box-Muller on two such uniforms,
//! and the draw order per replica is fixed (component, classical, Bohmian
//! position). Nothing here depends on platform or library version.

use alloc::{sync::Arc, vec::Vec};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::grid::Grid;

#[allow(unused_imports)]
use num_traits::Float;

/// Independent stream for one replica: the master seed keys the cipher, the
/// replica index selects the stream.
pub fn replica_rng(master_seed: u64, replica_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica_index);
    rng
}

/// Uniform draw in [0, 1) from the top 53 bits of one output word.
pub fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard-normal pair by Box-Muller; consumes exactly two uniforms.
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = 1.0 - uniform_f64(rng); // (0, 1]: keeps the log finite
    let u2 = uniform_f64(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * core::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Piecewise-linear CDF of a nonnegative density sampled at grid points,
/// built by trapezoid accumulation and normalized to 1. Supports both
/// inverse-CDF draws and forward evaluation (the two must share one
/// construction so sampled points and KS references agree at t=0).
#[derive(Debug, Clone)]
pub struct GridCdf {
    grid: Arc<Grid>,
    /// cum[j] = integral up to grid point j; cum[0] = 0, cum[n-1] = 1.
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn from_density(grid: Arc<Grid>, density: &[f64]) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(CoreError::GridMismatch("density table != grid size"));
        }
        let n = grid.len();
        let dx = grid.spacing();
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        let mut total = 0.0;
        for j in 1..n {
            let p0 = density[j - 1];
            let p1 = density[j];
            if !(p0 >= 0.0 && p1 >= 0.0) {
                return Err(CoreError::BadMixture("negative density sample"));
            }
            total += 0.5 * dx * (p0 + p1);
            cum.push(total);
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(CoreError::AllPointsMasked);
        }
        for c in cum.iter_mut() {
            *c /= total;
        }
        cum[n - 1] = 1.0;
        Ok(Self { grid, cum })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// CDF value at `y`, clamped to [0, 1] outside the grid.
    pub fn eval(&self, y: f64) -> f64 {
        let pts = self.grid.points();
        let n = pts.len();
        if y <= pts[0] {
            return 0.0;
        }
        if y >= pts[n - 1] {
            return 1.0;
        }
        let t_full = self.grid.fractional_index(y);
        let j = t_full.floor() as usize;
        let t = t_full - j as f64;
        self.cum[j] + (self.cum[j + 1] - self.cum[j]) * t
    }

    /// Inverse CDF at u in [0, 1): binary search plus linear interpolation.
    /// Flat (zero-mass) stretches resolve to their left edge.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let pts = self.grid.points();
        // First index with cum[j] >= u.
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cum[mid] < u {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo == 0 {
            return pts[0];
        }
        let j = lo - 1;
        let seg = self.cum[lo] - self.cum[j];
        if seg <= 0.0 {
            return pts[j];
        }
        let t = (u - self.cum[j]) / seg;
        pts[j] + t * self.grid.spacing()
    }

    /// One inverse-CDF draw.
    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        self.quantile(uniform_f64(rng))
    }
}
