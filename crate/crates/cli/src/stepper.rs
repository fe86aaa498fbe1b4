//! Parallel ensemble driver.

use anyhow::{anyhow, Result};
use qcbohm_core::ensemble::{evolve_replica, EnsembleStepper, Replica, ReplicaJob};
use rayon::prelude::*;
use rayon::ThreadPool;

/// Runs replicas across a rayon pool. Replicas are independent and each
/// carries its own RNG stream, so results are bit-identical for every
/// thread count, including 1. When several replicas fail, which error is
/// reported is scheduling-dependent; that is harmless because a failed
/// run produces no artifacts.
pub struct RayonStepper {
    pool: ThreadPool,
}

impl RayonStepper {
    /// `threads == 0` sizes the pool automatically.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| anyhow!("cannot build thread pool: {e}"))?;
        Ok(Self { pool })
    }
}

impl EnsembleStepper for RayonStepper {
    fn run(
        &self,
        replicas: &mut [Replica],
        job: &ReplicaJob,
    ) -> Result<(), qcbohm_core::CoreError> {
        self.pool.install(|| {
            replicas
                .par_iter_mut()
                .try_for_each(|r| evolve_replica(r, job))
        })
    }
}
