use thiserror::Error;

/// Errors surfaced by construction and propagation preconditions.
///
/// Every variant corresponds to a checked precondition; none of them should
/// be reachable from a well-formed run configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    /// Grid sizes must be powers of two, at least 64 points.
    #[error("grid size {0} is not a power of two >= 64")]
    BadGridSize(usize),

    /// Grid extent must be positive and finite.
    #[error("grid extent [{min}, {max}] is not a valid interval")]
    BadGridExtent { min: f64, max: f64 },

    /// A physical parameter was out of its admissible range.
    #[error("parameter {name} = {value} out of range: {requirement}")]
    BadParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// The kinetic phase per step at the grid's Nyquist wavenumber reached
    /// pi; the split-operator step would alias.
    #[error("timestep too large: max kinetic phase per step {phase:.3} rad >= pi")]
    TimestepTooLarge { phase: f64 },

    /// A state was handed to an operation requiring unit norm.
    #[error("wavefunction norm {norm} deviates from 1 beyond tolerance {tol}")]
    NotNormalized { norm: f64, tol: f64 },

    /// Initial data would place non-negligible amplitude at the grid edge.
    #[error("initial state touches the grid boundary: {0}")]
    BoundaryTouch(&'static str),

    /// Velocity field construction found no usable points.
    #[error("velocity field undefined: all grid points below the node threshold")]
    AllPointsMasked,

    /// Two objects that must share a grid do not.
    #[error("grid mismatch between operands: {0}")]
    GridMismatch(&'static str),

    /// Evolution target time is not a whole number of steps away.
    #[error("target time {target} is not an integer number of steps dt={dt} from {from}")]
    IncommensurateTime { target: f64, from: f64, dt: f64 },

    /// Mixture weights must be positive and sum to 1.
    #[error("mixture weights invalid: {0}")]
    BadMixture(&'static str),

    /// Empty ensembles cannot be evolved or summarized.
    #[error("operation requires a non-empty ensemble")]
    EmptyEnsemble,

    /// Density-matrix estimate failed a structural check.
    #[error("density matrix invalid: {0}")]
    BadDensityMatrix(&'static str),
}

pub type Result<T> = core::result::Result<T, CoreError>;
