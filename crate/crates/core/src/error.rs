use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A simulated trajectory left the guarded domain.
    #[error("simulation blew up at step {step}: |x| = {magnitude:.3e} exceeds guard {guard:.3e}")]
    SimulationBlowup {
        step: usize,
        magnitude: f64,
        guard: f64,
    },

    /// Subsampling produced no output.
    #[error("empty output: lag {lag} is not smaller than trajectory length {len}")]
    EmptyOutput { lag: usize, len: usize },

    /// Too much analytic-kernel mass falls outside the grid.
    #[error(
        "kernel truncation in row {row}: {mass_outside:.3}% of the mass lies outside the grid"
    )]
    Truncation { row: usize, mass_outside: f64 },

    /// A visited state has no outgoing transitions.
    #[error("disconnected state {state}: no outgoing counts")]
    DisconnectedState { state: usize },

    /// The stationary-vector elimination hit an unreachable block.
    #[error("chain is not irreducible: elimination stalled at state {state}")]
    NotIrreducible { state: usize },

    /// An operation requiring detailed balance got a non-reversible model.
    #[error(
        "model is not reversible (detailed-balance residual {residual:.3e} > {tol:.1e}); \
         decompose() yields the reversible part"
    )]
    NotReversible { residual: f64, tol: f64 },

    /// Trial functions violate the mean-zero / orthonormality constraints.
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// The committor's interior linear system is singular.
    #[error("committor system is singular: interior is disconnected from the boundary sets")]
    SingularInterior,

    /// A collective-variable assignment has an empty bin.
    #[error("assignment error: bin {bin} has an empty fiber")]
    EmptyFiber { bin: usize },

    /// Every parameter of a CV family collapsed below two bins.
    #[error("degenerate family: no parameter yields at least two effective bins")]
    DegenerateFamily,

    /// A numerical invariant failed beyond its tolerance.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed serialized artifact.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
