use crate::spectral::Field;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or grids of the operands do not line up.
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition (e.g. unit L2 norm of the base point) was violated.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value {value} at collocation index {index}")]
    Overflow { index: usize, value: f64 },

    /// The V norm left the admissible range; carries the last accepted state.
    #[error("blow-up at t = {t}: ||u||_V = {v_norm:e} exceeds {bound:e} (last valid state at t = {last_t})")]
    BlowUp {
        t: f64,
        v_norm: f64,
        bound: f64,
        last_t: f64,
        last_state: Box<Field>,
    },

    #[error(
        "Picard map does not contract on [0, {horizon}] (measured factor {factor:.3}); use a smaller horizon"
    )]
    NonContraction { horizon: f64, factor: f64 },

    #[error("Picard iteration did not reach tol {tol:e} in {iterations} iterations (last distance {distance:e})")]
    NotConverged {
        iterations: usize,
        distance: f64,
        tol: f64,
    },

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
