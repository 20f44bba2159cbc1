//! Vector-field reward shaping on a smooth uncertainty landscape.
//!
//! The crate is organised around six pieces:
//!
//! * [`oracle`]: differentiable scalar uncertainty fields (sums of Gaussian
//!   bumps) with analytic gradients/Hessians and a sampled curvature bound.
//! * [`shaping`]: the shaped reward `r' = alpha <grad U, d> + beta <W grad U, d>`,
//!   its exact potential decomposition, and the scalar baseline reward.
//! * [`boxworld`]: a deterministic-given-seed 2-D box environment with dense
//!   goal progress reward and pluggable reward assembly modes.
//! * [`agent`]: a from-scratch f64 SAC implementation (twin critics, squashed
//!   Gaussian or flow policy, auto temperature) with checkpointing.
//! * [`diagnostics`]: trajectory statistics that make "orbiting the frontier"
//!   measurable, plus a scripted reference controller.
//! * [`harness`]: config files, seeded runs, metrics/trajectory artifacts and
//!   the `frontier` CLI (train / eval / verify / compare / sweep).

pub mod agent;
pub mod boxworld;
pub mod diagnostics;
pub mod harness;
pub mod linalg;
pub mod numcheck;
pub mod oracle;
pub mod sampling;
pub mod shaping;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to be actionable from
/// the CLI without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("episode already finished; call reset before stepping again")]
    EpisodeFinished,

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("toml parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("toml encode error: {0}")]
    TomlEncode(#[from] toml::ser::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence(_) => 3,
            _ => 2,
        }
    }
}
