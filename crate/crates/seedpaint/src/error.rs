//! Error types shared across the crate.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked on data in the wrong state
    /// (e.g. warping from a view that has not been inpainted yet).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A view needs an object mask before depth proxies can be built;
    /// run segmentation (or a corrector that returns masks) first.
    #[error("view {0} has no object mask; segment the inpainted object first")]
    MissingObjectMask(u32),

    /// A geometric estimation problem is rank-deficient.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A corrector call failed; carries the view it was correcting.
    #[error("corrector failed on view {view}: {source}")]
    Corrector {
        view: u32,
        #[source]
        source: CorrectorError,
    },

    /// Optimization produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Configuration file is missing, malformed, or fails validation.
    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage was run before its prerequisites exist.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    /// Malformed scene, checkpoint, track, or metadata file.
    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors produced by corrector implementations, chiefly the remote client.
#[derive(Debug, Error)]
pub enum CorrectorError {
    /// Could not reach the endpoint at all (after retries).
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The endpoint answered with a non-2xx status.
    #[error("server returned status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },

    /// The response body did not match the wire contract.
    #[error("malformed response: {0}")]
    Malformed(String),

    /// The request itself violates the corrector contract.
    #[error("bad request: {0}")]
    BadRequest(String),

    /// Implementation-specific failure.
    #[error("{0}")]
    Other(String),
}
