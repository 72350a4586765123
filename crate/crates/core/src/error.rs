use std::io;
use std::time::Duration;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rect out of bounds along {dim}: {start} + {len} > {limit}")]
    Bounds {
        dim: &'static str,
        start: usize,
        len: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{cells} canvas cells have zero blending weight and zero prior strength")]
    Coverage { cells: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("denoiser failed on tile {tile}: {source}")]
    Denoiser {
        tile: usize,
        #[source]
        source: DenoiseError,
    },

    #[error("embedding failed on frame {frame}: {source}")]
    Embedding {
        frame: usize,
        #[source]
        source: DenoiseError,
    },

    #[error("metric error on frame {frame}: {reason}")]
    Metric { frame: usize, reason: String },

    #[error("sampler step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Failures of a single denoiser (or embedder) call.
#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("broken pipe to denoiser process")]
    BrokenPipe,

    #[error("no response within {0:?}")]
    Timeout(Duration),

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("response shape {got:?} does not match request shape {expected:?}")]
    ShapeMismatch { expected: [usize; 4], got: [usize; 4] },

    #[error("response contains non-finite values")]
    NonFinite,

    #[error("remote error: {0}")]
    Remote(String),

    #[error("domain error: {0}")]
    Domain(String),
}
