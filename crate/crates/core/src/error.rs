use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An index lies outside the extent of the axis it addresses.
    #[error("index {index} out of range for {what} (extent {extent})")]
    Range {
        what: &'static str,
        index: usize,
        extent: usize,
    },

    /// A shape, tag or parameter violated an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed on-disk data (manifest, weight container, checkpoint).
    #[error("format error in {path:?}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for returning a contract error built from a format string.
macro_rules! contract {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Contract(format!($($arg)*)))
    };
}
pub(crate) use contract;

pub(crate) fn ensure_index(what: &'static str, index: usize, extent: usize) -> Result<()> {
    if index < extent {
        Ok(())
    } else {
        Err(Error::Range {
            what,
            index,
            extent,
        })
    }
}
