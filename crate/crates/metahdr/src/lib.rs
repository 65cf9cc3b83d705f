//! File formats, dataset IO, threaded execution and the `metahdr` command
//! line on top of `metahdr-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
pub mod labels;

use std::path::PathBuf;

use metahdr_core::data::{CodecError, DataError};
use metahdr_core::image::ImageError;
use metahdr_core::loss::MetricError;
use metahdr_core::meta::MetaError;
use metahdr_core::unet::ModelError;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Hdr {
        path: PathBuf,
        #[source]
        source: CodecError,
    },
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Process exit status: 2 for bad invocations, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
