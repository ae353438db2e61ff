//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset_builder::DatasetError;
use crate::diagnostics::DiagnosticsError;
use crate::geo::GeoError;
use crate::imageio::ImageError;
use crate::maskgen::MaskError;
use crate::nn::NnError;
use crate::osm_ingest::IngestError;
use crate::raster_store::SceneError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Whether the failure stems from bad or missing input data rather than
    /// a defect in the program.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Nn(e) => !matches!(e, NnError::ShapeMismatch(_)),
            Error::Diagnostics(DiagnosticsError::ArchitectureUnsupported(_)) => false,
            _ => true,
        }
    }
}
