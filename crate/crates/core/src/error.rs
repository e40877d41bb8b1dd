use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface. Variants are grouped by the CLI
/// exit code they map to (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("conflicting landmark overrides: {}", .0.join("; "))]
    LandmarkConflict(Vec<String>),

    #[error("land-use class `{0}` is absent from every zone's reference data")]
    MissingLanduseClass(String),

    #[error("zone {0} has zero or negative area")]
    ZeroAreaZone(u32),

    #[error("data error: {0}")]
    Data(String),

    #[error("need at least {k} distinct points, found {distinct}")]
    TooFewDistinctPoints { k: usize, distinct: usize },

    #[error("cluster {0} has no member platforms")]
    EmptyCluster(usize),

    #[error("cluster {0} has no POIs in its service areas")]
    NoPois(usize),

    #[error("invalid polygon in zone {taz_id}: {reason}")]
    InvalidPolygon { taz_id: u32, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingArtifact { .. }
            | Error::LandmarkConflict(_)
            | Error::MissingLanduseClass(_)
            | Error::ZeroAreaZone(_) => 2,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
