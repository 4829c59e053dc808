//! Open-vocabulary 3D scene graphs: multi-view frame selection, 2D feature
//! aggregation, graph network distillation, querying and evaluation.

pub mod config;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod formats;
pub mod inference;
pub mod net;
pub mod pipeline;
pub mod projection;
pub mod repl;
pub mod scene;
pub mod selection;

use std::path::PathBuf;

/// Top-level error of the pipeline commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("{what}: {reason}")]
    Data { what: String, reason: String },
    #[error(transparent)]
    Scene(#[from] scene::SceneError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error(transparent)]
    Train(#[from] net::TrainError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Fixture(#[from] fixture::FixtureError),
    #[error("relationship decoder failed on {failed} of {total} edges (scene {scene}): {first}")]
    External {
        scene: String,
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    pub fn data(what: impl Into<String>, reason: impl ToString) -> Self {
        Self::Data {
            what: what.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit status: 1 configuration, 2 data, 3 external service.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::External { .. } => 3,
            _ => 2,
        }
    }
}
