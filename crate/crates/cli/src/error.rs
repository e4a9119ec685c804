use std::path::PathBuf;

use thiserror::Error;
use zdc_core::baselines::BaselineError;
use zdc_core::evaluation::EvalError;
use zdc_core::markov_source::SourceError;
use zdc_core::qlearning::QLearningError;
use zdc_core::quantizer_space::SpaceError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("method {method} has no result at rate {rate_bits} bits")]
    MissingMethod { method: String, rate_bits: f64 },
    #[error("results file {0}: {1}")]
    Results(PathBuf, String),
    #[error("all {0} cells failed")]
    AllCellsFailed(usize),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    QLearning(#[from] QLearningError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
