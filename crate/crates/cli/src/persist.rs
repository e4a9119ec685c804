//! Policy files on disk.

use std::path::Path;

use zdc_core::qlearning::QLearningError;
use zdc_core::Policy;

use crate::error::{read_file, write_file, CliError};

pub fn save_policy(policy: &Policy, path: &Path) -> Result<(), CliError> {
    write_file(path, &policy.to_json())
}

pub fn load_policy(path: &Path) -> Result<Policy, CliError> {
    Policy::from_json(&read_file(path)?).map_err(|e| match e {
        QLearningError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
        other => CliError::QLearning(other),
    })
}
