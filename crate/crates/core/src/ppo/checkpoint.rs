//! Versioned persistence of trained agents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Agent;
use super::PpoError;

/// Format version written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A complete snapshot of a training run's agents: layer shapes, weights,
/// masks, and policy spread, plus the epoch it was taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub agents: Vec<Agent>,
}

impl Checkpoint {
    pub fn new(epoch: usize, agents: Vec<Agent>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            agents,
        }
    }
}

/// Writes a checkpoint as JSON.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), PpoError> {
    let body = serde_json::to_string(checkpoint)
        .map_err(|e| PpoError::Checkpoint(format!("serialization failed: {e}")))?;
    fs::write(path, body)
        .map_err(|e| PpoError::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

/// Reads a checkpoint back, rejecting unknown versions.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PpoError> {
    let body = fs::read_to_string(path)
        .map_err(|e| PpoError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let checkpoint: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| PpoError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(PpoError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            checkpoint.version
        )));
    }
    Ok(checkpoint)
}
