//! Versioned JSON checkpoints holding every parameter array, the codec and all dimensions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorldModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "etdmpc-checkpoint/v1";

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    env: Option<String>,
    model: WorldModel,
}

/// Loaded checkpoint plus the environment name it was trained on, if recorded.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub env: Option<String>,
    pub model: WorldModel,
}

pub fn to_json(model: &WorldModel, env: Option<&str>) -> Result<String> {
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.to_string(),
        env: env.map(str::to_string),
        model: model.clone(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unsupported checkpoint format `{}` (expected `{CHECKPOINT_FORMAT}`)",
            doc.format
        )));
    }
    doc.model.config.validate()?;
    Ok(Checkpoint {
        env: doc.env,
        model: doc.model,
    })
}

pub fn save(path: &Path, model: &WorldModel, env: Option<&str>) -> Result<()> {
    crate::io::write_atomic(path, to_json(model, env)?.as_bytes())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_json(&std::fs::read_to_string(path)?)
}
