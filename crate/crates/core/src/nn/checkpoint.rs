use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::params::{Architecture, ModelParams};
use super::scalar::Real;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "fformation-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Self-describing model snapshot. Values are stored as f64 regardless of
/// training precision (f32 widens exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub arch: Architecture,
    pub precision: Precision,
    pub seed: u64,
    pub params: Vec<f64>,
    pub optimizer: Option<AdamState<f64>>,
    #[serde(default)]
    pub note: String,
}

impl Checkpoint {
    pub fn new<T: Real>(
        params: &ModelParams<T>,
        optimizer: Option<&AdamState<T>>,
        precision: Precision,
        seed: u64,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            arch: *params.arch(),
            precision,
            seed,
            params: params.values().iter().map(|v| v.as_f64()).collect(),
            optimizer: optimizer.map(AdamState::cast),
            note: String::new(),
        }
    }

    pub fn params<T: Real>(&self) -> Result<ModelParams<T>> {
        ModelParams::from_values(self.arch, self.params.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint format {:?}",
                path.display(),
                ck.format
            )));
        }
        ck.arch.validate()?;
        if ck.params.len() != ck.arch.param_count() {
            return Err(Error::Data(format!(
                "{}: {} parameters stored, architecture needs {}",
                path.display(),
                ck.params.len(),
                ck.arch.param_count()
            )));
        }
        Ok(ck)
    }
}
