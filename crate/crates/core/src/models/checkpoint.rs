//! Versioned JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "fairsvi-checkpoint",
//!   "version": 1,
//!   "spec": { "kind": "nb", ... },
//!   "net": { "hidden": [64, 32], ... },
//!   "params": { "q_z.out.weight": { "shape": [32, 3], "values": [...] }, ... },
//!   "encoder": { ... }
//! }
//! ```
//!
//! `params` is a flat map from parameter name to shape and row-major values,
//! batch-norm running statistics included. `encoder` is optional and holds
//! the fitted vocabularies and standardization moments of the train split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::NetConfig;
use super::ModelSpec;
use crate::autodiff::Tensor;
use crate::data::Encoder;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "fairsvi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub net: NetConfig,
    pub params: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<Encoder>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, net: NetConfig, params: BTreeMap<String, Tensor>) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, spec, net, params, encoder: None }
    }

    pub fn with_encoder(mut self, encoder: Encoder) -> Self {
        self.encoder = Some(encoder);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", self.version)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }
}
