use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::FieldHandle;
use crate::mixture::GaussianMixture;
use crate::net::MlpScoreNet;
use crate::ou::AnalyticScore;
use crate::schedule::OuSchedule;

pub const FIELD_SCHEMA_VERSION: u32 = 1;

/// A persisted score field: the exact score of a mixture under a schedule,
/// or an MLP checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredField {
    AnalyticMixture { mixture: GaussianMixture, schedule: OuSchedule },
    Mlp { network: MlpScoreNet },
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    schema_version: u32,
    field: StoredField,
}

impl StoredField {
    pub fn dim(&self) -> usize {
        match self {
            Self::AnalyticMixture { mixture, .. } => mixture.dim(),
            Self::Mlp { network } => network.arch().dim,
        }
    }

    pub fn handle(&self) -> FieldHandle {
        match self {
            Self::AnalyticMixture { mixture, schedule } => Arc::new(AnalyticScore::new(mixture.clone(), *schedule)),
            Self::Mlp { network } => Arc::new(network.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FieldFile { schema_version: FIELD_SCHEMA_VERSION, field: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).ok_or_else(|| Error::Schema("missing schema_version".into()))?;
        if found != FIELD_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { found: found as u32, expected: FIELD_SCHEMA_VERSION });
        }
        Ok(serde_json::from_value::<FieldFile>(probe)?.field)
    }
}

pub fn save_field(path: &Path, field: &StoredField) -> Result<()> {
    std::fs::write(path, field.to_json()?)?;
    Ok(())
}

/// Loads a stored field, rejecting it when its dimension differs from
/// `expected_dim`.
pub fn load_field(path: &Path, expected_dim: Option<usize>) -> Result<StoredField> {
    let field = StoredField::from_json(&std::fs::read_to_string(path)?)?;
    if let Some(d) = expected_dim {
        check_dim(d, field.dim())?;
    }
    Ok(field)
}
