use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{Activation, MlpModel, NormStats};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// On-disk form of an [`MlpModel`].
///
/// Reals are written as decimals with 17 significant digits, which reads back
/// to the identical `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub norm: Option<NormStats>,
    #[serde(serialize_with = "sig17_seq")]
    pub params: Vec<f64>,
    /// What the network represents: `dynamics`, `mu` or `state`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    /// Training time window of a state network `y(t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<[f64; 2]>,
}

pub(crate) fn sig17(x: f64) -> std::result::Result<Box<RawValue>, String> {
    if !x.is_finite() {
        return Err(format!("non-finite value {x} cannot be written"));
    }
    RawValue::from_string(format!("{x:.16e}")).map_err(|e| e.to_string())
}

pub(crate) fn sig17_seq<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        seq.serialize_element(&sig17(v).map_err(S::Error::custom)?)?;
    }
    seq.end()
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layer_sizes: model.layer_sizes().to_vec(),
            activation: model.activation(),
            norm: model.norm().cloned(),
            params: model.params().to_vec(),
            role: None,
            time_window: None,
        }
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = Some(role.into());
        self
    }

    pub fn with_time_window(mut self, window: (f64, f64)) -> Self {
        self.time_window = Some([window.0, window.1]);
        self
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        MlpModel::from_parts(
            self.layer_sizes.clone(),
            self.activation,
            self.params.clone(),
            self.norm.clone(),
        )
        .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
