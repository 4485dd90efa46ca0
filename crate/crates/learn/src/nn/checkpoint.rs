//! JSON checkpoints of named networks.
//!
//! ```text
//! { "format": "sagin-nn", "version": 1,
//!   "nets": { "<name>": { "layers": [ { "fan_in": I, "fan_out": O,
//!       "activation": "relu" | "tanh" | "identity",
//!       "w": [row-major I*O floats], "b": [O floats] } ] } } }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reload is
//! bitwise identical.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, NnError};

pub const CHECKPOINT_FORMAT: &str = "sagin-nn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

impl From<&Mlp> for MlpParams {
    fn from(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerParams {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    activation: l.activation,
                    w: l.w.iter().copied().collect(),
                    b: l.b.to_vec(),
                })
                .collect(),
        }
    }
}

impl MlpParams {
    pub fn to_mlp(&self) -> Result<Mlp, NnError> {
        let bad = |m: String| NnError::Checkpoint(m);
        if self.layers.is_empty() {
            return Err(bad("network has no layers".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let w = Array2::from_shape_vec((l.fan_in, l.fan_out), l.w.clone()).map_err(|e| bad(format!("layer {i}: {e}")))?;
            if l.b.len() != l.fan_out {
                return Err(bad(format!("layer {i}: bias length {} != {}", l.b.len(), l.fan_out)));
            }
            if let Some(prev) = layers.last().map(|d: &Dense| d.fan_out()) {
                if prev != l.fan_in {
                    return Err(bad(format!("layer {i}: fan_in {} does not chain from {prev}", l.fan_in)));
                }
            }
            layers.push(Dense { w, b: Array1::from(l.b.clone()), activation: l.activation });
        }
        Ok(Mlp::from_layers(layers))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub nets: BTreeMap<String, MlpParams>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, nets: BTreeMap::new() }
    }
}

impl Checkpoint {
    pub fn insert(&mut self, name: &str, net: &Mlp) {
        self.nets.insert(name.to_string(), MlpParams::from(net));
    }

    pub fn get(&self, name: &str) -> Result<Mlp, NnError> {
        self.nets.get(name).ok_or_else(|| NnError::Checkpoint(format!("missing network {name:?}")))?.to_mlp()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
