//! JSON model format.
//!
//! A branched net is `{"trunk": [layer…], "heads": [[layer…]…]}` and a plain
//! chain is `{"layers": [layer…]}`, where each layer is
//! `{"in": n, "out": m, "activation": str, "weights": [...], "bias": [...]}`
//! with `weights` row-major `[out × in]`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

use super::{Activation, BranchedNet, DenseLayer, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: String,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub trunk: Vec<LayerRecord>,
    pub heads: Vec<Vec<LayerRecord>>,
    /// Present (and `true`) only for nets with a unit-norm embedding.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub layers: Vec<LayerRecord>,
}

impl From<&DenseLayer> for LayerRecord {
    fn from(l: &DenseLayer) -> Self {
        Self {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            activation: l.activation.to_string(),
            weights: l.weights.clone(),
            bias: l.bias.clone(),
        }
    }
}

impl TryFrom<&LayerRecord> for DenseLayer {
    type Error = crate::Error;

    fn try_from(r: &LayerRecord) -> Result<Self> {
        let act: Activation = r.activation.parse()?;
        DenseLayer::new(r.in_dim, r.out_dim, act, r.weights.clone(), r.bias.clone())
    }
}

fn layers(records: &[LayerRecord]) -> Result<Vec<DenseLayer>> {
    records.iter().map(DenseLayer::try_from).collect()
}

impl BranchedNet {
    pub fn to_record(&self) -> NetRecord {
        NetRecord {
            trunk: self.trunk.layers.iter().map(LayerRecord::from).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| h.layers.iter().map(LayerRecord::from).collect())
                .collect(),
            normalize: self.normalize,
        }
    }

    /// Rebuilds a net. With an empty trunk, the input width is taken from the first head.
    pub fn from_record(r: &NetRecord) -> Result<Self> {
        let trunk_layers = layers(&r.trunk)?;
        let in_dim = match (trunk_layers.first(), r.heads.first().and_then(|h| h.first())) {
            (Some(l), _) => l.in_dim,
            (None, Some(h)) => h.in_dim,
            (None, None) => return shape_err("model has neither trunk layers nor heads"),
        };
        let trunk = Mlp::new(in_dim, trunk_layers)?;
        let embed = trunk.out_dim();
        let heads = r
            .heads
            .iter()
            .map(|h| Mlp::new(embed, layers(h)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(BranchedNet::new(trunk, heads)?.with_normalized_embedding(r.normalize))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("records always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(s)?)
    }
}

impl Mlp {
    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            layers: self.layers.iter().map(LayerRecord::from).collect(),
        }
    }

    pub fn from_record(r: &MlpRecord) -> Result<Self> {
        let ls = layers(&r.layers)?;
        let Some(first) = ls.first() else {
            return shape_err("a serialized chain needs at least one layer");
        };
        Mlp::new(first.in_dim, ls)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("records always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(s)?)
    }
}
