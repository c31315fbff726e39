//! Run configuration: one JSON object with flat, section-prefixed keys.
//!
//! ```json
//! { "seed": 3, "data.n_train": 200, "train.epochs": 10, "model.divergence": "deep_bregman" }
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected by name. Relative paths are resolved against `out_dir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub cluster: ClusterConfig,
    pub eval: EvalConfig,
    pub generate: GenerateConfig,
    pub check: CheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub radii: Vec<f64>,
    pub mean_noise_std: f64,
    pub cov_scale: f64,
    pub samples_per_dist: usize,
    pub train_csv: String,
    pub test_csv: String,
    /// Generating Gaussians of the synthetic groups, read by Davis & Dhillon clustering.
    pub gaussians_json: String,
    /// Fraction of training groups held out for a per-epoch validation loss.
    pub validation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `moment_matching`, `deep_bregman` or `deep_euclidean`.
    pub divergence: String,
    pub trunk_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: String,
    pub embed_activation: String,
    /// Number of affine pieces; used by `deep_bregman` only.
    pub num_heads: usize,
    pub head_hidden: Vec<usize>,
    pub head_activation: String,
    pub normalize_embedding: bool,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: String,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `adam`, `sgd` or `rmsprop`.
    pub optimizer: String,
    pub lr: f64,
    /// Heavy-ball momentum for `sgd` and `rmsprop`.
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// `bregman` or `davis_dhillon`.
    pub method: String,
    pub k: usize,
    pub max_iter: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k_nn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub target_mean: Vec<f64>,
    pub target_cov_scale: f64,
    pub real_samples: usize,
    pub z_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub activation: String,
    pub steps: usize,
    pub batch_size: usize,
    pub disc_lr: f64,
    pub gen_lr: f64,
    pub margin: f64,
    pub rmsprop_rho: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub instances: usize,
    pub step: f64,
    pub threshold: f64,
    /// Corrupts the analytic gradients so the check must fail.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inject_fault: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            data: DataConfig {
                n_train: 500,
                n_test: 200,
                radii: vec![0.2, 0.6, 1.0],
                mean_noise_std: 0.05,
                cov_scale: 0.1,
                samples_per_dist: 50,
                train_csv: "train.csv".into(),
                test_csv: "test.csv".into(),
                gaussians_json: "gaussians.json".into(),
                validation_ratio: 0.0,
            },
            model: ModelConfig {
                divergence: "moment_matching".into(),
                trunk_hidden: vec![1000, 500],
                embed_dim: 2,
                activation: "relu".into(),
                embed_activation: "identity".into(),
                num_heads: 10,
                head_hidden: vec![],
                head_activation: "relu".into(),
                normalize_embedding: false,
                path: "model.json".into(),
            },
            train: TrainSection {
                loss: "contrastive".into(),
                margin: 1.0,
                epochs: 30,
                batch_size: 64,
                optimizer: "adam".into(),
                lr: 1e-3,
                momentum: 0.0,
            },
            cluster: ClusterConfig {
                method: "bregman".into(),
                k: 3,
                max_iter: 100,
                restarts: 10,
            },
            eval: EvalConfig { k_nn: 5 },
            generate: GenerateConfig {
                target_mean: vec![3.0, 3.0],
                target_cov_scale: 0.25,
                real_samples: 10_000,
                z_dim: 2,
                generator_hidden: vec![32, 32],
                discriminator_hidden: vec![32, 32],
                activation: "leaky_relu".into(),
                steps: 2000,
                batch_size: 64,
                disc_lr: 1e-3,
                gen_lr: 3e-3,
                margin: 0.4,
                rmsprop_rho: 0.99,
                samples: 1024,
            },
            check: CheckConfig {
                instances: 100,
                step: 1e-6,
                threshold: 1e-4,
                inject_fault: false,
            },
        }
    }
}

// Keys accepted but left out of the resolved config unless set.
const HIDDEN_KEYS: &[&str] = &["check.inject_fault"];

fn flatten(v: &Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    if let Value::Object(top) = v {
        for (k, val) in top {
            match val {
                Value::Object(section) => {
                    for (sk, sv) in section {
                        out.insert(format!("{k}.{sk}"), sv.clone());
                    }
                }
                other => {
                    out.insert(k.clone(), other.clone());
                }
            }
        }
    }
    out
}

impl RunConfig {
    /// Parses a flat-key JSON document over the defaults.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("not valid JSON: {e}")))?;
        let Value::Object(user) = user else {
            return Err(CliError::Config("the config must be a JSON object".into()));
        };
        let mut nested = serde_json::to_value(Self::default()).expect("defaults serialize");
        let known = flatten(&nested);
        for (key, value) in user {
            if !known.contains_key(&key) && !HIDDEN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown key `{key}`")));
            }
            match key.split_once('.') {
                Some((section, field)) => {
                    nested[section]
                        .as_object_mut()
                        .expect("sections are objects")
                        .insert(field.to_string(), value);
                }
                None => nested[key.as_str()] = value,
            }
        }
        let cfg: Self = serde_path_to_error::deserialize(nested)
            .map_err(|e| CliError::Config(format!("`{}`: {}", e.path(), e.inner())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The flat-key form, with every key present and sorted.
    pub fn to_json(&self) -> String {
        let flat: Map<String, Value> = flatten(&serde_json::to_value(self).expect("config serializes"))
            .into_iter()
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Object(flat)).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    /// `p` if absolute, else `out_dir/p`.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir().join(path)
        }
    }
}
