use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffError, Graph, Tensor};

pub const CHECKPOINT_FORMAT: &str = "hml-ckpt-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    velocity: Option<Tensor>,
}

/// Named trainable parameters. Iteration order is by name, which keeps
/// updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    params: BTreeMap<String, Parameter>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            weight_decay: 0.0,
            momentum: 0.0,
        }
    }
}

impl ModelState {
    pub fn new() -> Self {
        ModelState::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), DiffError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        self.params.insert(
            name,
            Parameter {
                value,
                grad: None,
                velocity: None,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, DiffError> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor, DiffError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<(), DiffError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
        if grad.shape() != p.value.shape() {
            return Err(DiffError::shape("set_grad", &p.value, &grad));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Copies parameter gradients out of a graph after `backward`,
    /// summing when the same parameter was loaded more than once.
    pub fn collect_grads(&mut self, graph: &Graph) -> Result<(), DiffError> {
        self.zero_grads();
        for (name, g) in graph.param_grads() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One SGD step, `p <- p - lr * v` with `v <- momentum * v + grad + wd * p`.
    /// Parameters without a gradient only feel weight decay. Gradients are
    /// cleared afterwards.
    pub fn sgd_step(&mut self, config: &SgdConfig) -> Result<(), DiffError> {
        let mut updated = BTreeMap::new();
        for (name, p) in &self.params {
            let n = p.value.numel();
            let zero = vec![0.0; n];
            let g = p.grad.as_ref().map_or(zero.as_slice(), |g| g.values());
            let mut v: Vec<f64> = p
                .value
                .values()
                .iter()
                .zip(g)
                .map(|(w, g)| g + config.weight_decay * w)
                .collect();
            if config.momentum != 0.0 {
                if let Some(prev) = &p.velocity {
                    for (vi, pi) in v.iter_mut().zip(prev.values()) {
                        *vi += config.momentum * pi;
                    }
                }
            }
            let values: Vec<f64> = p
                .value
                .values()
                .iter()
                .zip(&v)
                .map(|(w, d)| w - config.lr * d)
                .collect();
            if values.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFinite { op: "sgd_step" });
            }
            let shape = p.value.shape().to_vec();
            let velocity =
                (config.momentum != 0.0).then(|| Tensor::new(shape.clone(), v).expect("shape"));
            updated.insert(name.clone(), (Tensor::new(shape, values)?, velocity));
        }
        for (name, (value, velocity)) in updated {
            let p = self.params.get_mut(&name).expect("known");
            p.value = value;
            p.velocity = velocity;
            p.grad = None;
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.value.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Copies the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ModelState {
        ModelState {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.clone(),
                            grad: None,
                            velocity: None,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk form of a [`ModelState`] with free-form metadata.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
    params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState, metadata: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            metadata,
            params: state
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: p.value.shape().to_vec(),
                            values: p.value.values().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_state(&self) -> Result<ModelState, DiffError> {
        let mut state = ModelState::new();
        for (k, t) in &self.params {
            let tensor = Tensor::new(t.shape.clone(), t.values.clone())
                .map_err(|e| DiffError::Checkpoint(format!("{k}: {e}")))?;
            state.insert(k.clone(), tensor)?;
        }
        Ok(state)
    }
}

pub fn save_checkpoint(
    path: &Path,
    state: &ModelState,
    metadata: serde_json::Value,
) -> Result<(), DiffError> {
    let ckpt = Checkpoint::from_state(state, metadata);
    let text = serde_json::to_string_pretty(&ckpt)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DiffError> {
    let text = std::fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let found = raw
        .get("format")
        .and_then(|f| f.as_str())
        .unwrap_or_default()
        .to_string();
    if found != CHECKPOINT_FORMAT {
        return Err(DiffError::CheckpointVersion {
            found,
            expected: CHECKPOINT_FORMAT.to_string(),
        });
    }
    Ok(serde_json::from_value(raw)?)
}
