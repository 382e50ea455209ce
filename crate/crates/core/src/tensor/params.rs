use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PARAM_SCHEMA: &str = "anomcast.params/v1";

/// Ordered, named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a parameter and returns its slot index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensor(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slot(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slot(name).map(move |i| &mut self.tensors[i])
    }

    /// Records every parameter as a leaf of `g`, in slot order.
    pub fn bind(&self, g: &Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn to_doc(&self, model: &str, config: serde_json::Value) -> ParamDoc {
        let params = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    ParamEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().iter().map(|x| x.as_f64()).collect(),
                    },
                )
            })
            .collect();
        ParamDoc {
            schema: PARAM_SCHEMA.to_string(),
            model: model.to_string(),
            config,
            params,
        }
    }

    /// Replaces every slot's values from `doc`, checking names and shapes
    /// against the current layout.
    pub fn load_doc(&mut self, doc: &ParamDoc, model: &str) -> Result<()> {
        doc.check(model)?;
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let entry = doc.params.get(name).ok_or_else(|| {
                Error::Data(format!(
                    "parameter `{name}` missing from `{model}` document"
                ))
            })?;
            if entry.shape != tensor.shape() {
                return Err(Error::Shape {
                    op: "load_params",
                    left: tensor.shape().to_vec(),
                    right: entry.shape.clone(),
                });
            }
            let data = entry.data.iter().map(|&x| T::of(x)).collect();
            *tensor = Tensor::new(entry.shape[0], entry.shape[1], data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Persisted form of a model: schema tag, model name, architecture config
/// and every parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDoc {
    pub schema: String,
    pub model: String,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, ParamEntry>,
}

impl ParamDoc {
    pub fn check(&self, model: &str) -> Result<()> {
        if self.schema != PARAM_SCHEMA {
            return Err(Error::Data(format!(
                "unsupported parameter schema `{}` (expected `{PARAM_SCHEMA}`)",
                self.schema
            )));
        }
        if self.model != model {
            return Err(Error::Data(format!(
                "parameter document is for `{}`, expected `{model}`",
                self.model
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
