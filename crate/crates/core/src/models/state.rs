use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Mode, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vit,
    Cnn,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Vit => 0,
            ModelKind::Cnn => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Vit),
            1 => Some(ModelKind::Cnn),
            _ => None,
        }
    }
}

/// Named parameters (trainable) and buffers (batch-norm running
/// statistics) of one model, tied to the spec they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub kind: ModelKind,
    pub fingerprint: u64,
    pub mode: Mode,
    pub params: IndexMap<String, Tensor<T>>,
    pub buffers: IndexMap<String, Tensor<T>>,
}

/// Tape handles for every parameter of a [`ModelState`].
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn new(kind: ModelKind, fingerprint: u64) -> Self {
        ModelState {
            kind,
            fingerprint,
            mode: Mode::Train,
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub(crate) fn insert_param(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name) && !self.buffers.contains_key(&name),
            "duplicate `{name}`"
        );
        self.params.insert(name, t);
    }

    pub(crate) fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name) && !self.buffers.contains_key(&name),
            "duplicate `{name}`"
        );
        self.buffers.insert(name, t);
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid("name", format!("no parameter `{name}`")))
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), requires_grad)))
            .collect();
        ParamVars { vars }
    }

    pub(crate) fn bn_stats(&self, prefix: &str) -> Result<BatchNormStats<T>> {
        let get = |s: &str| {
            self.buffers
                .get(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::invalid("name", format!("no buffer `{prefix}.{s}`")))
        };
        Ok(BatchNormStats {
            mean: get("running_mean")?.data().to_vec(),
            var: get("running_var")?.data().to_vec(),
        })
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<(String, BatchNormStats<T>)>) {
        for (prefix, s) in updates {
            if let Some(m) = self.buffers.get_mut(&format!("{prefix}.running_mean")) {
                m.data_mut().copy_from_slice(&s.mean);
            }
            if let Some(v) = self.buffers.get_mut(&format!("{prefix}.running_var")) {
                v.data_mut().copy_from_slice(&s.var);
            }
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            kind: self.kind,
            fingerprint: self.fingerprint,
            mode: self.mode,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}
