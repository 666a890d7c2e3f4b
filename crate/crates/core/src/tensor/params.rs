use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::container::{self, Dtype};
use crate::error::{Error, Result};

/// Named, ordered learnable tensors with their accumulated gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.grads.push(None);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn grad(&self, i: usize) -> Option<&[f64]> {
        self.grads[i].as_deref()
    }

    pub(crate) fn value_and_grad_mut(&mut self, i: usize) -> (&mut [f64], Option<&[f64]>) {
        (self.tensors[i].data_mut(), self.grads[i].as_deref())
    }

    /// Sets every gradient to zeros of the right length.
    pub fn zero_grads(&mut self) {
        for (g, t) in self.grads.iter_mut().zip(&self.tensors) {
            *g = Some(vec![0.0; t.len()]);
        }
    }

    pub fn clear_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Records every tensor on `tape`; with `trainable` they become
    /// gradient-tracking leaves.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Adds the tape gradients of `vars` (as returned by [`ParamSet::bind`])
    /// into the stored gradients. Parameters the loss did not reach get zeros.
    pub fn accumulate_grads(&mut self, vars: &[Var<'_>]) {
        assert_eq!(vars.len(), self.tensors.len());
        for (i, v) in vars.iter().enumerate() {
            let n = self.tensors[i].len();
            let slot = self.grads[i].get_or_insert_with(|| vec![0.0; n]);
            if let Some(g) = v.grad() {
                slot.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Multiplies every stored gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    format_version: u32,
    dtype: Dtype,
    seed: u64,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
}

const MAGIC: &[u8; 8] = b"SAINTPRM";
const FORMAT_VERSION: u32 = 1;

/// A serialized network: kind tag, architecture config, seed and values.
///
/// On disk this is a JSON manifest (names, shapes, dtype, config, seed)
/// followed by the values as one little-endian blob in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: ParamSet,
}

impl ParamFile {
    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let manifest = Manifest {
            kind: self.kind.clone(),
            format_version: FORMAT_VERSION,
            dtype,
            seed: self.seed,
            config: self.config.clone(),
            params: self
                .params
                .names
                .iter()
                .zip(&self.params.tensors)
                .map(|(n, t)| ParamEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_string_pretty(&manifest)?;
        Ok(container::encode(MAGIC, &header, &self.params.flat_values(), dtype))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, payload) = container::split(MAGIC, bytes, path)?;
        let manifest: Manifest = serde_json::from_str(header)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::BadHeader(format!(
                "unsupported model format version {}",
                manifest.format_version
            )));
        }
        let count = manifest
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        let values = container::decode(payload, count, manifest.dtype, path)?;
        let mut params = ParamSet::new();
        let mut offset = 0;
        for entry in manifest.params {
            let n: usize = entry.shape.iter().product();
            params.push(
                entry.name,
                Tensor::new(entry.shape, values[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(ParamFile {
            kind: manifest.kind,
            seed: manifest.seed,
            config: manifest.config,
            params,
        })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        container::write_file(path, &self.to_bytes(dtype)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?, path)
    }
}
