//! Named parameter storage, initialization and the checkpoint directory format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Vec<T>,
    dilation: Option<usize>,
}

/// Owns every learnable tensor of a model together with its gradient buffer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

/// One line of a checkpoint manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub params: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "foam-params-v1";

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = vec![T::zero(); value.numel()];
        self.entries.push(Entry {
            name,
            value,
            grad,
            dilation: None,
        });
        ParamId(self.entries.len() - 1)
    }

    pub(crate) fn set_dilation(&mut self, id: ParamId, dilation: usize) {
        self.entries[id.0].dilation = Some(dilation);
    }

    pub fn dilation(&self, id: ParamId) -> Option<usize> {
        self.entries[id.0].dilation
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        let entry = &mut self.entries[id.0];
        entry.grad.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_values(&mut self) {
        for e in &mut self.entries {
            e.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn to_precision<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: vec![U::zero(); e.value.numel()],
                    dilation: e.dilation,
                })
                .collect(),
        }
    }

    /// Writes one `FOAMTNSR` file per parameter plus `manifest.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<ParamManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut params = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let file = format!("{}.tns", e.name);
            e.value.save(dir.join(&file))?;
            params.push(ManifestEntry {
                name: e.name.clone(),
                file,
                shape: e.value.shape().to_vec(),
                dilation: e.dilation,
            });
        }
        let manifest = ParamManifest {
            format: MANIFEST_FORMAT.into(),
            params,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }

    /// Overwrites parameter values from a checkpoint directory. Every
    /// parameter of `self` must be present with a matching shape.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let manifest: ParamManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: manifest_path,
                msg: format!("unknown manifest format {}", manifest.format),
            });
        }
        let by_name: BTreeMap<_, _> = manifest.params.iter().map(|p| (&p.name, p)).collect();
        for e in &mut self.entries {
            let Some(entry) = by_name.get(&e.name) else {
                return Err(Error::Format {
                    path: manifest_path.clone(),
                    msg: format!("parameter {} missing", e.name),
                });
            };
            let value = Tensor::<T>::load(dir.join(&entry.file))?;
            if value.shape() != e.value.shape() || entry.shape != e.value.shape() {
                return Err(Error::shape("load_dir", e.value.shape(), value.shape()));
            }
            e.value = value;
        }
        Ok(())
    }
}

/// Fan-in scaled uniform initialization on `(-√(6/fan_in), √(6/fan_in))`.
///
/// `fan_in` is the product of all extents after the first.
pub fn init_params<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with(shape, &mut rng)
}

pub(crate) fn init_with<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-bound..bound)))
}
