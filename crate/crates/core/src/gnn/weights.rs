//! Named tensors and the FGW1 weight container.
//!
//! Layout: the 4-byte magic `FGW1`, a little-endian `u32` header length, a
//! UTF-8 JSON manifest `[{"name", "shape", "dtype": "f32"}, ...]`, then every
//! tensor's raw little-endian `f32` payload concatenated in manifest order.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GnnError, ModelConfig};

pub const FGW1_MAGIC: &[u8; 4] = b"FGW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, GnnError> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GnnError::Shape(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(GnnError::NonFinite(format!("tensor {name} contains {bad}")));
        }
        Ok(Self { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelWeights {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor; new names are appended.
    pub fn insert(&mut self, t: Tensor) {
        match self.index.get(&t.name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(t.name.clone(), self.tensors.len());
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    /// Fetches a tensor, checking its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor, GnnError> {
        let t = self
            .get(name)
            .ok_or_else(|| GnnError::MissingTensor(name.to_string()))?;
        if t.shape != shape {
            return Err(GnnError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// All-zero weights for `config`, in manifest order.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut w = Self::new();
        for (name, shape) in config.manifest() {
            w.insert(Tensor::zeros(name, shape));
        }
        w
    }

    /// Random initialization: uniform fan-in scaling for linear weights,
    /// zero biases, unit GroupNorm gain.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::new();
        for (name, shape) in config.manifest() {
            let mut t = Tensor::zeros(name.clone(), shape.clone());
            if name.ends_with(".weight") {
                let bound = (6.0 / shape[1] as f32).sqrt();
                t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            } else if name.ends_with(".gamma") {
                t.data.iter_mut().for_each(|v| *v = 1.0);
            }
            w.insert(t);
        }
        w
    }

    /// Checks that the names and shapes are exactly the manifest of `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), GnnError> {
        let manifest = config.manifest();
        for (name, shape) in &manifest {
            self.expect(name, shape)?;
        }
        if self.tensors.len() != manifest.len() {
            let expected: std::collections::HashSet<&str> =
                manifest.iter().map(|(n, _)| n.as_str()).collect();
            let extra = self
                .tensors
                .iter()
                .find(|t| !expected.contains(t.name.as_str()))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(GnnError::UnexpectedTensor(extra));
        }
        Ok(())
    }

    /// Replaces every tensor whose name starts with `prefix` by `other`'s.
    pub fn copy_prefix_from(&mut self, other: &ModelWeights, prefix: &str) {
        for t in other.tensors.iter().filter(|t| t.name.starts_with(prefix)) {
            self.insert(t.clone());
        }
    }

    pub fn to_fgw1_bytes(&self) -> Vec<u8> {
        let manifest: Vec<ManifestEntry> = self
            .tensors
            .iter()
            .map(|t| ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
            })
            .collect();
        let header = serde_json::to_vec(&manifest).expect("manifest serialization is infallible");
        let payload: usize = self.tensors.iter().map(|t| 4 * t.len()).sum();
        let mut out = Vec::with_capacity(8 + header.len() + payload);
        out.extend_from_slice(FGW1_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_fgw1_bytes(bytes: &[u8]) -> Result<Self, GnnError> {
        if bytes.len() < 8 {
            return Err(GnnError::Truncated {
                expected: 8,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != FGW1_MAGIC {
            return Err(GnnError::BadMagic);
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8usize.checked_add(hlen).ok_or(GnnError::Truncated {
            expected: usize::MAX,
            actual: bytes.len(),
        })?;
        if bytes.len() < header_end {
            return Err(GnnError::Truncated {
                expected: header_end,
                actual: bytes.len(),
            });
        }
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| GnnError::Header(e.to_string()))?;
        let mut expected = header_end;
        for m in &manifest {
            if m.dtype != "f32" {
                return Err(GnnError::UnsupportedDtype {
                    name: m.name.clone(),
                    dtype: m.dtype.clone(),
                });
            }
            let n = m
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| GnnError::Header(format!("tensor {} is too large", m.name)))?;
            expected = expected
                .checked_add(n)
                .ok_or_else(|| GnnError::Header("payload size overflows".into()))?;
        }
        if bytes.len() < expected {
            return Err(GnnError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(GnnError::TrailingBytes(bytes.len() - expected));
        }
        let mut w = ModelWeights::new();
        let mut off = header_end;
        for m in manifest {
            let n: usize = m.shape.iter().product();
            let data: Vec<f32> = bytes[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            off += 4 * n;
            if w.get(&m.name).is_some() {
                return Err(GnnError::Header(format!("duplicate tensor {}", m.name)));
            }
            w.insert(Tensor {
                name: m.name,
                shape: m.shape,
                data,
            });
        }
        Ok(w)
    }

    /// Writes the container atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), GnnError> {
        let tmp = path.with_extension("fgw1.partial");
        std::fs::write(&tmp, self.to_fgw1_bytes()).map_err(|e| GnnError::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| GnnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, GnnError> {
        let bytes = std::fs::read(path).map_err(|e| GnnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_fgw1_bytes(&bytes)
    }
}
