//! Named parameter collections and their on-disk container.
//!
//! Container layout (all integers little-endian `u32`, floats little-endian):
//!
//! ```text
//! magic        8 bytes  "MHDRPRM1"
//! arch         u32      0 = unet, 1 = identity
//! depth        u32      (0 for identity)
//! base         u32
//! in_channels  u32
//! out_channels u32
//! eps          f64
//! count        u32      number of tensors
//! per tensor:  name_len u32, name (UTF-8), rank u32, rank x extent u32,
//!              product(extents) x f32 values
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Architecture, ModelError, UNetConfig};
use crate::scalar::Real;
use crate::tensor::{Result as TensorResult, Tensor};

pub const PARAM_MAGIC: &[u8; 8] = b"MHDRPRM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamKind {
    ConvWeight,
    UpWeight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<T>,
}

/// Parameter values of a network (the meta-parameters or a task-adapted copy).
///
/// The set of names and shapes is a pure function of the [`Architecture`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Real> {
    arch: Architecture,
    entries: Vec<ParamEntry<T>>,
}

pub(crate) fn schema(arch: &Architecture) -> Vec<(String, Vec<usize>, ParamKind)> {
    let Architecture::UNet(cfg) = arch else {
        return Vec::new();
    };
    fn conv(out: &mut Vec<(String, Vec<usize>, ParamKind)>, prefix: &str, cin: usize, cout: usize, k: usize) {
        out.push((format!("{prefix}.weight"), vec![cout, cin, k, k], ParamKind::ConvWeight));
        out.push((format!("{prefix}.bias"), vec![cout], ParamKind::Bias));
    }
    let mut out = Vec::new();
    let mut layout = Vec::new();
    for level in 0..cfg.depth {
        let (cin, cout) = (cfg.contract_in(level), cfg.width(level));
        layout.push((format!("down{level}"), cin, cout, true));
    }
    let bottom_in = cfg.width(cfg.depth - 1);
    layout.push((String::from("bottom"), bottom_in, 2 * bottom_in, true));
    for level in (1..cfg.depth).rev() {
        layout.push((format!("up{level}"), 2 * cfg.width(level), cfg.width(level), false));
    }
    layout.push((String::from("top"), 2 * cfg.base_channels, cfg.base_channels, false));

    let mut norms = Vec::new();
    for (prefix, cin, cout, batchnorm) in &layout {
        conv(&mut out, &format!("{prefix}.conv1"), *cin, *cout, 3);
        if *batchnorm {
            norms.push((format!("{prefix}.bn1"), *cout));
        }
        conv(&mut out, &format!("{prefix}.conv2"), *cout, *cout, 3);
        if *batchnorm {
            norms.push((format!("{prefix}.bn2"), *cout));
        }
        if prefix == "top" {
            conv(&mut out, "top.out", *cout, cfg.out_channels, 1);
        } else if prefix == "bottom" || prefix.starts_with("up") {
            out.push((
                format!("{prefix}.up.weight"),
                vec![*cout, cout / 2, 2, 2],
                ParamKind::UpWeight,
            ));
            out.push((format!("{prefix}.up.bias"), vec![cout / 2], ParamKind::Bias));
        }
    }
    for (prefix, c) in norms {
        out.push((format!("{prefix}.gamma"), vec![c], ParamKind::Gamma));
        out.push((format!("{prefix}.beta"), vec![c], ParamKind::Beta));
    }
    out
}

impl<T: Real> ParamSet<T> {
    /// He-normal conv weights (fan-in scaled), zero biases, unit gamma, zero beta.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = schema(&arch)
            .into_iter()
            .map(|(name, dims, kind)| {
                let n: usize = dims.iter().product();
                let values = match kind {
                    ParamKind::ConvWeight | ParamKind::UpWeight => {
                        let fan_in = match kind {
                            ParamKind::ConvWeight => dims[1] * dims[2] * dims[3],
                            _ => dims[0],
                        };
                        let std = libm::sqrt(2.0 / fan_in as f64);
                        (0..n)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                T::of(z * std)
                            })
                            .collect()
                    }
                    ParamKind::Gamma => vec![T::one(); n],
                    ParamKind::Bias | ParamKind::Beta => vec![T::zero(); n],
                };
                ParamEntry { name, dims, values }
            })
            .collect();
        Ok(ParamSet { arch, entries })
    }

    /// All-zero values with the schema of `arch`.
    pub fn zeros(arch: Architecture) -> Self {
        let entries = schema(&arch)
            .into_iter()
            .map(|(name, dims, _)| {
                let n = dims.iter().product();
                ParamEntry {
                    name,
                    dims,
                    values: vec![T::zero(); n],
                }
            })
            .collect();
        ParamSet { arch, entries }
    }

    pub fn from_entries(arch: Architecture, entries: Vec<ParamEntry<T>>) -> Result<Self, ModelError> {
        let set = ParamSet { arch, entries };
        set.check_against(&arch)?;
        Ok(set)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Lists every tensor whose presence or shape differs from `arch`'s schema.
    pub fn check_against(&self, arch: &Architecture) -> Result<(), ModelError> {
        let expected = schema(arch);
        let mut diffs = Vec::new();
        for (name, dims, _) in &expected {
            match self.get(name) {
                None => diffs.push(format!("{name}: missing")),
                Some(e) if &e.dims != dims => diffs.push(format!("{name}: shape {:?}, expected {dims:?}", e.dims)),
                Some(e) if e.values.len() != dims.iter().product::<usize>() => {
                    diffs.push(format!("{name}: {} values for shape {dims:?}", e.values.len()))
                }
                Some(_) => {}
            }
        }
        for e in &self.entries {
            if !expected.iter().any(|(n, _, _)| n == &e.name) {
                diffs.push(format!("{}: unexpected", e.name));
            }
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Schema(diffs))
        }
    }

    fn zip_with(&self, other: &ParamSet<T>, f: impl Fn(T, T) -> T) -> Result<ParamSet<T>, ModelError> {
        other.check_against(&self.arch)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| ParamEntry {
                name: a.name.clone(),
                dims: a.dims.clone(),
                values: a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
            })
            .collect();
        Ok(ParamSet {
            arch: self.arch,
            entries,
        })
    }

    pub fn add(&self, other: &ParamSet<T>) -> Result<ParamSet<T>, ModelError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamSet<T>) -> Result<ParamSet<T>, ModelError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> ParamSet<T> {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.values.iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// Raw values in schema order.
    pub fn to_values(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.values.clone()).collect()
    }

    /// Same schema, new values (in schema order).
    pub fn with_values(&self, values: Vec<Vec<T>>) -> Result<ParamSet<T>, ModelError> {
        if values.len() != self.entries.len() {
            return Err(ModelError::Schema(vec![format!(
                "{} tensors given, schema has {}",
                values.len(),
                self.entries.len()
            )]));
        }
        let mut out = self.clone();
        for (e, v) in out.entries.iter_mut().zip(values) {
            if v.len() != e.values.len() {
                return Err(ModelError::Schema(vec![format!(
                    "{}: {} values for shape {:?}",
                    e.name,
                    v.len(),
                    e.dims
                )]));
            }
            e.values = v;
        }
        Ok(out)
    }

    /// Converts element type (checkpoints are stored as `f32`).
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            arch: self.arch,
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    dims: e.dims.clone(),
                    values: e.values.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Graph leaves requiring gradients.
    pub fn bind(&self) -> TensorResult<ParamTensors<T>> {
        self.to_tensors(true)
    }

    /// Untracked tensors, for inference.
    pub fn constants(&self) -> TensorResult<ParamTensors<T>> {
        self.to_tensors(false)
    }

    fn to_tensors(&self, track: bool) -> TensorResult<ParamTensors<T>> {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                if track {
                    Tensor::param(e.values.clone(), &e.dims)
                } else {
                    Tensor::from_vec(e.values.clone(), &e.dims)
                }
            })
            .collect::<TensorResult<Vec<_>>>()?;
        Ok(ParamTensors {
            arch: self.arch,
            names: self.entries.iter().map(|e| e.name.clone()).collect(),
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAM_MAGIC);
        let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        match self.arch {
            Architecture::UNet(c) => {
                put(&mut out, 0);
                put(&mut out, c.depth as u32);
                put(&mut out, c.base_channels as u32);
                put(&mut out, c.in_channels as u32);
                put(&mut out, c.out_channels as u32);
                out.extend_from_slice(&c.eps.to_le_bytes());
            }
            Architecture::Identity => {
                put(&mut out, 1);
                for _ in 0..4 {
                    put(&mut out, 0);
                }
                out.extend_from_slice(&0.0f64.to_le_bytes());
            }
        }
        put(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            put(&mut out, e.name.len() as u32);
            out.extend_from_slice(e.name.as_bytes());
            put(&mut out, e.dims.len() as u32);
            for &d in &e.dims {
                put(&mut out, d as u32);
            }
            for v in &e.values {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet<T>, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != PARAM_MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let tag = r.u32()?;
        let depth = r.u32()? as usize;
        let base_channels = r.u32()? as usize;
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let eps = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let arch = match tag {
            0 => Architecture::UNet(UNetConfig {
                depth,
                base_channels,
                in_channels,
                out_channels,
                eps,
            }),
            1 => Architecture::Identity,
            t => return Err(ModelError::Format(format!("unknown architecture tag {t}"))),
        };
        arch.validate()?;
        let count = r.u32()? as usize;
        if count > 4096 {
            return Err(ModelError::Format(format!("implausible tensor count {count}")));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name: String = core::str::from_utf8(r.take(len)?)
                .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
                .into();
            let rank = r.u32()? as usize;
            if !(1..=4).contains(&rank) {
                return Err(ModelError::Format(format!("tensor {name} has rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| ModelError::Format(format!("tensor {name} is too large")))?;
            let values = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            entries.push(ParamEntry { name, dims, values });
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        ParamSet::from_entries(arch, entries)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parameters bound into a differentiation graph.
#[derive(Debug, Clone)]
pub struct ParamTensors<T: Real> {
    arch: Architecture,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamTensors<T> {
    pub fn from_parts(arch: Architecture, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        if names.len() != tensors.len() {
            return Err(ModelError::Schema(vec![format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )]));
        }
        Ok(ParamTensors { arch, names, tensors })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| ModelError::MissingParam(name.into()))
    }

    /// Same names with new tensors (e.g. after an update step).
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> ParamTensors<T> {
        assert_eq!(tensors.len(), self.tensors.len());
        ParamTensors {
            arch: self.arch,
            names: self.names.clone(),
            tensors,
        }
    }

    /// `self - step * grads`, tracked through the graph.
    pub fn sub_scaled(&self, grads: &[Tensor<T>], step: T) -> TensorResult<ParamTensors<T>> {
        let tensors = self
            .tensors
            .iter()
            .zip(grads)
            .map(|(p, g)| p.sub(&g.scale(step)?))
            .collect::<TensorResult<Vec<_>>>()?;
        Ok(self.with_tensors(tensors))
    }

    /// Values only.
    pub fn values(&self) -> ParamSet<T> {
        ParamSet {
            arch: self.arch,
            entries: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    dims: t.dims().to_vec(),
                    values: t.to_vec(),
                })
                .collect(),
        }
    }
}

/// Gradient tensors paired with the names of `like`.
pub fn grads_to_set<T: Real>(like: &ParamTensors<T>, grads: &[Tensor<T>]) -> ParamSet<T> {
    like.with_tensors(grads.to_vec()).values()
}
