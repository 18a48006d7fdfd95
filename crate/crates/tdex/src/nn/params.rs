//! Named parameter storage, the Adam update, and the on-disk checkpoint
//! container (JSON manifest + little-endian f32 blob in manifest order).

use crate::error::{Result, TdexError};
use crate::nn::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug)]
struct Param {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Ordered name -> tensor map with per-tensor Adam moments and a shared step
/// counter. Any mutation bumps `version`, which invalidates outstanding tapes.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
    step: u64,
    version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, value: Tensor) {
        let m = Tensor::zeros(value.shape().to_vec());
        let v = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(name, Param { value, m, v });
        self.version += 1;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    /// Mutable access bumps the version since callers may edit the values.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.version += 1;
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Copies the parameters whose names start with `prefix` into a new store
    /// (moments are not carried over).
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, param) in &self.entries {
            if name.starts_with(prefix) {
                out.insert(name.clone(), param.value.clone());
            }
        }
        out
    }

    /// Overwrites matching parameter values from `other`, by name.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, param) in &other.entries {
            match self.entries.get_mut(name) {
                Some(dst) => {
                    if dst.value.shape() != param.value.shape() {
                        return Err(TdexError::ShapeMismatch {
                            layer: name.clone(),
                            expected: format!("{:?}", dst.value.shape()),
                            got: format!("{:?}", param.value.shape()),
                        });
                    }
                    dst.value = param.value.clone();
                }
                None => {
                    return Err(TdexError::Internal(format!(
                        "assign_from: unknown parameter {name}"
                    )))
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// One Adam step with bias correction. Weight decay is folded into the
    /// gradient (g += wd * p) before the moment updates.
    pub fn adam_step(&mut self, grads: &Gradients, hyper: &AdamHyper) -> Result<()> {
        self.step += 1;
        self.version += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for (name, grad) in grads.iter() {
            let param = self.entries.get_mut(name).ok_or_else(|| {
                TdexError::Internal(format!("adam_step: unknown parameter {name}"))
            })?;
            if param.value.shape() != grad.shape() {
                return Err(TdexError::ShapeMismatch {
                    layer: name.clone(),
                    expected: format!("{:?}", param.value.shape()),
                    got: format!("{:?}", grad.shape()),
                });
            }
            let pd = param.value.data_mut();
            let md = param.m.data_mut();
            let vd = param.v.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i] + hyper.weight_decay * pd[i];
                md[i] = hyper.beta1 * md[i] + (1.0 - hyper.beta1) * g;
                vd[i] = hyper.beta2 * vd[i] + (1.0 - hyper.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            }
        }
        Ok(())
    }

    /// EMA update toward `online`: p <- tau * p + (1 - tau) * online[p].
    /// Only names present in `self` are touched.
    pub fn ema_from(&mut self, online: &ParamStore, tau: f64) -> Result<()> {
        for (name, param) in self.entries.iter_mut() {
            let src = online
                .get(name)
                .ok_or_else(|| TdexError::Internal(format!("ema_from: missing {name}")))?;
            let dst = param.value.data_mut();
            for (d, s) in dst.iter_mut().zip(src.data()) {
                *d = tau * *d + (1.0 - tau) * s;
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Map<String, Value>) -> Checkpoint {
        Checkpoint {
            meta,
            tensors: self
                .entries
                .iter()
                .map(|(name, p)| (name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, tensor) in &ckpt.tensors {
            store.insert(name.clone(), tensor.clone());
        }
        store
    }
}

/// Gradients keyed by parameter name; accumulating the same name sums.
#[derive(Clone, Debug, Default)]
pub struct Gradients(IndexMap<String, Tensor>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: String, grad: Tensor) {
        match self.0.get_mut(&name) {
            Some(existing) => existing.add_scaled(&grad, 1.0),
            None => {
                self.0.insert(name, grad);
            }
        }
    }

    pub fn merge(&mut self, other: Gradients) {
        for (name, grad) in other.0 {
            self.accumulate(name, grad);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for grad in self.0.values_mut() {
            for v in grad.data_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    layout: String,
    tensors: Vec<TensorMeta>,
    meta: serde_json::Map<String, Value>,
}

/// A named tensor collection plus free-form metadata. Stored as
/// `<base>.json` + `<base>.bin` (f32 little-endian, manifest order).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str)
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta.get(key).and_then(Value::as_u64)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        if let Some(dir) = base.parent() {
            fs::create_dir_all(dir)?;
        }
        let manifest = Manifest {
            dtype: "f32".into(),
            layout: "row-major".into(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(base.with_extension("json"), json)?;
        let mut bin = fs::File::create(base.with_extension("bin"))?;
        let mut buf = Vec::new();
        for (_, tensor) in &self.tensors {
            for &v in tensor.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        bin.write_all(&buf)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Checkpoint> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        if manifest.dtype != "f32" {
            return Err(TdexError::InvalidData(format!(
                "unsupported checkpoint dtype {}",
                manifest.dtype
            )));
        }
        let mut bytes = Vec::new();
        fs::File::open(base.with_extension("bin"))?.read_to_end(&mut bytes)?;
        let total: usize = manifest
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        if bytes.len() != total * 4 {
            return Err(TdexError::InvalidData(format!(
                "checkpoint blob has {} bytes, manifest expects {}",
                bytes.len(),
                total * 4
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut offset = 0usize;
        for meta in &manifest.tensors {
            let numel: usize = meta.shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
                data.push(v as f64);
                offset += 4;
            }
            tensors.push((meta.name.clone(), Tensor::new(meta.shape.clone(), data)?));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w".into(), Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let mut grads = Gradients::new();
        grads.accumulate("w".into(), Tensor::zeros(vec![2]));
        let hyper = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        store.adam_step(&grads, &hyper).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[0.5, -0.5]);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut store = ParamStore::new();
        store.insert("x".into(), Tensor::scalar(1.0));
        let mut grads = Gradients::new();
        grads.accumulate("x".into(), Tensor::scalar(1.0));
        let hyper = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        store.adam_step(&grads, &hyper).unwrap();
        // bias-corrected first step: m_hat = v_hat = 1, so delta = lr/(1+eps)
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((store.get("x").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn descends_a_parabola() {
        // f(x) = x^2, grad = 2x, starting at 1
        let mut store = ParamStore::new();
        store.insert("x".into(), Tensor::scalar(1.0));
        let hyper = AdamHyper {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        for _ in 0..10 {
            let x = store.get("x").unwrap().data()[0];
            let mut grads = Gradients::new();
            grads.accumulate("x".into(), Tensor::scalar(2.0 * x));
            store.adam_step(&grads, &hyper).unwrap();
        }
        assert!(store.get("x").unwrap().data()[0].abs() < 1.0);
    }

    #[test]
    fn weight_decay_shrinks_params() {
        let mut store = ParamStore::new();
        store.insert("w".into(), Tensor::scalar(1.0));
        let mut grads = Gradients::new();
        grads.accumulate("w".into(), Tensor::scalar(0.0));
        let hyper = AdamHyper {
            weight_decay: 0.1,
            ..AdamHyper::default()
        };
        store.adam_step(&grads, &hyper).unwrap();
        assert!(store.get("w").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn gradient_accumulation_sums() {
        let mut grads = Gradients::new();
        grads.accumulate("a".into(), Tensor::scalar(1.0));
        grads.accumulate("a".into(), Tensor::scalar(2.5));
        assert_eq!(grads.get("a").unwrap().data(), &[3.5]);
    }

    #[test]
    fn checkpoint_round_trip_casts_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.insert(
            "enc.w".into(),
            Tensor::new(vec![2, 2], vec![0.1, -0.25, 1e-7, 3.5]).unwrap(),
        );
        store.insert("enc.b".into(), Tensor::new(vec![2], vec![0.0, 2.0]).unwrap());
        let mut meta = serde_json::Map::new();
        meta.insert("seed".into(), Value::from(42u64));
        let ckpt = store.to_checkpoint(meta);
        let base = dir.path().join("model");
        ckpt.save(&base).unwrap();
        let loaded = Checkpoint::load(&base).unwrap();
        assert_eq!(loaded.meta_u64("seed"), Some(42));
        assert_eq!(loaded.tensors.len(), 2);
        for ((name, orig), (lname, back)) in ckpt.tensors.iter().zip(&loaded.tensors) {
            assert_eq!(name, lname);
            for (o, b) in orig.data().iter().zip(back.data()) {
                assert_eq!(*o as f32, *b as f32);
            }
        }
    }

    #[test]
    fn ema_pulls_toward_online() {
        let mut target = ParamStore::new();
        target.insert("e".into(), Tensor::scalar(0.0));
        let mut online = ParamStore::new();
        online.insert("e".into(), Tensor::scalar(1.0));
        target.ema_from(&online, 0.99).unwrap();
        assert!((target.get("e").unwrap().data()[0] - 0.01).abs() < 1e-15);
    }
}
