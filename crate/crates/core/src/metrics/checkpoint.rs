//! Checkpoint directory layout:
//!
//! * `manifest.txt`: a `fedconv-checkpoint 1` header, then one line per item:
//!   `arch <json>`, `meta <key> <value>`, or
//!   `tensor <name> <dtype> <dims|scalar> <byte offset> <byte length>`
//!   with dims written as `2x3x3`.
//! * `tensors.bin`: the tensors back to back, little-endian IEEE-754.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::arch::{ArchConfig, Model};
use crate::error::{Error, Result};
use crate::optim::{AdamWHyper, AdamWState, LocalOptimizer, SgdState};
use crate::tensor::{numel, DType, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const HEADER: &str = "fedconv-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arch: Option<ArchConfig>,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Model state (parameters and buffers) under `model.`, optimizer state
    /// under `optim.`.
    pub fn from_model(model: &Model, optimizer: Option<&LocalOptimizer>) -> Self {
        let mut ck = Checkpoint {
            arch: Some(model.config().clone()),
            ..Default::default()
        };
        for e in model.state_dict().entries {
            ck.tensors.push((format!("model.{}", e.name), e.tensor));
        }
        if let Some(opt) = optimizer {
            ck.add_optimizer(opt);
        }
        ck
    }

    fn add_optimizer(&mut self, opt: &LocalOptimizer) {
        let mut push = |prefix: &str, list: &[Tensor]| {
            for (i, t) in list.iter().enumerate() {
                self.tensors.push((format!("optim.{prefix}.{i}"), t.clone()));
            }
        };
        let meta = match opt {
            LocalOptimizer::AdamW(s) => {
                push("m", &s.m);
                push("v", &s.v);
                vec![
                    ("kind", "adamw".to_string()),
                    ("t", s.t.to_string()),
                    ("beta1", s.hyper.beta1.to_string()),
                    ("beta2", s.hyper.beta2.to_string()),
                    ("eps", s.hyper.eps.to_string()),
                    ("weight_decay", s.hyper.weight_decay.to_string()),
                ]
            }
            LocalOptimizer::Sgd(s) => {
                push("buf", &s.buf);
                vec![
                    ("kind", "sgd".to_string()),
                    ("t", s.t.to_string()),
                    ("momentum", s.momentum.to_string()),
                ]
            }
        };
        for (k, v) in meta {
            self.meta.insert(format!("optim.{k}"), v);
        }
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .ok_or_else(|| err(format!("missing meta `{key}`")))?
            .parse()
            .map_err(|_| err(format!("meta `{key}` is not a number")))
    }

    fn prefixed(&self, prefix: &str) -> Vec<Tensor> {
        let mut found: Vec<(usize, &Tensor)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix)?.parse().ok().map(|i: usize| (i, t)))
            .collect();
        found.sort_by_key(|(i, _)| *i);
        found.into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn restore_model(&self) -> Result<Model> {
        let arch = self.arch.as_ref().ok_or_else(|| err("no architecture recorded"))?;
        let mut model = Model::new(arch, 0)?;
        let mut sd = model.state_dict();
        for e in &mut sd.entries {
            let key = format!("model.{}", e.name);
            e.tensor = self
                .tensors
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| err(format!("missing tensor `{key}`")))?;
        }
        model.load_state_dict(&sd, false)?;
        Ok(model)
    }

    pub fn restore_optimizer(&self) -> Result<Option<LocalOptimizer>> {
        let Some(kind) = self.meta.get("optim.kind") else {
            return Ok(None);
        };
        let t = self.meta_f64("optim.t")? as u64;
        Ok(Some(match kind.as_str() {
            "adamw" => LocalOptimizer::AdamW(AdamWState {
                hyper: AdamWHyper {
                    beta1: self.meta_f64("optim.beta1")?,
                    beta2: self.meta_f64("optim.beta2")?,
                    eps: self.meta_f64("optim.eps")?,
                    weight_decay: self.meta_f64("optim.weight_decay")?,
                },
                m: self.prefixed("optim.m."),
                v: self.prefixed("optim.v."),
                t,
            }),
            "sgd" => LocalOptimizer::Sgd(SgdState {
                momentum: self.meta_f64("optim.momentum")?,
                buf: self.prefixed("optim.buf."),
                t,
            }),
            other => return Err(err(format!("unknown optimizer kind `{other}`"))),
        }))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = format!("{HEADER}\n");
        if let Some(a) = &self.arch {
            manifest.push_str(&format!("arch {}\n", serde_json::to_string(a)?));
        }
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            if name.contains(char::is_whitespace) {
                return Err(err(format!("tensor name `{name}` contains whitespace")));
            }
            let offset = blob.len();
            for &v in t.data() {
                match t.dtype() {
                    DType::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                }
            }
            let dims = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            manifest.push_str(&format!(
                "tensor {name} {} {dims} {offset} {}\n",
                t.dtype(),
                blob.len() - offset
            ));
        }
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(BLOB_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let blob = fs::read(dir.join(BLOB_FILE))?;
        let mut lines = manifest.lines();
        if lines.next() != Some(HEADER) {
            return Err(err("missing or unknown manifest header"));
        }
        let mut ck = Checkpoint::default();
        let mut covered = 0usize;
        for (ln, line) in lines.enumerate() {
            let bad = |why: &str| err(format!("manifest line {}: {why}", ln + 2));
            let (tag, rest) = line.split_once(' ').ok_or_else(|| bad("malformed"))?;
            match tag {
                "arch" => ck.arch = Some(serde_json::from_str(rest)?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| bad("malformed meta"))?;
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 5 {
                        return Err(bad("tensor line needs 5 fields"));
                    }
                    let dtype = DType::from_tag(f[1]).ok_or_else(|| bad(&format!("unknown dtype tag `{}`", f[1])))?;
                    let shape: Vec<usize> = if f[2] == "scalar" {
                        Vec::new()
                    } else {
                        f[2].split('x')
                            .map(|d| d.parse().map_err(|_| bad("bad dimension")))
                            .collect::<Result<_>>()?
                    };
                    let offset: usize = f[3].parse().map_err(|_| bad("bad offset"))?;
                    let len: usize = f[4].parse().map_err(|_| bad("bad length"))?;
                    if len != numel(&shape) * dtype.size_of() {
                        return Err(bad("byte length does not match shape and dtype"));
                    }
                    if offset != covered || offset + len > blob.len() {
                        return Err(bad("byte range inconsistent with blob"));
                    }
                    covered += len;
                    let bytes = &blob[offset..offset + len];
                    let data: Vec<f64> = match dtype {
                        DType::F32 => bytes
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                            .collect(),
                        DType::F64 => bytes
                            .chunks_exact(8)
                            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                            .collect(),
                    };
                    ck.tensors.push((f[0].to_string(), Tensor::with_dtype(shape, data, dtype)?));
                }
                other => return Err(bad(&format!("unknown entry `{other}`"))),
            }
        }
        if covered != blob.len() {
            return Err(err(format!("blob has {} bytes, manifest covers {covered}", blob.len())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.tensors.push(("a".into(), Tensor::new(vec![2], vec![1.5, -0.1]).unwrap()));
        ck.tensors.push((
            "b".into(),
            Tensor::new(vec![1, 3], vec![0.1, 1e-30, -7.0]).unwrap().to_dtype(DType::F32),
        ));
        ck.tensors.push(("c".into(), Tensor::scalar(std::f64::consts::PI)));
        ck.meta.insert("k".into(), "v w".into());
        ck
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.meta, ck.meta);
        for ((na, a), (nb, b)) in back.tensors.iter().zip(&ck.tensors) {
            assert_eq!(na, nb);
            assert!(a.bits_eq(b), "{na}");
        }
    }

    #[test]
    fn bytes_are_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        assert_eq!(&blob[..8], &1.5f64.to_le_bytes());
        // f32 tensor starts after two f64 values
        assert_eq!(&blob[16..20], &0.1f32.to_le_bytes());
        assert_eq!(blob.len(), 16 + 12 + 8);
    }

    #[test]
    fn truncated_blob_and_bad_tag_fail() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        fs::write(dir.path().join(BLOB_FILE), &blob[..blob.len() - 1]).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());

        sample().save(dir.path()).unwrap();
        let m = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), m.replace(" f32 ", " f16 ")).unwrap();
        let e = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(e.contains("unknown dtype tag"), "{e}");
    }
}
