//! Versioned checkpoint container: a fixed little-endian binary layout with
//! a JSON manifest describing the architecture and every weight tensor.
//!
//! Layout: `b"CGCK"` | `u16` version (LE) | `u32` manifest length (LE) |
//! manifest JSON | tensor payloads as f32 LE in manifest order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nets::{
    build_classifier, build_discriminator, build_generator, Classifier, ConvLayerSpec, Fusion,
    PatchDiscriminator, Task, UnetGenerator,
};
use crate::nn::Module;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// What was checkpointed; enough to rebuild the network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArchDesc {
    Generator { task: Task, size: usize, ngf: usize },
    Discriminator {
        cond_channels: usize,
        target_channels: usize,
        spec: Vec<ConvLayerSpec>,
        fusion: Fusion,
    },
    Classifier { in_channels: usize, image_size: usize, n_classes: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// An in-memory snapshot of a network's weights and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub arch: ArchDesc,
    pub tensors: Vec<TensorEntry>,
}

/// A network rebuilt from a snapshot.
pub enum BuiltNet {
    Generator(UnetGenerator),
    Discriminator(PatchDiscriminator),
    Classifier(Classifier),
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    arch: ArchDesc,
    tensors: Vec<TensorMeta>,
}

impl Snapshot {
    pub fn capture(arch: ArchDesc, net: &mut dyn Module) -> Self {
        let mut tensors = Vec::new();
        net.visit_params("", &mut |p| {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.to_vec(),
            });
        });
        Self { arch, tensors }
    }

    /// Copy weights into `net`; every stored tensor must match a parameter
    /// by name and shape, and every parameter must be covered.
    pub fn apply(&self, net: &mut dyn Module) -> Result<()> {
        let mut remaining: std::collections::HashMap<&str, &TensorEntry> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut problem: Option<String> = None;
        net.visit_params("", &mut |p| {
            if problem.is_some() {
                return;
            }
            match remaining.remove(p.name.as_str()) {
                Some(t) if t.shape == p.shape => p.value.copy_from_slice(&t.data),
                Some(t) => {
                    problem = Some(format!(
                        "tensor {} shape {:?} does not match parameter shape {:?}",
                        t.name, t.shape, p.shape
                    ))
                }
                None => problem = Some(format!("missing tensor for parameter {}", p.name)),
            }
        });
        if let Some(msg) = problem {
            return Err(Error::CheckpointFormat(msg));
        }
        if let Some(name) = remaining.keys().next() {
            return Err(Error::CheckpointFormat(format!("checkpoint has extra tensor {name}")));
        }
        Ok(())
    }

    /// Rebuild the architecture and load the weights.
    pub fn build(&self) -> Result<BuiltNet> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(match &self.arch {
            ArchDesc::Generator { task, size, ngf } => {
                let mut g = build_generator(*task, *size, *ngf, &mut rng)?;
                self.apply(&mut g)?;
                BuiltNet::Generator(g)
            }
            ArchDesc::Discriminator { cond_channels, target_channels, spec, fusion } => {
                let mut d =
                    build_discriminator(*cond_channels, *target_channels, spec, *fusion, &mut rng)?;
                self.apply(&mut d)?;
                BuiltNet::Discriminator(d)
            }
            ArchDesc::Classifier { in_channels, image_size, n_classes, width } => {
                let mut c =
                    build_classifier(*in_channels, *image_size, *n_classes, *width, &mut rng)?;
                self.apply(&mut c)?;
                BuiltNet::Classifier(c)
            }
        })
    }

    pub fn generator(&self) -> Result<UnetGenerator> {
        match self.build()? {
            BuiltNet::Generator(g) => Ok(g),
            _ => Err(Error::CheckpointFormat("snapshot is not a generator".into())),
        }
    }

    pub fn discriminator(&self) -> Result<PatchDiscriminator> {
        match self.build()? {
            BuiltNet::Discriminator(d) => Ok(d),
            _ => Err(Error::CheckpointFormat("snapshot is not a discriminator".into())),
        }
    }

    /// FNV-1a digest over the manifest and payload bytes; used for the
    /// freeze contract ("weights hash-identical before/after").
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for t in &self.tensors {
            eat(t.name.as_bytes());
            for d in &t.shape {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorMeta { name: t.name.clone(), shape: t.shape.clone(), len: t.data.len() })
                .collect(),
        };
        let manifest_json = serde_json::to_vec(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::with_capacity(10 + manifest_json.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::CheckpointFormat(msg.to_string());
        if bytes.len() < 10 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        if bytes.len() < 10 + mlen {
            return Err(fail("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[10..10 + mlen])
            .map_err(|e| Error::Serde(e.to_string()))?;
        let mut offset = 10 + mlen;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for m in manifest.tensors {
            let nbytes = m.len * 4;
            if bytes.len() < offset + nbytes {
                return Err(fail("truncated payload"));
            }
            let mut data = Vec::with_capacity(m.len);
            for chunk in bytes[offset..offset + nbytes].chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            offset += nbytes;
            tensors.push(TensorEntry { name: m.name, shape: m.shape, data });
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        Ok(Self { arch: manifest.arch, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
