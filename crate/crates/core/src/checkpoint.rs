//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"ELCK"
//! version  u32 (= 1)
//! arch     u32 length + UTF-8 TOML
//! step     u64
//! rng      32-byte ChaCha seed, u64 stream, u128 word position
//! params   u32 count, then per tensor:
//!            u32 name length + UTF-8 name, 4 × u32 shape (N, C, H, W),
//!            N·C·H·W × f32
//! momentum same tensor list, one per trainable parameter
//! ```
//!
//! Parameters appear in the network's manifest order, running statistics
//! included.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"ELCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Architecture TOML, stored verbatim.
    pub arch_toml: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<NamedTensor>,
    pub momentum: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshot of an untrained or externally trained network.
    pub fn of_network(net: &Network) -> Checkpoint {
        use rand::SeedableRng;
        Checkpoint {
            arch_toml: net.spec().to_toml(),
            step: 0,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
            params: net
                .store()
                .entries()
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape(),
                    data: e.tensor.data().to_vec(),
                })
                .collect(),
            momentum: Vec::new(),
        }
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        ArchSpec::from_toml(&self.arch_toml)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.arch_toml);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        for list in [&self.params, &self.momentum] {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for t in list {
                put_str(&mut out, &t.name);
                for d in t.shape.dims() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.error("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let arch_toml = r.string()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let params = r.tensors()?;
        let momentum = r.tensors()?;
        if r.pos != bytes.len() {
            return Err(r.error(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            arch_toml,
            step,
            rng: RngState { seed, stream, word_pos },
            params,
            momentum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// Copies the stored parameters into `net`, which must have the same
    /// manifest. The first differing name or shape is reported.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        let ids: Vec<_> = net.store().ids().collect();
        for (i, id) in ids.iter().enumerate() {
            let entry = net.store().entry(*id);
            let Some(t) = self.params.get(i) else {
                return Err(Error::Config(format!("checkpoint lacks parameter {}", entry.name)));
            };
            if t.name != entry.name || t.shape != entry.tensor.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter mismatch at {}: checkpoint has {} {}, network expects {} {}",
                    entry.name,
                    t.name,
                    t.shape,
                    entry.name,
                    entry.tensor.shape()
                )));
            }
        }
        if let Some(extra) = self.params.get(ids.len()) {
            return Err(Error::Config(format!(
                "checkpoint parameter mismatch at {}: not present in the network",
                extra.name
            )));
        }
        for (id, t) in ids.into_iter().zip(&self.params) {
            net.store_mut().get_mut(id).data_mut().copy_from_slice(&t.data);
        }
        Ok(())
    }

    /// Rebuilds the stored network.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::build(&self.arch()?, 0)?;
        self.apply(&mut net)?;
        Ok(net)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, detail: String) -> Error {
        Error::Format {
            path: self.path.into(),
            detail: format!("{detail} (offset {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error("string is not UTF-8".into()))
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = self.u32()? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let n = shape.numel();
            if n == 0 {
                return Err(self.error(format!("{name} has an empty shape")));
            }
            let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            out.push(NamedTensor { name, shape, data });
        }
        Ok(out)
    }
}

impl NamedTensor {
    pub fn tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.shape, self.data.clone())
    }
}
