//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HTCN"                      magic
//! u16                         version (1)
//! u32 + bytes                 architecture tag, e.g. "cloud-cifar"
//! u64                         iteration counter
//! f32, f32                    learning rate, momentum
//! u32 + bytes, u32 + bytes    RNG algorithm tag, RNG state
//! u32                         record count
//! records:                    u32 name length, name bytes, u32 rank,
//!                             u32 × rank dims, f32 × product(dims) payload
//! ```
//!
//! Model parameters are stored under their own names, optimizer velocities
//! under `velocity/<name>`. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelGraph, Params};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;
use crate::zoo::Architecture;

pub const MAGIC: &[u8; 4] = b"HTCN";
pub const VERSION: u16 = 1;
const VELOCITY_PREFIX: &str = "velocity/";
const CHACHA8_TAG: &str = "chacha8";

/// Serialized generator state: the algorithm tag plus opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub algorithm: String,
    pub bytes: Vec<u8>,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let mut bytes = Vec::with_capacity(32 + 8 + 16);
        bytes.extend_from_slice(&rng.get_seed());
        bytes.extend_from_slice(&rng.get_stream().to_le_bytes());
        bytes.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        Self { algorithm: CHACHA8_TAG.into(), bytes }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        if self.algorithm != CHACHA8_TAG || self.bytes.len() != 56 {
            return Err(Error::Checkpoint(format!(
                "unsupported RNG state {:?} ({} bytes)",
                self.algorithm,
                self.bytes.len()
            )));
        }
        let seed: [u8; 32] = self.bytes[..32].try_into().expect("length checked");
        let stream = u64::from_le_bytes(self.bytes[32..40].try_into().expect("length checked"));
        let word_pos = u128::from_le_bytes(self.bytes[40..56].try_into().expect("length checked"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: Params,
    pub optimizer: OptimizerState,
    pub iteration: u64,
    pub rng: RngState,
}

impl Checkpoint {
    /// Snapshot of a freshly built or initialised model: zero velocities,
    /// iteration 0.
    pub fn initial(model: &ModelGraph, learning_rate: f32, momentum: f32, rng: &ChaCha8Rng) -> Self {
        Self {
            arch: model.arch.clone(),
            params: model.params.clone(),
            optimizer: OptimizerState::new(&model.params, learning_rate, momentum),
            iteration: 0,
            rng: RngState::capture(rng),
        }
    }

    /// Rebuilds the architecture named in the checkpoint and loads its parameters.
    pub fn to_model(&self) -> Result<ModelGraph> {
        let mut model = self.arch.build()?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }

    /// Bitwise equality of every tensor and counter.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        fn same(a: &Params, b: &Params) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
        }
        self.arch == other.arch
            && self.iteration == other.iteration
            && self.rng == other.rng
            && self.optimizer.learning_rate.to_bits() == other.optimizer.learning_rate.to_bits()
            && self.optimizer.momentum.to_bits() == other.optimizer.momentum.to_bits()
            && same(&self.params, &other.params)
            && same(&self.optimizer.velocity, &other.optimizer.velocity)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.arch.to_string());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.optimizer.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.optimizer.momentum.to_le_bytes());
        put_str(&mut out, &self.rng.algorithm);
        put_u32(&mut out, self.rng.bytes.len());
        out.extend_from_slice(&self.rng.bytes);

        let records: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .chain(self.optimizer.velocity.iter().map(|(n, t)| (format!("{VELOCITY_PREFIX}{n}"), t)))
            .collect();
        put_u32(&mut out, records.len());
        for (name, tensor) in records {
            put_str(&mut out, &name);
            put_u32(&mut out, tensor.rank());
            for &d in tensor.shape() {
                put_u32(&mut out, d);
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not an HTCN checkpoint".into()));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let arch: Architecture = r
            .string("architecture tag")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("architecture tag: {e}")))?;
        let iteration = u64::from_le_bytes(r.array("iteration")?);
        let learning_rate = f32::from_le_bytes(r.array("learning rate")?);
        let momentum = f32::from_le_bytes(r.array("momentum")?);
        let algorithm = r.string("rng algorithm")?;
        let len = r.u32("rng state length")? as usize;
        let rng = RngState { algorithm, bytes: r.take(len, "rng state")?.to_vec() };

        let count = r.u32("record count")?;
        let mut params = Params::new();
        let mut velocity = Params::new();
        for i in 0..count {
            let name = r.string("record name")?;
            let rank = r.u32("record rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("record dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("record {name}: dims {dims:?} overflow")))?;
            let payload = r.take(len, "record payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            let tensor = Tensor::new(dims, data)
                .map_err(|e| Error::Checkpoint(format!("record {i} ({name}): {e}")))?;
            let slot = match name.strip_prefix(VELOCITY_PREFIX) {
                Some(p) => velocity.insert(p.to_string(), tensor),
                None => params.insert(name.clone(), tensor),
            };
            if slot.is_some() {
                return Err(Error::Checkpoint(format!("duplicate record {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            arch,
            params,
            optimizer: OptimizerState { velocity, learning_rate, momentum },
            iteration,
            rng,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}
