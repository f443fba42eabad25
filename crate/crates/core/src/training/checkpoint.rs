//! Binary checkpoint format:
//!
//! ```text
//! magic "HGANCKPT" | version u32 | header length u32 | TOML header
//! | tensor count u32 | tensors | crc32 u32
//! ```
//!
//! Each tensor is `name length u32 | name | rank u32 | dims u64... | f64 data`.
//! Integers and floats are little-endian. The checksum covers every byte
//! before it.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{AdamState, ImagePool, NetId, PerNetwork, Pools, PoolEntry, TrainState};
use crate::data::Phase;
use crate::error::{Error, Result};
use crate::networks::{Architecture, NamedTensor, NetworkParameters, Tensor};

const MAGIC: &[u8; 8] = b"HGANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: u32,
    completed_epochs: u32,
    phase: Phase,
    global_step: u64,
    identity_enabled: bool,
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
    networks: BTreeMap<String, Architecture>,
    optimizer_steps: BTreeMap<String, u64>,
    pool_capacity: BTreeMap<String, usize>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &ArrayD<f64>) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.ndim() as u32);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `state` to bytes.
pub(crate) fn encode(state: &TrainState) -> Vec<u8> {
    let header = Header {
        epoch: state.epoch,
        completed_epochs: state.completed_epochs,
        phase: state.phase,
        global_step: state.global_step,
        identity_enabled: state.identity_enabled,
        rng_seed: hex(&state.rng.get_seed()),
        rng_stream: format!("{:x}", state.rng.get_stream()),
        rng_word_pos: format!("{:x}", state.rng.get_word_pos()),
        networks: NetId::ALL
            .iter()
            .map(|&id| (id.name().to_string(), state.networks.get(id).architecture().clone()))
            .collect(),
        optimizer_steps: NetId::ALL
            .iter()
            .map(|&id| (id.name().to_string(), state.optimizers.get(id).step))
            .collect(),
        pool_capacity: state
            .pools
            .named()
            .iter()
            .map(|(n, p)| (n.to_string(), p.capacity()))
            .collect(),
    };
    let header = toml::to_string(&header).expect("header serializes");

    let mut tensors: Vec<(String, &ArrayD<f64>)> = Vec::new();
    for id in NetId::ALL {
        let net = state.networks.get(id);
        let adam = state.optimizers.get(id);
        for (i, w) in net.weights().iter().enumerate() {
            tensors.push((format!("net/{}/{}", id.name(), w.name), &w.value));
            tensors.push((format!("adam_m/{}/{i}", id.name()), &adam.m[i]));
            tensors.push((format!("adam_v/{}/{i}", id.name()), &adam.v[i]));
        }
    }
    let mut pool_tensors: Vec<(String, ArrayD<f64>)> = Vec::new();
    for (name, pool) in state.pools.named() {
        for (i, e) in pool.entries().iter().enumerate() {
            pool_tensors.push((format!("pool/{name}/{i}/image"), e.image.clone().into_dyn()));
            if let Some(c) = &e.condition {
                pool_tensors.push((format!("pool/{name}/{i}/condition"), c.clone().into_dyn()));
            }
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, header.len() as u32);
    buf.extend_from_slice(header.as_bytes());
    put_u32(&mut buf, (tensors.len() + pool_tensors.len()) as u32);
    for (name, t) in &tensors {
        put_tensor(&mut buf, name, t);
    }
    for (name, t) in &pool_tensors {
        put_tensor(&mut buf, name, t);
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let dims = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Integrity(format!("tensor {name} is impossibly large")))?;
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Integrity("overflow".into()))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length matches dims");
        Ok((name, t))
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

/// Parses bytes produced by [`encode`].
pub(crate) fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Compatibility {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(bad(format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
    }
    let mut r = Reader {
        bytes: body,
        pos: r.pos,
    };
    let header_len = r.u32()? as usize;
    let header_text = std::str::from_utf8(r.take(header_len)?).map_err(|_| bad("header is not UTF-8"))?;
    let header: Header = toml::from_str(header_text).map_err(|e| bad(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors: Vec<(String, ArrayD<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes after tensor table"));
    }

    let mut by_name: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    let mut order = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        order.push(name.clone());
        if by_name.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    let mut take = |name: &str| by_name.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")));

    let networks = PerNetwork::try_from_fn(|id| {
        let arch = header
            .networks
            .get(id.name())
            .ok_or_else(|| bad(format!("missing architecture for {}", id.name())))?
            .clone();
        let prefix = format!("net/{}/", id.name());
        let weights = order
            .iter()
            .filter_map(|n| n.strip_prefix(&prefix))
            .map(|n| {
                Ok(NamedTensor {
                    name: n.to_string(),
                    value: take(&format!("{prefix}{n}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkParameters::from_parts(arch, weights).map_err(|e| bad(format!("{}: {e}", id.name())))
    })?;
    let optimizers = PerNetwork::try_from_fn(|id| {
        let n = networks.get(id).weights().len();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, w) in networks.get(id).weights().iter().enumerate() {
            for (kind, out) in [("adam_m", &mut m), ("adam_v", &mut v)] {
                let t = take(&format!("{kind}/{}/{i}", id.name()))?;
                if t.shape() != w.value.shape() {
                    return Err(bad(format!("{kind}/{}/{i} has the wrong shape", id.name())));
                }
                out.push(t);
            }
        }
        let step = *header
            .optimizer_steps
            .get(id.name())
            .ok_or_else(|| bad(format!("missing optimizer step for {}", id.name())))?;
        Ok(AdamState { step, m, v })
    })?;
    let mut pool = |name: &str| -> Result<ImagePool> {
        let capacity = *header
            .pool_capacity
            .get(name)
            .ok_or_else(|| bad(format!("missing pool {name}")))?;
        let mut entries = Vec::new();
        loop {
            let key = format!("pool/{name}/{}/image", entries.len());
            let Some(image) = by_name_remove(&mut take, &order, &key)? else {
                break;
            };
            let ckey = format!("pool/{name}/{}/condition", entries.len());
            let condition = by_name_remove(&mut take, &order, &ckey)?;
            entries.push(PoolEntry {
                image: to4(image, &key)?,
                condition: condition.map(|c| to4(c, &ckey)).transpose()?,
            });
        }
        if entries.len() > capacity {
            return Err(bad(format!("pool {name} holds more entries than its capacity")));
        }
        Ok(ImagePool::from_entries(capacity, entries))
    };
    let pools = Pools {
        d1: pool("d1")?,
        d2: pool("d2")?,
        d3: pool("d3")?,
        d4: pool("d4")?,
    };
    drop(pool);
    if !by_name.is_empty() {
        return Err(bad(format!("unexpected tensors: {:?}", by_name.keys().collect::<Vec<_>>())));
    }

    let seed: [u8; 32] = unhex(&header.rng_seed)
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("bad rng seed"))?;
    let stream = u64::from_str_radix(&header.rng_stream, 16).map_err(|_| bad("bad rng stream"))?;
    let word_pos = u128::from_str_radix(&header.rng_word_pos, 16).map_err(|_| bad("bad rng position"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        epoch: header.epoch,
        completed_epochs: header.completed_epochs,
        phase: header.phase,
        global_step: header.global_step,
        networks,
        optimizers,
        pools,
        rng,
        identity_enabled: header.identity_enabled,
        perceptual: None,
    })
}

fn by_name_remove(
    take: &mut impl FnMut(&str) -> Result<ArrayD<f64>>,
    order: &[String],
    key: &str,
) -> Result<Option<ArrayD<f64>>> {
    if order.iter().any(|n| n == key) {
        take(key).map(Some)
    } else {
        Ok(None)
    }
}

fn to4(t: ArrayD<f64>, name: &str) -> Result<Tensor> {
    t.into_dimensionality().map_err(|_| bad(format!("{name} is not a 4-d tensor")))
}

/// Writes `state` to `path` via a temporary file and rename.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
