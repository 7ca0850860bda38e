//! Binary checkpoint format.
//!
//! ```text
//! "DRNK"                      magic
//! u32 LE                      format version
//! u32 LE + UTF-8              canonical config text (network + metadata lines)
//! u32 LE                      array count
//! per array:
//!   u32 LE + UTF-8            name
//!   u8                        dtype (0 = f32, 1 = f64)
//!   u8                        rank
//!   u64 LE × rank             extents
//!   raw LE elements
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::{Network, TrainingMeta};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DRNK";
pub const FORMAT_VERSION: u32 = 1;

/// A decoded checkpoint: config, metadata, and named arrays at their stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetworkConfig,
    pub channel_mean: [f64; 3],
    pub meta: TrainingMeta,
    pub arrays: Vec<(String, StoredArray)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredArray {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredArray {
    fn shape(&self) -> &[usize] {
        match self {
            StoredArray::F32(t) => t.shape(),
            StoredArray::F64(t) => t.shape(),
        }
    }

    fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            StoredArray::F32(t) => t.cast(),
            StoredArray::F64(t) => t.cast(),
        }
    }
}

fn stored<T: Real>(t: &Tensor<T>) -> StoredArray {
    if T::DTYPE == f32::DTYPE {
        StoredArray::F32(t.cast())
    } else {
        StoredArray::F64(t.cast())
    }
}

impl Checkpoint {
    pub fn from_network<T: Real>(net: &Network<T>) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            config: net.config().clone(),
            channel_mean: net.channel_mean,
            meta: net.meta.clone(),
            arrays: net
                .param_names()
                .iter()
                .cloned()
                .zip(net.params().iter().map(stored))
                .collect(),
        }
    }

    pub fn to_network<T: Real>(&self) -> Result<Network<T>> {
        let arrays = self
            .arrays
            .iter()
            .map(|(n, a)| (n.clone(), a.to::<T>()))
            .collect();
        let mut net = Network::from_parts(self.config.clone(), arrays)?;
        net.channel_mean = self.channel_mean;
        net.meta = self.meta.clone();
        Ok(net)
    }

    fn header_text(&self) -> String {
        let mut s = self.config.to_canonical_text();
        let m = &self.meta;
        let _ = writeln!(
            s,
            "meta.channel_mean = {:?},{:?},{:?}",
            self.channel_mean[0], self.channel_mean[1], self.channel_mean[2]
        );
        let _ = writeln!(s, "meta.seed = {}", m.seed);
        let _ = writeln!(s, "meta.epoch = {}", m.epoch);
        let _ = writeln!(s, "meta.loss_digest = {}", m.loss_digest);
        for (k, v) in &m.extra {
            let _ = writeln!(s, "meta.extra.{k} = {v}");
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        write_str(&mut out, &self.header_text());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, arr) in &self.arrays {
            write_str(&mut out, name);
            let shape = arr.shape();
            out.push(match arr {
                StoredArray::F32(_) => f32::DTYPE,
                StoredArray::F64(_) => f64::DTYPE,
            });
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match arr {
                StoredArray::F32(t) => t.data().iter().for_each(|&v| v.write_le(&mut out)),
                StoredArray::F64(t) => t.data().iter().for_each(|&v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected \"DRNK\"")));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let text = r.string("config text")?;
        let config = NetworkConfig::parse(&text)?;
        let (channel_mean, meta) = parse_meta(&text)?;

        let count = r.u32("array count")? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let name = r.string(&format!("name of array #{i}"))?;
            let ctx = |what: &str| format!("{what} of array `{name}`");
            let dtype = r.take(1, &ctx("dtype"))?[0];
            let rank = r.take(1, &ctx("rank"))?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&ctx("extent"))? as usize);
            }
            let n: usize = shape.iter().product();
            let arr = match dtype {
                0 => StoredArray::F32(read_tensor::<f32>(&mut r, &shape, n, &name)?),
                1 => StoredArray::F64(read_tensor::<f64>(&mut r, &shape, n, &name)?),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "unknown dtype code {other} for array `{name}`"
                    )))
                }
            };
            arrays.push((name, arr));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last array",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            version,
            config,
            channel_mean,
            meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_network(net).save(path)
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    Checkpoint::load(path)?.to_network()
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_tensor<T: Real>(r: &mut Reader<'_>, shape: &[usize], n: usize, name: &str) -> Result<Tensor<T>> {
    let raw = r.take(n * T::BYTES, &format!("data of array `{name}`"))?;
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
        .map_err(|e| Error::Checkpoint(format!("array `{name}`: {e}")))
}

fn parse_meta(text: &str) -> Result<([f64; 3], TrainingMeta)> {
    let mut mean = [0.0; 3];
    let mut meta = TrainingMeta::default();
    let bad = |line: &str| Error::Checkpoint(format!("malformed metadata line `{line}`"));
    for line in text.lines() {
        let Some((key, value)) = line.split_once(" = ") else {
            continue;
        };
        match key {
            "meta.channel_mean" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(line))?;
                mean = parts.try_into().map_err(|_| bad(line))?;
            }
            "meta.seed" => meta.seed = value.parse().map_err(|_| bad(line))?,
            "meta.epoch" => meta.epoch = value.parse().map_err(|_| bad(line))?,
            "meta.loss_digest" => meta.loss_digest = value.to_string(),
            k => {
                if let Some(extra) = k.strip_prefix("meta.extra.") {
                    meta.extra.insert(extra.to_string(), value.to_string());
                }
            }
        }
    }
    Ok((mean, meta))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what}: needed {n} bytes, {available} left"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}
