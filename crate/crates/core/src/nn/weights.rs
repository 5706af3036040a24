//! Binary weight container.
//!
//! Little-endian layout: magic `SFW1`, `u32` version (1), `u32` total
//! parameter count, `u32` tensor count, then per tensor a `u16` name length,
//! the UTF-8 name, a `u8` rank, `rank` `u32` extents and the `f32` values.

use std::collections::HashMap;
use std::path::Path;

use super::{ArchConfig, Network};
use crate::data_io::atomic_write;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SFW1";
const VERSION: u32 = 1;

pub fn encode_weights(net: &Network) -> Vec<u8> {
    let named = net.named_params();
    let mut out = Vec::with_capacity(16 + 4 * net.count_parameters());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.count_parameters() as u32).to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                what: format!("{what} needs {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a weight container and attaches it to `config`.
pub fn decode_weights(bytes: &[u8], config: &ArchConfig) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic {
            expected: "SFW1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let declared_total = r.u32("parameter count")? as usize;
    let count = r.u32("tensor count")? as usize;

    let template = Network::zeroed(config)?;
    let expected: HashMap<String, (usize, usize, Vec<usize>)> = {
        let mut map = HashMap::new();
        let mut slot = 0;
        for (layer, tensors) in template.params().iter().enumerate() {
            for (j, _) in tensors.iter().enumerate() {
                let (name, t) = &template.named_params()[slot];
                map.insert(name.clone(), (layer, j, t.shape().to_vec()));
                slot += 1;
            }
        }
        map
    };
    if count != expected.len() {
        return Err(Error::Shape(format!(
            "file holds {count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    let mut params: Vec<Vec<Option<Tensor>>> = template
        .params()
        .iter()
        .map(|ts| vec![None; ts.len()])
        .collect();
    let mut total = 0usize;
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")? as usize);
        }
        let Some((layer, j, want)) = expected.get(&name) else {
            return Err(Error::Format(format!("unexpected tensor {name:?}")));
        };
        if &shape != want {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {shape:?}, architecture needs {want:?}"
            )));
        }
        if params[*layer][*j].is_some() {
            return Err(Error::Format(format!("tensor {name} appears twice")));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, "tensor values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor {name} holds non-finite values")));
        }
        total += len;
        params[*layer][*j] = Some(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    if total != declared_total {
        return Err(Error::Format(format!(
            "header declares {declared_total} parameters, tensors hold {total}"
        )));
    }
    let params = params
        .into_iter()
        .map(|ts| ts.into_iter().map(|t| t.expect("all tensors present")).collect())
        .collect();
    Network::from_params(config, params)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_weights(net))
}

pub fn load_weights(path: impl AsRef<Path>, config: &ArchConfig) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, config)
}
