//! Label-map container.
//!
//! Little-endian: magic `SEGL`, `u32` version (1), `u32` image count, then
//! per image `u16` height, `u16` width, `u32` segment count and
//! `height·width` `u32` labels in row-major order.

use std::path::Path;

use super::LabelMap;
use crate::data_io::atomic_write;
use crate::error::{Error, Result};

pub const LABELS_MAGIC: &[u8; 4] = b"SEGL";
const VERSION: u32 = 1;

pub fn encode_label_maps(maps: &[LabelMap]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(LABELS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        let (h, w) = (u16::try_from(m.height()), u16::try_from(m.width()));
        let (Ok(h), Ok(w)) = (h, w) else {
            return Err(Error::InvalidArgument(format!(
                "{}x{} map does not fit 16-bit extents",
                m.height(),
                m.width()
            )));
        };
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&(m.segment_count() as u32).to_le_bytes());
        for l in m.labels() {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() - *pos < n {
        return Err(Error::Truncated {
            offset: *pos as u64,
            what: format!("{what} needs {n} bytes, {} left", bytes.len() - *pos),
        });
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().unwrap()))
}

fn u16_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u16> {
    Ok(u16::from_le_bytes(take(bytes, pos, 2, what)?.try_into().unwrap()))
}

pub fn decode_label_maps(bytes: &[u8]) -> Result<Vec<LabelMap>> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: "SEGL".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u32_at(bytes, &mut pos, "version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = u32_at(bytes, &mut pos, "image count")? as usize;
    let mut maps = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let h = u16_at(bytes, &mut pos, "height")? as usize;
        let w = u16_at(bytes, &mut pos, "width")? as usize;
        let k = u32_at(bytes, &mut pos, "segment count")? as usize;
        let raw = take(bytes, &mut pos, 4 * h * w, "labels")?;
        let labels = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let map = LabelMap::new(h, w, labels)?;
        if map.segment_count() != k {
            return Err(Error::Format(format!(
                "image {i}: header says {k} segments, labels hold {}",
                map.segment_count()
            )));
        }
        maps.push(map);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(maps)
}

pub fn write_label_maps(path: impl AsRef<Path>, maps: &[LabelMap]) -> Result<()> {
    atomic_write(path.as_ref(), &encode_label_maps(maps)?)
}

pub fn read_label_maps(path: impl AsRef<Path>) -> Result<Vec<LabelMap>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_label_maps(&bytes)
}
