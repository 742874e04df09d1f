//! Binary model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MDNM"  u32 version
//! u32 header_len  header_len bytes of JSON {schema, config, stats}
//! u32 blob_count
//! per blob: u32 name_len, name, u32 rows, u32 cols, rows*cols f64, u32 crc32
//! u32 crc32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_model, DemandModel};
use super::schema::{ArchitectureConfig, FeatureSchema, StandardizationStats};
use crate::error::{Error, Result};
use crate::numeric::Tensor2;

pub const MAGIC: &[u8; 4] = b"MDNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: FeatureSchema,
    config: ArchitectureConfig,
    stats: StandardizationStats,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::ModelFormat(format!("{what} too large for the container")))
}

pub fn encode_model(model: &DemandModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        schema: model.schema.clone(),
        config: model.config.clone(),
        stats: model.stats.clone(),
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, len_u32(header.len(), "header")?);
    buf.extend_from_slice(&header);
    put_u32(&mut buf, len_u32(model.params.len(), "parameter count")?);
    for (_, p) in model.params.iter() {
        let start = buf.len();
        put_u32(&mut buf, len_u32(p.name.len(), "parameter name")?);
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, len_u32(p.value.rows(), "rows")?);
        put_u32(&mut buf, len_u32(p.value.cols(), "cols")?);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf[start..]);
        put_u32(&mut buf, crc);
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("file truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<DemandModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic bytes)".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::ModelFormat("file truncated".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let expected = u32::from_le_bytes(trailer.try_into().expect("four bytes"));
    if crc32fast::hash(body) != expected {
        return Err(Error::ModelFormat(
            "file checksum mismatch (truncated or corrupted)".into(),
        ));
    }
    let header_len = c.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len, "header")?)
        .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
    header.stats.validate(&header.schema)?;
    let mut model = build_model(header.schema, header.config, 0)?;
    model.stats = header.stats;

    let count = c.u32("blob count")? as usize;
    if count != model.params.len() {
        return Err(Error::ModelFormat(format!(
            "file holds {count} parameters, architecture needs {}",
            model.params.len()
        )));
    }
    for id in model.params.ids().collect::<Vec<_>>() {
        let start = c.pos;
        let name_len = c.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "parameter name")?)
            .map_err(|_| Error::ModelFormat("parameter name is not UTF-8".into()))?
            .to_owned();
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::ModelFormat(format!("absurd shape for {name}")))?;
        let raw = c.take(n, &name)?;
        let end = c.pos;
        let crc = c.u32("blob checksum")?;
        if crc32fast::hash(&body[start..end]) != crc {
            return Err(Error::ModelFormat(format!("checksum mismatch in parameter {name}")));
        }
        let param = model.params.get_mut(id);
        if param.name != name || param.value.shape() != (rows, cols) {
            return Err(Error::ModelFormat(format!(
                "parameter {name} {:?} does not match architecture slot {} {:?}",
                (rows, cols),
                param.name,
                param.value.shape()
            )));
        }
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        param.value = Tensor2::from_vec(rows, cols, data)?;
    }
    if c.pos != body.len() {
        return Err(Error::ModelFormat("trailing bytes after last parameter".into()));
    }
    Ok(model)
}

pub fn save_model(model: &DemandModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DemandModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
