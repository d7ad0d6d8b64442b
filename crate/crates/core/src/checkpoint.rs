//! Binary parameter container.
//!
//! Layout: the 9-byte magic `CRGANCKPT`, a little-endian `u32` version, then
//! one record per tensor until end of file: `u32` name length, name bytes
//! (UTF-8), `u32` rank, `rank × u64` dims, then `numel × f64` values. All
//! integers and floats are little-endian. Spectral-norm vectors are stored
//! as records named `<weight>.sn_u`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Model, SpectralState};

pub const MAGIC: &[u8; 9] = b"CRGANCKPT";
pub const VERSION: u32 = 1;
const SN_SUFFIX: &str = ".sn_u";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn model_records(model: &Model) -> Vec<Record> {
    let mut out = Vec::new();
    for (p, st) in model.params().iter().zip(model.spectral_states()) {
        out.push(Record {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
        if let Some(st) = st {
            out.push(Record {
                name: format!("{}{SN_SUFFIX}", p.name),
                shape: vec![st.u.len()],
                data: st.u.clone(),
            });
        }
    }
    out
}

/// Overwrites `model`'s parameters (and spectral vectors) from records.
/// Every parameter must be present with a matching shape.
pub fn load_into(model: &mut Model, records: &[Record]) -> Result<()> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let names: Vec<(String, Vec<usize>)> = model.params().iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    for (i, (name, shape)) in names.iter().enumerate() {
        let r = find(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if &r.shape != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {:?} != {:?}", r.shape, shape)));
        }
        model.set_param(name, r.data.clone())?;
        if let Some(st) = model.spectral_mut()[i].as_mut() {
            let sn = find(&format!("{name}{SN_SUFFIX}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing spectral vector for {name}")))?;
            if sn.data.len() != st.u.len() {
                return Err(Error::Checkpoint(format!("{name}: spectral vector length mismatch")));
            }
            *st = SpectralState { u: sn.data.clone() };
        }
    }
    Ok(())
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(&model_records(model)))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
