//! Binary weight files: magic "TXGW", one schema-version byte, then named
//! f32 tensors with explicit shapes, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use texguard_core::{ModelParams, Tensor};

pub const MAGIC: &[u8; 4] = b"TXGW";
pub const SCHEMA_VERSION: u8 = texguard_core::params::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("not a weight file: bad magic bytes")]
    BadMagic,
    #[error("unsupported weight schema version {found} (expected {SCHEMA_VERSION})")]
    BadVersion { found: u8 },
    #[error("weight file is truncated")]
    Truncated,
    #[error("weight file field is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_params(params: &ModelParams<f32>, path: &Path) -> Result<(), WeightsError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(SCHEMA_VERSION);
    let count = u32::try_from(params.len())
        .map_err(|_| WeightsError::Malformed("too many entries".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| WeightsError::Malformed(format!("name too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(tensor.shape().len())
            .map_err(|_| WeightsError::Malformed(format!("rank too large: {name}")))?;
        buf.push(rank);
        for &d in tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| WeightsError::Malformed(format!("dimension too large: {name}")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.pos + n > self.buf.len() {
            return Err(WeightsError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_params(path: &Path) -> Result<ModelParams<f32>, WeightsError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u8()?;
    if version != SCHEMA_VERSION {
        return Err(WeightsError::BadVersion { found: version });
    }
    let count = r.u32()?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| WeightsError::Malformed("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data)
            .map_err(|e| WeightsError::Malformed(format!("{name}: {e}")))?;
        params.insert(&name, tensor);
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::Malformed("trailing bytes".into()));
    }
    Ok(params)
}
