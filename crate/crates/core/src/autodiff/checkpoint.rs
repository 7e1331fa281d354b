//! Binary checkpoint: `RPCK`, u32 version, string metadata, then named
//! f64 tensors (parameters followed by optional Adam moments). All integers
//! and floats are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RPCK";
const VERSION: u32 = 1;
const MAX_DIMS: u32 = 8;
const MAX_STRING: u32 = 1 << 20;

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_tensor(w: &mut impl Write, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_str(w, name)?;
    put_u32(w, shape.len() as u32)?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
    remaining: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: u64) -> Result<Vec<u8>> {
        if n > self.remaining {
            return Err(Error::Truncated {
                expected: n,
                found: self.remaining,
            });
        }
        let mut buf = vec![0u8; n as usize];
        self.inner.read_exact(&mut buf)?;
        self.remaining -= n;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        if n > MAX_STRING {
            return Err(Error::Parse(format!("string of length {n}")));
        }
        String::from_utf8(self.bytes(n as u64)?).map_err(|e| Error::Parse(e.to_string()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let ndim = self.u32()?;
        if ndim > MAX_DIMS {
            return Err(Error::Parse(format!("tensor {name} has {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut count: u64 = 1;
        for _ in 0..ndim {
            let d = self.u64()?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::DimOverflow(format!("tensor {name}")))?;
            shape.push(d as usize);
        }
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::DimOverflow(format!("tensor {name}")))?;
        let raw = self.bytes(bytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(shape, data)?))
    }
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            put_str(&mut w, k)?;
            put_str(&mut w, v)?;
        }
        w.write_all(&self.params.step().to_le_bytes())?;
        put_u32(&mut w, self.params.len() as u32)?;
        for (name, t) in self.params.iter() {
            put_tensor(&mut w, name, t.shape(), t.data())?;
        }
        for (name, m, v) in self.params.optimizer_state() {
            let shape = self.params.get(name).unwrap().shape();
            put_tensor(&mut w, name, shape, m)?;
            put_tensor(&mut w, name, shape, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let len = file.metadata()?.len();
        let mut r = Reader {
            inner: BufReader::new(file),
            remaining: len,
        };
        if r.bytes(4)
            .map_err(|_| Error::BadMagic(path.display().to_string()))?
            != MAGIC
        {
            return Err(Error::BadMagic(path.display().to_string()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let step = r.u64()?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        let mut names = Vec::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            params.insert(&name, t)?;
            names.push(name);
        }
        for name in names {
            let (_, m) = r.tensor()?;
            let (_, v) = r.tensor()?;
            params.restore_state(&name, m.into_data(), v.into_data())?;
        }
        params.set_step(step);
        if r.remaining != 0 {
            return Err(Error::Parse(format!("{} trailing bytes", r.remaining)));
        }
        Ok(Checkpoint { meta, params })
    }
}
