//! The `AVF1` tensor archive: checkpoints, score/label matrices and feature
//! caches all share it.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AVF1"                       4-byte magic
//! u32 entry count
//! per entry:
//!   u32 name length, name bytes (UTF-8)
//!   u8  dtype tag              0 = f64, 1 = f32, 2 = u8
//!   u32 rank
//!   u64 extent x rank
//!   payload                    row-major, product(extents) elements
//! ```
//!
//! Nothing may follow the last entry.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::nn::{ParamKey, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"AVF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
    U8 = 2,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::U8),
            t => Err(Error::UnknownDtype(t)),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F64(_) => Dtype::F64,
            Payload::F32(_) => Dtype::F32,
            Payload::U8(_) => Dtype::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    /// Values widened to `f64`. Byte payloads are rejected.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.payload {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Payload::U8(_) => {
                return Err(Error::InvalidArgument(format!(
                    "entry `{}` holds bytes, not a tensor",
                    self.name
                )))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }
}

/// Ordered collection of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<Entry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, replacing any existing entry with the same name.
    pub fn push(&mut self, entry: Entry) -> Result<()> {
        let n: usize = entry.shape.iter().product();
        if n != entry.payload.len() {
            return Err(Error::Shape(format!(
                "entry `{}`: shape {:?} vs {} values",
                entry.name,
                entry.shape,
                entry.payload.len()
            )));
        }
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
        Ok(())
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload: Payload::F64(t.data().to_vec()),
        })
        .expect("tensor shape is consistent");
    }

    /// Stores a tensor narrowed to `f32` (feature caches).
    pub fn put_tensor_f32(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload: Payload::F32(t.data().iter().map(|&x| x as f32).collect()),
        })
        .expect("tensor shape is consistent");
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        let shape = vec![bytes.len()];
        self.push(Entry {
            name: name.into(),
            shape,
            payload: Payload::U8(bytes),
        })
        .expect("rank-1 byte entry");
    }

    pub fn put_labels(&mut self, name: impl Into<String>, labels: &LabelMatrix) {
        self.push(Entry {
            name: name.into(),
            shape: vec![labels.rows(), labels.cols()],
            payload: Payload::U8(labels.data().to_vec()),
        })
        .expect("label shape is consistent");
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.require(name)?.to_tensor()
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.require(name)?.payload {
            Payload::U8(b) => Ok(b),
            _ => Err(Error::InvalidArgument(format!("entry `{name}` is not a byte entry"))),
        }
    }

    pub fn labels(&self, name: &str) -> Result<LabelMatrix> {
        let e = self.require(name)?;
        match (&e.payload, e.shape.as_slice()) {
            (Payload::U8(b), &[rows, cols]) => LabelMatrix::new(rows, cols, b.clone()),
            _ => Err(Error::InvalidArgument(format!("entry `{name}` is not a label matrix"))),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&u32_len(self.entries.len())?.to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&u32_len(e.name.len())?.to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.payload.dtype() as u8])?;
            w.write_all(&u32_len(e.shape.len())?.to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &e.payload {
                Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Payload::U8(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let count = read_u32(&mut r, "entry count")?;
        let mut entries = Vec::new();
        for i in 0..count {
            let ctx = |what: &str| format!("entry {i} {what}");
            let name_len = read_u32(&mut r, &ctx("name length"))? as usize;
            let name_bytes = read_vec(&mut r, name_len, &ctx("name"))?;
            let name = String::from_utf8(name_bytes).map_err(|_| Error::InvalidArgument(ctx("name is not UTF-8")))?;
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag, &ctx("dtype"))?;
            let dtype = Dtype::from_tag(tag[0])?;
            let rank = read_u32(&mut r, &ctx("rank"))? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b, &ctx("extents"))?;
                shape.push(
                    usize::try_from(u64::from_le_bytes(b))
                        .map_err(|_| Error::InvalidArgument(ctx("extent overflows usize")))?,
                );
            }
            let n_bytes = shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::InvalidArgument(ctx("payload size overflows")))?;
            let raw = read_vec(&mut r, n_bytes, &format!("payload of `{name}`"))?;
            let payload = match dtype {
                Dtype::F64 => Payload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::F32 => Payload::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::U8 => Payload::U8(raw),
            };
            entries.push(Entry { name, shape, payload });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::TrailingBytes(rest.len()));
        }
        Ok(Archive { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Archive::read_from(BufReader::new(f))
    }

    /// Adds every tensor of `params` under `prefix/layer/slot`.
    pub fn put_params(&mut self, prefix: &str, params: &ParamStore) {
        for (key, t) in params.iter() {
            self.put_tensor(format!("{prefix}/{key}"), t);
        }
    }

    /// Collects the entries under `prefix/` back into a parameter store.
    pub fn params(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let lead = format!("{prefix}/");
        for e in &self.entries {
            if let Some(rest) = e.name.strip_prefix(&lead) {
                let key = ParamKey::parse(rest)
                    .ok_or_else(|| Error::InvalidArgument(format!("bad parameter entry `{}`", e.name)))?;
                store.insert(key, e.to_tensor()?);
            }
        }
        Ok(store)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{n} does not fit in u32")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated {
            context: context.to_string(),
        },
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read, context: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, context)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads exactly `n` bytes without trusting `n` for the allocation.
fn read_vec(r: &mut impl Read, n: usize, context: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Truncated {
            context: context.to_string(),
        });
    }
    Ok(buf)
}

/// Writes a parameter checkpoint.
pub fn save_params(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    let mut a = Archive::new();
    a.put_params("param", params);
    a.save(path)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore> {
    Archive::load(path)?.params("param")
}
