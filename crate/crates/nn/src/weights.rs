//! Binary weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EREC"            4 bytes magic
//! version           u32 (currently 1)
//! dtype             u8  (32 or 64)
//! layer count       u32
//! per layer:
//!   kind tag        u8
//!   tensor count    u32
//!   per tensor:
//!     rank          u32
//!     dims          u64 × rank
//!     values        dtype × product(dims)
//! ```
//!
//! Parameter-free layers are written with a tensor count of zero so the
//! layer count always matches the architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::layers::LayerKind;
use crate::network::Sequential;
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"EREC";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(net: &Sequential<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.tag());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.push(layer.kind().tag());
        let state = layer.state();
        out.extend_from_slice(&(state.len() as u32).to_le_bytes());
        for t in state {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

pub fn write<T: Scalar, W: Write>(net: &Sequential<T>, mut writer: W) -> Result<()> {
    writer.write_all(&encode(net))?;
    Ok(())
}

pub fn save<T: Scalar>(net: &Sequential<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(net, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Format(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load weights into an already-built network of the same architecture.
pub fn decode_into<T: Scalar>(net: &mut Sequential<T>, bytes: &[u8]) -> Result<()> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let dtype = DType::from_tag(c.u8()?).ok_or_else(|| NnError::Format("unknown dtype tag".into()))?;
    if dtype != T::DTYPE {
        return Err(NnError::Format(format!(
            "file holds {dtype:?} values, network uses {:?}",
            T::DTYPE
        )));
    }
    let count = c.u32()? as usize;
    if count != net.layers().len() {
        return Err(NnError::Format(format!(
            "file has {count} layers, network {} has {}",
            net.name(),
            net.layers().len()
        )));
    }
    // Decode fully before touching the network so a bad file leaves it intact.
    let mut staged: Vec<Vec<Vec<T>>> = Vec::with_capacity(count);
    for layer in net.layers() {
        let kind = LayerKind::from_tag(c.u8()?).ok_or_else(|| NnError::Format("unknown layer kind".into()))?;
        if kind != layer.kind() {
            return Err(NnError::Format(format!(
                "{}: file has {kind:?}, network has {:?}",
                layer.name(),
                layer.kind()
            )));
        }
        let state = layer.state();
        let n_tensors = c.u32()? as usize;
        if n_tensors != state.len() {
            return Err(NnError::Format(format!(
                "{}: {n_tensors} tensors in file, {} expected",
                layer.name(),
                state.len()
            )));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for t in state {
            let rank = c.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(c.u64()? as usize);
            }
            if dims != t.shape() {
                return Err(NnError::Format(format!(
                    "{}: tensor shape {dims:?} in file, {:?} expected",
                    layer.name(),
                    t.shape()
                )));
            }
            let raw = c.take(t.len() * T::BYTES)?;
            tensors.push(raw.chunks_exact(T::BYTES).map(T::read_le).collect());
        }
        staged.push(tensors);
    }
    if c.pos != bytes.len() {
        return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    for (layer, tensors) in net.layers_mut().iter_mut().zip(staged) {
        for (dst, src) in layer.state_mut().into_iter().zip(tensors) {
            dst.data_mut().copy_from_slice(&src);
        }
    }
    Ok(())
}

pub fn read_into<T: Scalar, R: Read>(net: &mut Sequential<T>, mut reader: R) -> Result<()> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_into(net, &bytes)
}

pub fn load_into<T: Scalar>(net: &mut Sequential<T>, path: impl AsRef<Path>) -> Result<()> {
    read_into(net, BufReader::new(File::open(path)?))
}
