//! Binary parameter checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//! `"IHDRCKPT"`, version, role tag, tensor count, then per tensor its rank,
//! its dims and its row-major values as little-endian `f32`. Tensors are
//! stored weight then bias for each layer in order.

use std::io::{Read, Write};

use super::net::{ConvLayer, Role, ToyNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IHDRCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &ToyNet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, net.role().tag(), (2 * net.layers().len()) as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in net.layers() {
        write_tensor(&mut w, &l.weight_shape(), &l.weight)?;
        write_tensor(&mut w, &[l.cout], &l.bias)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, dims: &[usize], values: &[f64]) -> Result<()> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * values.len());
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::parse(self.offset, format!("truncated checkpoint reading {what}")),
            _ => Error::Io(e),
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

const MAX_TENSOR_VALUES: usize = 1 << 24;

pub fn read_checkpoint<R: Read>(r: R) -> Result<ToyNet> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes(8, "magic")? != MAGIC {
        return Err(Error::parse(0, "not a checkpoint (bad magic)"));
    }
    let at = c.offset;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(at, format!("unsupported checkpoint version {version}")));
    }
    let at = c.offset;
    let tag = c.u32("role")?;
    let role = Role::from_tag(tag).ok_or_else(|| Error::parse(at, format!("unknown role tag {tag}")))?;
    let at = c.offset;
    let count = c.u32("tensor count")? as usize;
    if count % 2 != 0 || count > 64 {
        return Err(Error::parse(at, format!("implausible tensor count {count}")));
    }
    let mut layers = Vec::with_capacity(count / 2);
    for _ in 0..count / 2 {
        let (wdims, weight) = read_tensor(&mut c)?;
        let at = c.offset;
        let (bdims, bias) = read_tensor(&mut c)?;
        let [cout, cin, k1, k2] = wdims[..] else {
            return Err(Error::parse(at, format!("weight of rank {} where 4 was expected", wdims.len())));
        };
        if k1 != k2 || bdims != [cout] {
            return Err(Error::parse(at, format!("weight {wdims:?} and bias {bdims:?} disagree")));
        }
        layers.push(ConvLayer {
            cin,
            cout,
            kernel: k1,
            weight,
            bias,
        });
    }
    ToyNet::from_layers(role, layers)
}

fn read_tensor<R: Read>(c: &mut Cursor<R>) -> Result<(Vec<usize>, Vec<f64>)> {
    let at = c.offset;
    let rank = c.u32("tensor rank")? as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::parse(at, format!("unsupported tensor rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(c.u32("tensor dims")? as usize);
    }
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n <= MAX_TENSOR_VALUES);
    let n = n.ok_or_else(|| Error::parse(at, format!("tensor dims {dims:?} too large")))?;
    let raw = c.bytes(4 * n, "tensor values")?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok((dims, values))
}

pub fn save(net: &ToyNet, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(net, std::io::BufWriter::new(f))
}

pub fn load(path: &std::path::Path) -> Result<ToyNet> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
