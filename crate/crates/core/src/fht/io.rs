//! Binary `FHT1` model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FHT1"
//! u64 num_vars
//! u64 left_sizes[num_vars - 1]      preorder split sizes of the tree
//! (f64 lower, f64 upper, u64 n)     per variable
//! per core, preorder:
//!   u64 order, u64 extents[order], f64 data[prod(extents)]
//! ```

use super::Fht;
use crate::basis::IntervalBasis;
use crate::error::{Error, Result};
use crate::linalg::DenseTensor;
use crate::tree::BipartitionTree;

pub const FHT_MAGIC: &[u8; 4] = b"FHT1";

const MAX_ORDER: u64 = 3;

pub fn serialize(f: &Fht) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * f.num_parameters());
    out.extend_from_slice(FHT_MAGIC);
    put_u64(&mut out, f.num_vars() as u64);
    for s in f.tree().left_sizes() {
        put_u64(&mut out, s as u64);
    }
    for b in f.bases() {
        out.extend_from_slice(&b.lower().to_le_bytes());
        out.extend_from_slice(&b.upper().to_le_bytes());
        put_u64(&mut out, b.size() as u64);
    }
    for core in f.cores() {
        put_u64(&mut out, core.order() as u64);
        for &e in core.shape() {
            put_u64(&mut out, e as u64);
        }
        for &v in core.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.err(format!("truncated input while reading {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// Reads a count and checks that at least `count * unit` bytes remain,
    /// so corrupt headers cannot trigger huge allocations.
    fn count(&mut self, unit: usize, what: &str) -> Result<usize> {
        let start = self.pos;
        let v = self.u64(what)?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if v.checked_mul(unit as u64).is_none_or(|need| need > remaining) {
            self.pos = start;
            return self.err(format!("{what} = {v} exceeds the remaining input"));
        }
        Ok(v as usize)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Fht> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != FHT_MAGIC {
        r.pos = 0;
        return r.err("bad magic, expected FHT1");
    }
    let num_vars = r.count(8, "num_vars")?;
    if num_vars == 0 {
        r.pos -= 8;
        return r.err("num_vars must be positive");
    }
    let mut left_sizes = Vec::with_capacity(num_vars - 1);
    for _ in 1..num_vars {
        left_sizes.push(r.u64("split size")? as usize);
    }
    let tree_pos = r.pos;
    let tree = if num_vars == 1 {
        BipartitionTree::single()
    } else {
        BipartitionTree::from_left_sizes(num_vars, &left_sizes).map_err(|e| Error::Parse {
            offset: tree_pos,
            message: e.to_string(),
        })?
    };
    let mut bases = Vec::with_capacity(num_vars);
    for _ in 0..num_vars {
        let pos = r.pos;
        let lo = r.f64("interval lower")?;
        let hi = r.f64("interval upper")?;
        let n = r.u64("basis size")?;
        if n > 1 << 20 {
            r.pos = pos;
            return r.err(format!("basis size {n} unreasonably large"));
        }
        let b = IntervalBasis::new(lo, hi, n as usize).map_err(|e| Error::Parse {
            offset: pos,
            message: e.to_string(),
        })?;
        bases.push(b);
    }
    let mut cores = Vec::with_capacity(tree.nodes().len());
    for _ in 0..tree.nodes().len() {
        let pos = r.pos;
        let order = r.u64("core order")?;
        if order == 0 || order > MAX_ORDER {
            r.pos = pos;
            return r.err(format!("core order {order} not in 1..=3"));
        }
        let mut shape = Vec::with_capacity(order as usize);
        let mut len: u64 = 1;
        for _ in 0..order {
            let e = r.u64("core extent")?;
            len = match len.checked_mul(e) {
                Some(l) => l,
                None => return r.err("core size overflows"),
            };
            shape.push(e as usize);
        }
        let remaining = (bytes.len() - r.pos) as u64;
        if len.checked_mul(8).is_none_or(|b| b > remaining) {
            return r.err(format!("core payload of {len} values exceeds the remaining input"));
        }
        let mut data = Vec::with_capacity(len as usize);
        for _ in 0..len {
            data.push(r.f64("core data")?);
        }
        let core = DenseTensor::new(shape, data).map_err(|e| Error::Parse {
            offset: pos,
            message: e.to_string(),
        })?;
        cores.push(core);
    }
    if r.pos != bytes.len() {
        return r.err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let end = r.pos;
    Fht::new(tree, bases, cores).map_err(|e| Error::Parse {
        offset: end,
        message: e.to_string(),
    })
}
