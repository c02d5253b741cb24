//! Versioned binary model format.
//!
//! Layout: magic, version, head kind, grid size, layer dimensions, then all
//! parameters as little-endian f64 bits in flat layout order. Round trips
//! are bit-exact.

use std::fs;
use std::path::Path;

use super::head::HeadKind;
use super::TwoCatsModel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"2CATSMOD";
const VERSION: u32 = 1;

pub(crate) fn save(model: &TwoCatsModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match model.head.kind {
        HeadKind::Gaussian => 0,
        HeadKind::Logistic => 1,
    });
    buf.extend_from_slice(&(model.grid_size as u32).to_le_bytes());
    let widths = model.mlp.widths();
    buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        buf.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    let pv = model.to_param_vector();
    buf.extend_from_slice(&(pv.len() as u64).to_le_bytes());
    for x in pv.values() {
        buf.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub(crate) fn load(path: &Path) -> Result<TwoCatsModel> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(Error::Parse(format!(
            "{} is not a model file (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!(
            "unsupported model format version {version}"
        )));
    }
    let kind = match cur.u8()? {
        0 => HeadKind::Gaussian,
        1 => HeadKind::Logistic,
        k => return Err(Error::Parse(format!("unknown head kind tag {k}"))),
    };
    let grid_size = cur.u32()? as usize;
    if grid_size < 2 {
        return Err(Error::Parse(format!("invalid grid size {grid_size}")));
    }
    let n_widths = cur.u32()? as usize;
    if !(2..=64).contains(&n_widths) {
        return Err(Error::Parse(format!("implausible layer count {n_widths}")));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(cur.u32()? as usize);
    }
    if widths[0] != 2 || *widths.last().unwrap() != 1 {
        return Err(Error::Parse(format!(
            "layer widths {widths:?} are not a 2->...->1 network"
        )));
    }
    let mut model = TwoCatsModel::with_widths(&widths, kind, 0, grid_size);
    let n_params = cur.u64()? as usize;
    if n_params != model.n_params() {
        return Err(Error::Parse(format!(
            "parameter count {n_params} does not match architecture ({})",
            model.n_params()
        )));
    }
    let mut flat = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        flat.push(f64::from_bits(cur.u64()?));
    }
    if cur.pos != buf.len() {
        return Err(Error::Parse("trailing bytes in model file".into()));
    }
    model.set_flat(&flat)?;
    Ok(model)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse("model file truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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
