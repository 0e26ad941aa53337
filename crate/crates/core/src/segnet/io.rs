//! Weight files (`FVPW`): magic, `u16` version, `u16` class count, `u16`
//! record count, then one record per layer in network order. A record is a
//! `u8` kind, its `u32` shape dims and little-endian `f32` values:
//!
//! * conv (`0`): `cout, cin, 3, 3`, then the kernel;
//! * batch norm (`1`): `channels`, then scale, shift, running mean, running
//!   variance, eps, momentum;
//! * head (`2`): `n_classes, features`, then the 1x1 kernel and the bias.

use std::fs;
use std::path::Path;

use super::{BnStats, SegModel, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"FVPW";
pub const MODEL_VERSION: u16 = 1;

const KIND_CONV: u8 = 0;
const KIND_BN: u8 = 1;
const KIND_HEAD: u8 = 2;

fn put_f32<T: Scalar>(buf: &mut Vec<u8>, values: &[T]) {
    for v in values {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

pub fn write_model<T: Scalar>(m: &SegModel<T>) -> Vec<u8> {
    let layout = m.layout();
    let p = m.params();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layout.n_classes as u16).to_le_bytes());
    buf.extend_from_slice(&((2 * layout.blocks.len() + 1) as u16).to_le_bytes());
    for (b, st) in layout.blocks.iter().zip(m.running_stats()) {
        buf.push(KIND_CONV);
        for d in [b.cout, b.cin, 3, 3] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32(&mut buf, &p[b.weight.clone()]);
        buf.push(KIND_BN);
        buf.extend_from_slice(&(b.cout as u32).to_le_bytes());
        put_f32(&mut buf, &p[b.gamma.clone()]);
        put_f32(&mut buf, &p[b.beta.clone()]);
        put_f32(&mut buf, &st.mean);
        put_f32(&mut buf, &st.var);
        put_f32(&mut buf, &[m.bn_eps(), m.bn_momentum()]);
    }
    buf.push(KIND_HEAD);
    for d in [layout.n_classes, FEATURE_CHANNELS] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32(&mut buf, &p[layout.head_weight.clone()]);
    put_f32(&mut buf, &p[layout.head_bias.clone()]);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated weight file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        raw.chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(T::lit(v as f64))
                } else {
                    Err(Error::format(self.path, "non-finite weight"))
                }
            })
            .collect()
    }

    fn expect(&mut self, kind: u8, dims: &[usize], what: &str) -> Result<()> {
        if self.u8()? != kind {
            return Err(Error::format(self.path, format!("expected a {what} record")));
        }
        for &d in dims {
            if self.u32()? != d {
                return Err(Error::format(self.path, format!("unexpected {what} shape")));
            }
        }
        Ok(())
    }
}

pub fn read_model<T: Scalar>(bytes: &[u8], path: &Path) -> Result<SegModel<T>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).map_err(|_| Error::format(path, "bad magic"))? != MODEL_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_classes = r.u16()? as usize;
    if !(2..=255).contains(&n_classes) {
        return Err(Error::format(path, format!("class count {n_classes} out of range")));
    }
    let records = r.u16()? as usize;
    // the input channel count is read from the first conv record
    let in_channels = {
        let save = r.pos;
        if r.u8()? != KIND_CONV {
            return Err(Error::format(path, "expected a conv record"));
        }
        r.u32()?;
        let c = r.u32()?;
        r.pos = save;
        c
    };
    if in_channels == 0 {
        return Err(Error::format(path, "zero input channels"));
    }
    let layout = super::Layout::new(in_channels, n_classes);
    if records != 2 * layout.blocks.len() + 1 {
        return Err(Error::format(path, format!("{records} layer records")));
    }
    let mut params = vec![T::zero(); layout.total];
    let mut running = Vec::new();
    let mut eps_mom: Option<(T, T)> = None;
    for b in &layout.blocks {
        r.expect(KIND_CONV, &[b.cout, b.cin, 3, 3], "conv")?;
        params[b.weight.clone()].copy_from_slice(&r.f32s(b.weight.len())?);
        r.expect(KIND_BN, &[b.cout], "batch-norm")?;
        params[b.gamma.clone()].copy_from_slice(&r.f32s(b.cout)?);
        params[b.beta.clone()].copy_from_slice(&r.f32s(b.cout)?);
        let mean = r.f32s(b.cout)?;
        let var = r.f32s(b.cout)?;
        let em: Vec<T> = r.f32s(2)?;
        match eps_mom {
            None => eps_mom = Some((em[0], em[1])),
            Some(prev) if prev != (em[0], em[1]) => {
                return Err(Error::format(path, "batch-norm layers disagree on eps/momentum"))
            }
            Some(_) => {}
        }
        running.push(BnStats { mean, var });
    }
    r.expect(KIND_HEAD, &[n_classes, FEATURE_CHANNELS], "head")?;
    params[layout.head_weight.clone()].copy_from_slice(&r.f32s(layout.head_weight.len())?);
    params[layout.head_bias.clone()].copy_from_slice(&r.f32s(n_classes)?);
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last record"));
    }
    let (eps, momentum) = eps_mom.expect("at least one batch-norm layer");
    if !(eps > T::zero()) {
        return Err(Error::format(path, "batch-norm eps must be positive"));
    }
    SegModel::from_parts(in_channels, n_classes, params, running, eps, momentum)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_model<T: Scalar>(m: &SegModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<SegModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes, path)
}
