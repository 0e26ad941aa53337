//! Prompt files: `FVPP` magic, `u16` version, `u8` variant, `u16` r (pad width
//! for the spatial prompt), `u16` channels, then little-endian `f64`
//! parameters. Spectral prompts store the real block followed by the
//! imaginary block. Spatial prompts (variant 3) store `u16` height and width
//! after the channel count, then their border values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{FvpVariant, Prompt, SpatialPrompt, SpectrumPrompt, VisualPrompt};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PROMPT_MAGIC: &[u8; 4] = b"FVPP";
pub const PROMPT_VERSION: u16 = 1;

fn variant_code<T: Scalar>(p: &Prompt<T>) -> u8 {
    match p {
        Prompt::Spectrum(s) => match s.variant() {
            FvpVariant::Complex => 0,
            FvpVariant::Amplitude => 1,
            FvpVariant::Phase => 2,
        },
        Prompt::Spatial(_) => 3,
    }
}

fn u16_field(v: usize, what: &str) -> Result<[u8; 2]> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::invalid(format!("{what} {v} does not fit the prompt header")))
}

pub fn write_prompt<T: Scalar>(p: &Prompt<T>, out: &mut impl Write) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PROMPT_MAGIC);
    buf.extend_from_slice(&PROMPT_VERSION.to_le_bytes());
    buf.push(variant_code(p));
    let header = |buf: &mut Vec<u8>, a: usize, b: usize| -> Result<()> {
        buf.extend_from_slice(&u16_field(a, "size")?);
        buf.extend_from_slice(&u16_field(b, "channels")?);
        Ok(())
    };
    let to_io = |e: Error| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string());
    let values: &[T] = match p {
        Prompt::Spectrum(s) => {
            header(&mut buf, s.r(), s.channels()).map_err(to_io)?;
            s.coeffs()
        }
        Prompt::Spatial(s) => {
            let (h, w, c) = s.shape();
            header(&mut buf, s.pad(), c).map_err(to_io)?;
            buf.extend_from_slice(&u16_field(h, "height").map_err(to_io)?);
            buf.extend_from_slice(&u16_field(w, "width").map_err(to_io)?);
            s.learnable()
        }
    };
    for v in values {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }
}

pub fn read_prompt<T: Scalar>(input: &mut impl Read, path: &Path) -> Result<Prompt<T>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason);
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4) != Some(PROMPT_MAGIC.as_slice()) {
        return Err(bad("not a prompt file (bad magic)"));
    }
    let version = cur.u16().ok_or_else(|| bad("truncated header"))?;
    if version != PROMPT_VERSION {
        return Err(bad(&format!("unsupported prompt version {version}")));
    }
    let code = *cur.take(1).ok_or_else(|| bad("truncated header"))?.first().unwrap();
    let size = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
    let channels = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
    let spatial_dims = if code == 3 {
        let h = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
        let w = cur.u16().ok_or_else(|| bad("truncated header"))? as usize;
        Some((h, w))
    } else {
        None
    };
    let count = match (code, spatial_dims) {
        (0..=2, _) => 2 * size * size * channels,
        (3, Some((h, w))) => {
            if 2 * size > h.min(w) {
                return Err(bad("pad width exceeds image size"));
            }
            channels * (h * w - (h - 2 * size) * (w - 2 * size))
        }
        _ => return Err(bad(&format!("unknown prompt variant code {code}"))),
    };
    let body = cur
        .take(count * 8)
        .ok_or_else(|| bad("truncated parameter block"))?;
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after parameter block"));
    }
    let values: Vec<T> = body
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let prompt = match (code, spatial_dims) {
        (3, Some((h, w))) => SpatialPrompt::from_parts(size, h, w, channels, values).map(Prompt::Spatial),
        _ => {
            let variant = [FvpVariant::Complex, FvpVariant::Amplitude, FvpVariant::Phase][code as usize];
            SpectrumPrompt::from_parts(size, channels, variant, values).map(Prompt::Spectrum)
        }
    };
    prompt.map_err(|e| bad(&e.to_string()))
}

pub fn save_prompt<T: Scalar>(p: &Prompt<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_prompt(p, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_prompt<T: Scalar>(path: impl AsRef<Path>) -> Result<Prompt<T>> {
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_prompt(&mut f, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptKind;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(kind in 0usize..4, size in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let kind = [PromptKind::Complex, PromptKind::Amplitude, PromptKind::Phase, PromptKind::Svp][kind];
            let mut p = Prompt::<f64>::new(kind, size, 12, 10, 1).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for v in p.learnable_mut() {
                *v = rng.gen_range(-5.0..5.0);
            }
            let mut buf = Vec::new();
            write_prompt(&p, &mut buf).unwrap();
            let back: Prompt<f64> = read_prompt(&mut buf.as_slice(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Prompt::<f64>::new(PromptKind::Complex, 2, 4, 4, 1).unwrap();
        let mut buf = Vec::new();
        write_prompt(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 1 + 2 + 2 + 8 * 8);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_prompt::<f64>(&mut bad.as_slice(), Path::new("m")),
            Err(Error::Format { .. })
        ));
        let short = &buf[..buf.len() - 3];
        assert!(read_prompt::<f64>(&mut &short[..], Path::new("m")).is_err());
    }
}
