//! Image files (`FVPI`): magic, `u16` version, `u32` height, `u32` width,
//! `u16` channels, little-endian `f32` pixels in `(h, w, c)` order.
//! Label files (`FVPL`): magic, `u16` version, `u32` height, `u32` width,
//! one `u8` class id per pixel. A dataset directory holds `manifest.json`
//! and `train/`, `test/` subdirectories of `NNNN.fvpi` / `NNNN.fvpl` pairs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::grid::{LabelGrid, RealGrid};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: &[u8; 4] = b"FVPI";
pub const LABEL_MAGIC: &[u8; 4] = b"FVPL";
const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Sample paths are relative to the directory holding the manifest.
    pub root: String,
    pub domain: Domain,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn write_grid<T: Scalar>(x: &RealGrid<T>) -> Result<Vec<u8>> {
    let (h, w, c) = x.shape();
    let c16 = u16::try_from(c).map_err(|_| Error::invalid("too many channels"))?;
    let mut buf = Vec::with_capacity(16 + 4 * x.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&c16.to_le_bytes());
    for v in x.data() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    Ok(buf)
}

fn header<'a>(bytes: &'a [u8], magic: &[u8; 4], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 14 || &bytes[..4] != magic {
        return Err(Error::format(path, "bad magic or truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    Ok((h, w, &bytes[14..]))
}

pub fn read_grid<T: Scalar>(bytes: &[u8], path: &Path) -> Result<RealGrid<T>> {
    let (h, w, rest) = header(bytes, IMAGE_MAGIC, path)?;
    if rest.len() < 2 {
        return Err(Error::format(path, "truncated header"));
    }
    let c = u16::from_le_bytes([rest[0], rest[1]]) as usize;
    let body = &rest[2..];
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if body.len() != 4 * n {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", 4 * n, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    RealGrid::from_vec(h, w, c, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_label(l: &LabelGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(14 + l.data().len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(l.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(l.width() as u32).to_le_bytes());
    buf.extend_from_slice(l.data());
    buf
}

/// Parses a label file, rejecting any class id `>= n_classes`.
pub fn read_label(bytes: &[u8], n_classes: usize, path: &Path) -> Result<LabelGrid> {
    let (h, w, body) = header(bytes, LABEL_MAGIC, path)?;
    if Some(body.len()) != h.checked_mul(w) {
        return Err(Error::format(
            path,
            format!("expected {} label bytes, found {}", h * w, body.len()),
        ));
    }
    if let Some(bad) = body.iter().find(|&&v| v as usize >= n_classes) {
        return Err(Error::format(
            path,
            format!("class id {bad} out of range for {n_classes} classes"),
        ));
    }
    LabelGrid::new(h, w, body.to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_grid<T: Scalar>(x: &RealGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &write_grid(x)?)
}

pub fn load_grid<T: Scalar>(path: impl AsRef<Path>) -> Result<RealGrid<T>> {
    let path = path.as_ref();
    read_grid(&read_file(path)?, path)
}

pub fn save_label(l: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &write_label(l))
}

pub fn load_label(path: impl AsRef<Path>, n_classes: usize) -> Result<LabelGrid> {
    let path = path.as_ref();
    read_label(&read_file(path)?, n_classes, path)
}

fn sample_paths(root: &Path, split: &str, stem: &str) -> (PathBuf, PathBuf) {
    let dir = root.join(split);
    (dir.join(format!("{stem}.fvpi")), dir.join(format!("{stem}.fvpl")))
}

/// Writes every sample plus `manifest.json` under `root`.
pub fn write_dataset<T: Scalar>(
    root: impl AsRef<Path>,
    domain: Domain,
    data: &Dataset<T>,
    seed: u64,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let first = data
        .train
        .first()
        .or(data.test.first())
        .ok_or(Error::EmptyDataset)?;
    let (height, width, channels) = first.image.shape();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (split, samples, names) in [("train", &data.train, &mut train), ("test", &data.test, &mut test)] {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, s) in samples.iter().enumerate() {
            s.image.ensure_shape((height, width, channels), "dataset image")?;
            let stem = format!("{i:04}");
            let (img, lbl) = sample_paths(root, split, &stem);
            save_grid(&s.image, img)?;
            save_label(&s.label, lbl)?;
            names.push(stem);
        }
    }
    let manifest = DatasetManifest {
        root: ".".into(),
        domain,
        height,
        width,
        channels,
        n_classes: data.n_classes,
        seed,
        train,
        test,
    };
    let path = root.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(manifest)
}

/// Loads `root/manifest.json` and every sample it lists.
pub fn load_dataset<T: Scalar>(root: impl AsRef<Path>) -> Result<(DatasetManifest, Dataset<T>)> {
    let root = root.as_ref();
    let path = root.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_slice(&read_file(&path)?)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    let base = root.join(&manifest.root);
    let load = |split: &str, stems: &[String]| -> Result<Vec<Sample<T>>> {
        stems
            .iter()
            .map(|stem| {
                let (img, lbl) = sample_paths(&base, split, stem);
                let image: RealGrid<T> = load_grid(&img)?;
                image
                    .ensure_shape((manifest.height, manifest.width, manifest.channels), "image")
                    .map_err(|e| Error::format(&img, e.to_string()))?;
                let label = load_label(&lbl, manifest.n_classes)?;
                if (label.height(), label.width()) != (manifest.height, manifest.width) {
                    return Err(Error::format(&lbl, "label size differs from manifest"));
                }
                Ok(Sample { image, label })
            })
            .collect()
    };
    let data = Dataset {
        n_classes: manifest.n_classes,
        train: load("train", &manifest.train)?,
        test: load("test", &manifest.test)?,
    };
    Ok((manifest, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorConfig};

    #[test]
    fn grid_roundtrip_bitwise() {
        let x = RealGrid::<f64>::from_fn(4, 8, 2, |h, w, c| (h as f32 * 0.37 - w as f32 + c as f32 * 1e-3) as f64);
        let bytes = write_grid(&x).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 64);
        let back: RealGrid<f64> = read_grid(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn label_validation() {
        let l = LabelGrid::new(2, 2, vec![0, 1, 3, 2]).unwrap();
        let bytes = write_label(&l);
        assert_eq!(read_label(&bytes, 4, Path::new("m")).unwrap(), l);
        assert!(matches!(read_label(&bytes, 3, Path::new("m")), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupted_headers_rejected() {
        let x = RealGrid::<f64>::zeros(2, 2, 1);
        let mut bytes = write_grid(&x).unwrap();
        assert!(read_grid::<f64>(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        bytes[1] = b'Z';
        assert!(read_grid::<f64>(&bytes, Path::new("m")).is_err());
        let l = write_label(&LabelGrid::zeros(2, 2));
        assert!(read_label(&l[..10], 2, Path::new("m")).is_err());
        assert!(read_grid::<f64>(&l, Path::new("m")).is_err());
    }

    #[test]
    fn dataset_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pair = generate(&GeneratorConfig::new(16, 3, 2, 1), 4).unwrap();
        let m = write_dataset(dir.path(), Domain::Target, &pair.target, 4).unwrap();
        assert_eq!(m.train, vec!["0000", "0001"]);
        let (m2, back) = load_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(m2, m);
        assert_eq!(back, pair.target);
        std::fs::remove_file(dir.path().join("test/0000.fvpl")).unwrap();
        assert!(load_dataset::<f64>(dir.path()).is_err());
    }
}
