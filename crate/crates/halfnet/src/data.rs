//! IDX-format ingestion of MNIST and FashionMNIST.
//!
//! Files are the standard big-endian IDX quartet laid out as
//! `<root>/<name>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`, optionally
//! gzip-compressed (a `.gz` suffix or gzip magic is detected automatically).
//! Pixels are normalized to [0,1] by /255 at load time; nothing is shuffled
//! here — instance order is owned by the training loop's seed.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_prefix(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// One split of a dataset: images in [0,1] and labels in 0..=9.
pub struct Dataset {
    /// N x rows x cols.
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub name: String,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-image feature count (rows * cols).
    pub fn feature_dim(&self) -> usize {
        self.images.shape()[1] * self.images.shape()[2]
    }

    /// View the images as an N x d matrix (row-major flatten, pixel (r,c) of
    /// image i lands at [i, rows*r + c]).
    pub fn flatten_for_dense(&self) -> Result<Tensor> {
        let n = self.images.shape()[0];
        let d = self.feature_dim();
        self.images.clone().reshape(vec![n, d])
    }

    /// Load `<root>/<name>/` for the given split.
    pub fn load(root: &Path, name: &str, split: Split) -> Result<Dataset> {
        let dir = root.join(name);
        let prefix = split.file_prefix();
        let images = load_idx_images(&locate(&dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let labels = load_idx_labels(&locate(&dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        if images.shape()[0] != labels.len() {
            return Err(Error::Format {
                path: dir,
                detail: format!(
                    "{} images but {} labels",
                    images.shape()[0],
                    labels.len()
                ),
            });
        }
        Ok(Dataset {
            images,
            labels,
            name: name.to_string(),
            split,
        })
    }
}

fn locate(dir: &Path, base: &str) -> Result<PathBuf> {
    let plain = dir.join(base);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{base}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Format {
        path: plain,
        detail: "file not found (nor its .gz variant)".to_string(),
    })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoded = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut decoded)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        return Ok(decoded);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parse an IDX image file into an N x rows x cols tensor in [0,1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read_all(path)?;
    let fail = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    if bytes.len() < 16 {
        return Err(fail(format!("header needs 16 bytes, file has {}", bytes.len())));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(fail(format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(&bytes, 4) as usize;
    let rows = be_u32(&bytes, 8) as usize;
    let cols = be_u32(&bytes, 12) as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes, got {}", bytes.len())));
    }
    let data: Vec<f64> = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, rows, cols], data)
}

/// Parse an IDX label file; every label must be in 0..=9.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let fail = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    if bytes.len() < 8 {
        return Err(fail(format!("header needs 8 bytes, file has {}", bytes.len())));
    }
    let magic = be_u32(&bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(fail(format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(fail(format!("expected {} bytes, got {}", 8 + n, bytes.len())));
    }
    let labels = bytes[8..].to_vec();
    for (i, &l) in labels.iter().enumerate() {
        if l > 9 {
            return Err(fail(format!("label {l} out of range at index {i}")));
        }
    }
    Ok(labels)
}
