//! Image and vector dataset files.
//!
//! Two formats are read:
//!
//! * MNIST IDX: big-endian `u32` magic (`0x00000803` images, `0x00000801`
//!   labels), big-endian `u32` dimensions, then `u8` payload.
//! * Flat vector files: the 8 ASCII bytes `PGVEC001`, little-endian `u64`
//!   count, little-endian `u64` dimension, then `count × dim` little-endian
//!   `f64` values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const FLAT_MAGIC: &[u8; 8] = b"PGVEC001";

/// Decoded IDX image file; pixels stay as raw bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Idx(format!(
                "truncated {}: needed {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "IDX image file",
    };
    let magic = r.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!(
            "bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let size = rows * cols;
    let images = (0..count)
        .map(|_| r.take(size).map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "IDX label file",
    };
    let magic = r.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!(
            "bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let count = r.u32_be()? as usize;
    Ok(r.take(count)?.to_vec())
}

/// Encodes images in IDX format. Every image must have `rows × cols` bytes.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size mismatch");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Nearest-neighbour resize of a row-major image.
pub fn resize_nearest(
    pixels: &[f64],
    rows: usize,
    cols: usize,
    out_rows: usize,
    out_cols: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        let sr = r * rows / out_rows;
        for c in 0..out_cols {
            let sc = c * cols / out_cols;
            out.push(pixels[sr * cols + sc]);
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads MNIST images scaled to `[0, 1]`, optionally checking them against a
/// label file and resizing (nearest neighbour) to `resize = (rows, cols)`.
pub fn load_mnist_idx(
    images: &Path,
    labels: Option<&Path>,
    resize: Option<(usize, usize)>,
) -> Result<Vec<Vec<f64>>> {
    let imgs = parse_idx_images(&read(images)?)?;
    if let Some(lp) = labels {
        let labels = parse_idx_labels(&read(lp)?)?;
        if labels.len() != imgs.images.len() {
            return Err(Error::Idx(format!(
                "{} images but {} labels",
                imgs.images.len(),
                labels.len()
            )));
        }
    }
    Ok(idx_to_vectors(&imgs, resize))
}

/// Scales pixels to `[0, 1]` and optionally resizes.
pub fn idx_to_vectors(imgs: &IdxImages, resize: Option<(usize, usize)>) -> Vec<Vec<f64>> {
    imgs.images
        .iter()
        .map(|img| {
            let v: Vec<f64> = img.iter().map(|&b| f64::from(b) / 255.0).collect();
            match resize {
                Some((r, c)) if (r, c) != (imgs.rows, imgs.cols) => {
                    resize_nearest(&v, imgs.rows, imgs.cols, r, c)
                }
                _ => v,
            }
        })
        .collect()
}

pub fn encode_flat_vectors(vectors: &[Vec<f64>]) -> Result<Vec<u8>> {
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("flat vector file needs equal-length vectors".into()));
    }
    let mut out = Vec::with_capacity(24 + vectors.len() * dim * 8);
    out.extend_from_slice(FLAT_MAGIC);
    out.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for v in vectors {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_flat_vectors(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "flat vector file",
    };
    let magic = r.take(8)?;
    if magic != FLAT_MAGIC {
        return Err(Error::Idx(format!(
            "bad flat vector magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(FLAT_MAGIC).expect("ascii")
        )));
    }
    let count = r.u64_le()? as usize;
    let dim = r.u64_le()? as usize;
    (0..count)
        .map(|_| {
            let raw = r.take(dim.checked_mul(8).ok_or_else(|| Error::Idx("dimension overflow".into()))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        })
        .collect()
}

pub fn load_flat_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_flat_vectors(&read(path)?)
}

pub fn save_flat_vectors(path: &Path, vectors: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, encode_flat_vectors(vectors)?).map_err(|e| Error::io(path, e))
}

/// Loads either format, choosing by the file's leading bytes.
pub fn load_vectors(path: &Path, resize: Option<(usize, usize)>) -> Result<Vec<Vec<f64>>> {
    let bytes = read(path)?;
    if bytes.starts_with(FLAT_MAGIC) {
        parse_flat_vectors(&bytes)
    } else {
        Ok(idx_to_vectors(&parse_idx_images(&bytes)?, resize))
    }
}
