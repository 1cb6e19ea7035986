//! IDX binary files: a big-endian magic (`0x00000801` for unsigned-byte
//! vectors, `0x00000803` for unsigned-byte rank-3 arrays), one big-endian
//! `u32` per dimension, then the row-major payload.
//!
//! Gzip-compressed files (as distributed for MNIST) are detected by their
//! `1f 8b` prefix and inflated transparently.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{Layout, Sample, TaskStream};
use crate::error::{Error, Result};

pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.rows * self.cols;
        &self.pixels[i * d..(i + 1) * d]
    }
}

/// Image file plus matching label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxPair {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl IdxPair {
    pub fn new(images: impl Into<PathBuf>, labels: impl Into<PathBuf>) -> Self {
        Self {
            images: images.into(),
            labels: labels.into(),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
}

/// Splits header and payload, checking magic and exact payload length.
fn parse(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Idx(format!(
            "bad magic {found:#010x}, expected {magic:#010x}"
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Idx(format!(
            "truncated payload: {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Idx(format!(
            "{} trailing bytes after declared payload",
            payload.len() - expected
        )));
    }
    Ok((dims, payload))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (_, payload) = parse(bytes, LABEL_MAGIC)?;
    Ok(payload.to_vec())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, payload) = parse(bytes, IMAGE_MAGIC)?;
    Ok(IdxImages {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels: payload.to_vec(),
    })
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_labels(&read_maybe_gz(path.as_ref())?)
}

pub fn read_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_images(&read_maybe_gz(path.as_ref())?)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend(IMAGE_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(&images.pixels);
    out
}

/// Reads a pair into per-class sample lists (first-occurrence order),
/// keeping at most `cap` samples per class.
fn per_class(pair: &IdxPair, num_classes: usize, cap: Option<usize>) -> Result<(usize, Vec<Vec<Sample>>)> {
    let images = read_images(&pair.images)?;
    let labels = read_labels(&pair.labels)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let d = images.rows * images.cols;
    let mut classes: Vec<Vec<Sample>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if cap.is_some_and(|k| classes[label].len() >= k) {
            continue;
        }
        let features = images.image(i).iter().map(|&p| p as f64 / 255.0).collect();
        classes[label].push(Sample::new(features, label));
    }
    Ok((d, classes))
}

/// Builds a stream from IDX train/test files. Classes go to tasks in
/// ascending label order; at most `subsample_per_class` training samples
/// are kept per class. Pixels are scaled to `[0, 1]`.
pub fn load_idx_stream(
    train: &IdxPair,
    test: &IdxPair,
    layout: Layout,
    subsample_per_class: usize,
) -> Result<TaskStream> {
    if subsample_per_class == 0 {
        return Err(Error::InvalidArgument("subsample_per_class must be positive".into()));
    }
    let n = layout.num_classes();
    let (d_train, train) = per_class(train, n, Some(subsample_per_class))?;
    let (d_test, test) = per_class(test, n, None)?;
    if d_train != d_test {
        return Err(Error::Dimension {
            expected: d_train,
            got: d_test,
        });
    }
    TaskStream::from_class_samples(layout, d_train, 0, train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_header_accepted() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        assert_eq!(parse_labels(&bytes).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn image_header_accepted() {
        let img = IdxImages {
            count: 2,
            rows: 28,
            cols: 28,
            pixels: (0..2 * 784).map(|i| (i % 256) as u8).collect(),
        };
        let bytes = encode_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = parse_images(&bytes).unwrap();
        assert_eq!(back.count, 2);
        assert_eq!(back.rows * back.cols, 784);
        assert_eq!(back, img);
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 5];
        assert!(matches!(parse_labels(&bytes), Err(Error::Idx(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 4, 1, 2];
        let err = parse_labels(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        assert!(parse_labels(&[0, 0, 8]).is_err());
    }
}
