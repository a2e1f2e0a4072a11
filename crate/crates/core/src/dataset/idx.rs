//! Big-endian IDX files as distributed with MNIST.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::learner::Sample;
use crate::{Error, Result, Scalar};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, file: &str, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            field,
            reason: "file truncated".into(),
        })
}

/// Parses an image file and a label file already in memory. Pixels are
/// scaled to `[0, 1]` and the result is power-normalized.
pub fn parse_idx<T: Scalar>(
    images: &[u8],
    images_name: &str,
    labels: &[u8],
    labels_name: &str,
) -> Result<Dataset<T>> {
    let fmt = |file: &str, field: &'static str, reason: String| Error::Format {
        file: file.to_string(),
        field,
        reason,
    };

    let magic = be_u32(images, 0, images_name, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(fmt(images_name, "magic", format!("expected 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = be_u32(images, 4, images_name, "count")? as usize;
    let rows = be_u32(images, 8, images_name, "rows")? as usize;
    let cols = be_u32(images, 12, images_name, "cols")? as usize;
    let dim = rows * cols;
    if n == 0 || dim == 0 {
        return Err(fmt(images_name, "count", "empty image file".into()));
    }
    let pixels = &images[16..];
    if pixels.len() != n * dim {
        return Err(fmt(
            images_name,
            "pixels",
            format!("expected {} bytes for {n} images of {rows}x{cols}, found {}", n * dim, pixels.len()),
        ));
    }

    let magic = be_u32(labels, 0, labels_name, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(fmt(labels_name, "magic", format!("expected 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n_labels = be_u32(labels, 4, labels_name, "count")? as usize;
    if n_labels != n {
        return Err(fmt(labels_name, "count", format!("{n_labels} labels for {n} images")));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != n {
        return Err(fmt(labels_name, "labels", format!("expected {n} bytes, found {}", label_bytes.len())));
    }

    let scale = T::from_f64_lossy(1.0 / 255.0);
    let samples: Vec<Sample<T>> = pixels
        .chunks_exact(dim)
        .zip(label_bytes)
        .map(|(px, &l)| Sample::new(px.iter().map(|&p| T::from_u8(p).unwrap() * scale).collect(), l as usize))
        .collect();
    let classes = *label_bytes.iter().max().unwrap() as usize + 1;
    let mut ds = Dataset::new(samples, dim, classes)?;
    ds.scale = 1.0 / 255.0;
    ds.normalize_power();
    Ok(ds)
}

pub fn load_idx<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &ip.display().to_string(), &labels, &lp.display().to_string())
}

/// Writes `dataset` back as 8-bit IDX, undoing its cumulative scale.
/// A dimension of 784 is written as 28x28, anything else as a single row.
pub fn write_idx<T: Scalar>(
    dataset: &Dataset<T>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (rows, cols) = if dataset.dim() == 784 { (28, 28) } else { (1, dataset.dim()) };
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + n * dataset.dim());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for s in dataset.samples() {
        if s.label > u8::MAX as usize {
            return Err(Error::invalid(format!("label {} does not fit in a byte", s.label)));
        }
        labels.push(s.label as u8);
        for v in &s.data {
            let px = (v.to_f64_lossy() / dataset.scale()).round().clamp(0.0, 255.0);
            images.push(px as u8);
        }
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, images).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| Error::io(lp, e))?;
    Ok(())
}
