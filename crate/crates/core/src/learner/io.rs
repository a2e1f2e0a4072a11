//! Flat binary model files: magic `EDGM`, `u32` classes, `u32` dim, then
//! `classes * (dim + 1)` little-endian `f64` weights, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::LinearModel;
use crate::{Error, Result, Scalar};

pub const MODEL_MAGIC: [u8; 4] = *b"EDGM";

pub fn write_model<T: Scalar, W: Write>(model: &LinearModel<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(&MODEL_MAGIC)?;
    out.write_all(&(model.classes() as u32).to_le_bytes())?;
    out.write_all(&(model.dim() as u32).to_le_bytes())?;
    for w in model.weights() {
        out.write_all(&w.to_f64_lossy().to_le_bytes())?;
    }
    out.flush()
}

pub fn read_model<T: Scalar, R: Read>(mut input: R, name: &str) -> Result<LinearModel<T>> {
    let format = |field: &'static str, reason: String| Error::Format {
        file: name.to_string(),
        field,
        reason,
    };
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| format("magic", e.to_string()))?;
    if magic != MODEL_MAGIC {
        return Err(format("magic", format!("expected \"EDGM\", found {magic:?}")));
    }
    let mut word = [0u8; 4];
    input
        .read_exact(&mut word)
        .map_err(|e| format("classes", e.to_string()))?;
    let classes = u32::from_le_bytes(word) as usize;
    input
        .read_exact(&mut word)
        .map_err(|e| format("dim", e.to_string()))?;
    let dim = u32::from_le_bytes(word) as usize;
    if classes == 0 {
        return Err(format("classes", "must be >= 1".into()));
    }

    let count = classes * (dim + 1);
    let mut bytes = vec![0u8; count * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|_| format("weights", format!("expected {count} f64 values")))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| format("weights", e.to_string()))? != 0 {
        return Err(format("weights", "trailing bytes after weight matrix".into()));
    }
    let weights = bytes
        .chunks_exact(8)
        .map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    LinearModel::from_weights(classes, dim, weights).map_err(|e| format("weights", e.to_string()))
}

pub fn write_model_file<T: Scalar>(model: &LinearModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_model_file<T: Scalar>(path: impl AsRef<Path>) -> Result<LinearModel<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let m = LinearModel::from_weights(2, 1, vec![1.0f64, -2.0, 0.5, 3.25]).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let mut expected = b"EDGM".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        for w in [1.0f64, -2.0, 0.5, 3.25] {
            expected.extend_from_slice(&w.to_le_bytes());
        }
        assert_eq!(buf, expected);
        let back: LinearModel<f64> = read_model(&buf[..], "mem").unwrap();
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn rejects_bad_files() {
        let m = LinearModel::<f64>::zeros(3, 4);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        let err = read_model::<f64, _>(&bad[..], "f").unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let err = read_model::<f64, _>(&buf[..buf.len() - 3], "f").unwrap_err().to_string();
        assert!(err.contains("weights"), "{err}");

        let mut long = buf.clone();
        long.push(0);
        assert!(read_model::<f64, _>(&long[..], "f").is_err());
    }

    #[test]
    fn file_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.edgm");
        let m = LinearModel::from_weights(2, 2, vec![0.5f32, 1.5, -2.0, 4.0, 0.25, -0.125]).unwrap();
        write_model_file(&m, &path).unwrap();
        let back: LinearModel<f32> = read_model_file(&path).unwrap();
        assert_eq!(back.weights(), m.weights());
    }
}
