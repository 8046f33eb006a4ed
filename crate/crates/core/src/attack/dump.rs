//! Raw perturbation dumps: four little-endian `u32` dimensions
//! (`N, C, H, W`) followed by the values as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_delta(path: impl AsRef<Path>, delta: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let shape: [usize; 4] = delta
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("perturbation dumps are 4-D, got {:?}", delta.shape())))?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    for d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        write(&d.to_le_bytes())?;
    }
    for &v in delta.data() {
        write(&(v as f32).to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_delta(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{}: missing shape header", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let shape = vec![word(0), word(1), word(2), word(3)];
    let count: usize = shape.iter().product();
    let payload = &bytes[16..];
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "{}: shape {shape:?} needs {} bytes of data, found {}",
            path.display(),
            count * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_header_then_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let t = Tensor::new(vec![1, 1, 1, 2], vec![0.5, -0.25]).unwrap();
        write_delta(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(read_delta(&path).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        std::fs::write(&path, [1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0]).unwrap();
        assert!(matches!(read_delta(&path), Err(Error::Format(_))));
    }
}
