//! Middlebury `.flo` reader and writer.
//!
//! Layout (little endian): the four bytes `PIEH`, `i32` width, `i32` height,
//! then `width * height` interleaved `(u, v)` pairs as `f32`, row-major.
//! Values are stored as `f32`, so writing rounds the in-memory `f64` flow.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::FlowField;

const MAGIC: &[u8; 4] = b"PIEH";
const MAX_DIM: i32 = 1 << 16;

#[derive(Debug, Error)]
pub enum FloError {
    #[error("flo: i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("flo: bad magic {0:?}, expected \"PIEH\"")]
    BadMagic([u8; 4]),
    #[error("flo: invalid dimensions {0}x{1}")]
    BadDimensions(i32, i32),
    #[error("flo: non-finite flow value at index {0}")]
    NonFinite(usize),
}

pub fn write_flo<W: Write>(flow: &FlowField, mut w: W) -> Result<(), FloError> {
    let (width, height) = (flow.width() as i32, flow.height() as i32);
    w.write_all(MAGIC)?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    let mut buf = Vec::with_capacity(flow.data().len() * 8);
    for v in flow.data() {
        buf.extend_from_slice(&(v[0] as f32).to_le_bytes());
        buf.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<R: Read>(mut r: R) -> Result<FlowField, FloError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FloError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let width = i32::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let height = i32::from_le_bytes(word);
    if width <= 0 || height <= 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(FloError::BadDimensions(width, height));
    }
    let n = width as usize * height as usize;
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let mut uv = Vec::with_capacity(n);
    for (i, chunk) in raw.chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes"));
        let v = f32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes"));
        if !u.is_finite() || !v.is_finite() {
            return Err(FloError::NonFinite(i));
        }
        uv.push([u as f64, v as f64]);
    }
    Ok(FlowField::from_vec(width as usize, height as usize, uv).expect("validated above"))
}

pub fn save_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FloError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_flo(flow, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<FlowField, FloError> {
    read_flo(BufReader::new(File::open(path)?))
}

/// Rounds every component to `f32`, i.e. what a `.flo` round trip yields.
pub fn quantize(flow: &FlowField) -> FlowField {
    let uv = flow
        .data()
        .iter()
        .map(|v| [v[0] as f32 as f64, v[1] as f32 as f64])
        .collect();
    FlowField::from_vec(flow.width(), flow.height(), uv).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let flow = FlowField::from_vec(2, 1, vec![[1.5, -2.0], [0.25, 3.0]]).unwrap();
        let mut bytes = Vec::new();
        write_flo(&flow, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"PIEH");
        // the magic reads as the float 202021.25
        assert_eq!(
            f32::from_le_bytes(bytes[0..4].try_into().unwrap()),
            202021.25
        );
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 12 + 16);
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0.25);
        assert_eq!(read_flo(&bytes[..]).unwrap(), flow);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_flo(&b"PIEX\x01\0\0\0\x01\0\0\0"[..]),
            Err(FloError::BadMagic(_))
        ));
        assert!(matches!(
            read_flo(&b"PIEH\x01\0\0\0\x01\0\0\0\0\0"[..]),
            Err(FloError::Io(_))
        ));
        assert!(matches!(
            read_flo(&b"PIEH\0\0\0\0\x01\0\0\0"[..]),
            Err(FloError::BadDimensions(0, 1))
        ));
    }
}
