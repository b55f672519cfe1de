//! Raster file formats for depth images and masks.
//!
//! Depth: magic `CDPT`, little-endian u32 width and height, then
//! width·height little-endian f32 meters, row-major from the top-left.
//! Mask: magic `CMSK`, same header, then one byte per pixel (0 or 1).
//! PNG export is 16-bit grayscale millimeters, clamped, for visualization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::render::{DepthImage, Mask};

pub const DEPTH_MAGIC: &[u8; 4] = b"CDPT";
pub const MASK_MAGIC: &[u8; 4] = b"CMSK";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("file truncated: expected {expected} pixels, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("mask byte at pixel {index} is {value}, expected 0 or 1")]
    BadMaskByte { index: usize, value: u8 },
    #[error("png error: {0}")]
    Png(#[from] png::EncodingError),
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], width: u32, height: u32) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(u32, u32), RasterError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(RasterError::BadMagic { expected: *magic, found });
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let width = u32::from_le_bytes(buf);
    r.read_exact(&mut buf)?;
    let height = u32::from_le_bytes(buf);
    Ok((width, height))
}

pub fn write_depth(path: &Path, img: &DepthImage) -> Result<(), RasterError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, DEPTH_MAGIC, img.width, img.height)?;
    for v in &img.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthImage, RasterError> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height) = read_header(&mut r, DEPTH_MAGIC)?;
    let expected = (width as usize) * (height as usize);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 4 {
        return Err(RasterError::Truncated { expected, found: bytes.len() / 4 });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(DepthImage { width, height, data })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), RasterError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, MASK_MAGIC, mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask, RasterError> {
    let mut r = BufReader::new(File::open(path)?);
    let (width, height) = read_header(&mut r, MASK_MAGIC)?;
    let expected = (width as usize) * (height as usize);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(RasterError::Truncated { expected, found: bytes.len() });
    }
    let mut data = Vec::with_capacity(expected);
    for (index, &value) in bytes.iter().enumerate() {
        match value {
            0 => data.push(false),
            1 => data.push(true),
            _ => return Err(RasterError::BadMaskByte { index, value }),
        }
    }
    Ok(Mask { width, height, data })
}

/// 16-bit grayscale PNG export: depth in millimeters, clamped to u16 range.
pub fn write_depth_png(path: &Path, img: &DepthImage) -> Result<(), RasterError> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, img.width, img.height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header()?;
    let mut bytes = Vec::with_capacity(img.data.len() * 2);
    for &v in &img.data {
        let mm = (v as f64 * 1000.0).clamp(0.0, u16::MAX as f64) as u16;
        bytes.extend_from_slice(&mm.to_be_bytes());
    }
    writer.write_image_data(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.cdpt");
        let img = DepthImage {
            width: 3,
            height: 2,
            data: vec![1.0, 0.5, 0.25, f32::MIN_POSITIVE, 1e30, 0.0],
        };
        write_depth(&path, &img).unwrap();
        let back = read_depth(&path).unwrap();
        assert_eq!(back, img);
        // Exact layout: magic + 8 header bytes + 6 floats.
        assert_eq!(std::fs::read(&path).unwrap().len(), 4 + 8 + 24);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.cmsk");
        let mask = Mask { width: 2, height: 2, data: vec![true, false, false, true] };
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.cdpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert!(matches!(read_depth(&path), Err(RasterError::BadMagic { .. })));
    }

    #[test]
    fn bad_mask_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.cmsk");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MASK_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(7);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_mask(&path), Err(RasterError::BadMaskByte { index: 0, value: 7 })));
    }

    #[test]
    fn truncated_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.cdpt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(DEPTH_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_depth(&path), Err(RasterError::Truncated { .. })));
    }

    #[test]
    fn png_export_writes_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = DepthImage { width: 4, height: 4, data: vec![1.0; 16] };
        write_depth_png(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
