//! Binary dataset container.
//!
//! Little-endian layout: magic `SDDS`, version `u8 = 1`, three reserved zero
//! bytes, then `u32` count, channels, height, width and class count, then
//! `count` `u16` labels, then all pixels as `f32` (sample, channel, row,
//! column order).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::dataset::Dataset;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDDS";
pub const VERSION: u8 = 1;
/// Bytes before the label block.
pub const HEADER_LEN: usize = 28;

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the container")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * 2 + ds.pixels.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&[0; 3]);
    for (v, what) in [
        (ds.len(), "count"),
        (ds.channels, "channels"),
        (ds.height, "height"),
        (ds.width, "width"),
        (ds.num_classes, "num_classes"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    for &l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &p in &ds.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"SDDS\"", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}, expected {VERSION}", bytes[4])));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (count, channels, height, width, num_classes) = (field(0), field(1), field(2), field(3), field(4));
    let sample = channels * height * width;
    let expected = count
        .checked_mul(2 + 4 * sample)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(8, "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {count} samples of {channels}x{height}x{width}, found {}", bytes.len()),
        ));
    }
    let label_end = HEADER_LEN + 2 * count;
    let labels: Vec<u16> = bytes[HEADER_LEN..label_end]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(pos) = labels.iter().position(|&l| l as usize >= num_classes) {
        return Err(format_err(
            HEADER_LEN + 2 * pos,
            format!("label {} out of range for {num_classes} classes", labels[pos]),
        ));
    }
    let pixels: Vec<f32> = bytes[label_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = pixels.iter().position(|v| !v.is_finite()) {
        return Err(format_err(label_end + 4 * pos, "non-finite pixel value"));
    }
    Dataset::new(channels, height, width, num_classes, labels, pixels)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}
