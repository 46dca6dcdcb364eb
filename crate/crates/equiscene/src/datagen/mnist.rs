//! IDX ubyte reader for the standard digit files, plain or gzip-compressed.

use super::{DigitSprite, Split, DIGIT_SIZE};
use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::Read;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    // Gzip sniff.
    if raw.len() >= 2 && raw[0] == 0x1F && raw[1] == 0x8B {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let slice: [u8; 4] = bytes
        .get(at..at + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Format("truncated idx header".into()))?;
    Ok(u32::from_be_bytes(slice))
}

/// Parse an images file into per-image [0, 1] intensities.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad images magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != DIGIT_SIZE || cols != DIGIT_SIZE {
        return Err(Error::Format(format!("unexpected digit dimensions {rows}x{cols}")));
    }
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(Error::Format(format!(
            "images payload {} bytes, expected {}",
            body.len(),
            count * rows * cols
        )));
    }
    Ok(body
        .chunks(rows * cols)
        .map(|img| img.iter().map(|&b| b as f32 / 255.0).collect())
        .collect())
}

/// Parse a labels file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad labels magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "labels payload {} bytes, expected {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

fn find_file(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&candidate);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Format(format!("missing {stem}[.gz] under {}", dir.display())))
}

fn load_split(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Vec<DigitSprite>> {
    let imgs = parse_idx_images(&read_all(&find_file(dir, images)?)?)?;
    let labs = parse_idx_labels(&read_all(&find_file(dir, labels)?)?)?;
    if imgs.len() != labs.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .enumerate()
        .map(|(i, (intensity, label))| DigitSprite {
            intensity,
            label,
            split,
            source_index: i as u32,
        })
        .collect())
}

/// Load the four standard files from `dir`, keeping splits separate.
pub fn load_mnist(dir: &Path) -> Result<(Vec<DigitSprite>, Vec<DigitSprite>)> {
    let train = load_split(
        dir,
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        Split::Train,
    )?;
    let test = load_split(
        dir,
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        Split::Test,
    )?;
    Ok((train, test))
}

#[cfg(test)]
pub(crate) fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

#[cfg(test)]
pub(crate) fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
