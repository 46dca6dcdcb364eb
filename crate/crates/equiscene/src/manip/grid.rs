//! Tiled figure grids: a PNG for looking at, plus a raw tensor sidecar so
//! downstream comparisons stay exact.

use crate::error::{Error, Result};
use crate::frame::{Frame, CANVAS, FRAME_LEN};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

const SEPARATOR: usize = 2;

#[derive(Serialize, Deserialize)]
struct CellsHeader {
    rows: usize,
    cols: usize,
    channels: usize,
    height: usize,
    width: usize,
}

/// Write a row-major tiled PNG with 2-pixel white separators and a lossless
/// `.cells.bin` sidecar next to it.
pub fn render_figure_grid(rows: &[Vec<Frame>], out_path: &Path) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::EmptyInput("figure grid has no cells".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch(format!(
            "ragged figure grid: row lengths {:?}",
            rows.iter().map(|r| r.len()).collect::<Vec<_>>()
        )));
    }
    let nrows = rows.len();
    let width = cols * CANVAS + (cols + 1) * SEPARATOR;
    let height = nrows * CANVAS + (nrows + 1) * SEPARATOR;
    let mut rgb = vec![255u8; width * height * 3];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, frame) in row.iter().enumerate() {
            let y0 = SEPARATOR + ri * (CANVAS + SEPARATOR);
            let x0 = SEPARATOR + ci * (CANVAS + SEPARATOR);
            for y in 0..CANVAS {
                for x in 0..CANVAS {
                    let dst = ((y0 + y) * width + x0 + x) * 3;
                    for c in 0..3 {
                        let v = frame.get(c, y, x).clamp(0.0, 1.0);
                        rgb[dst + c] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(out_path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Format(format!("png data: {e}")))?;

    let header = CellsHeader { rows: nrows, cols, channels: 3, height: CANVAS, width: CANVAS };
    let header_json = serde_json::to_vec(&header)?;
    let mut sidecar = Vec::new();
    sidecar.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    sidecar.extend_from_slice(&header_json);
    for row in rows {
        for frame in row {
            for v in frame.data() {
                sidecar.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(sidecar_path(out_path), sidecar)?;
    Ok(())
}

pub fn sidecar_path(out_path: &Path) -> std::path::PathBuf {
    let mut os = out_path.as_os_str().to_owned();
    os.push(".cells.bin");
    std::path::PathBuf::from(os)
}

/// Read back the per-cell tensors written by [`render_figure_grid`].
pub fn load_figure_cells(png_path: &Path) -> Result<Vec<Vec<Frame>>> {
    let bytes = fs::read(sidecar_path(png_path))?;
    if bytes.len() < 4 {
        return Err(Error::Format("cells sidecar truncated".into()));
    }
    let hl = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let header: CellsHeader = serde_json::from_slice(
        bytes.get(4..4 + hl).ok_or_else(|| Error::Format("cells header truncated".into()))?,
    )?;
    let expected = 4 + hl + header.rows * header.cols * FRAME_LEN * 4;
    if bytes.len() != expected || header.channels != 3 || header.height != CANVAS {
        return Err(Error::Format("cells sidecar shape mismatch".into()));
    }
    let mut at = 4 + hl;
    let mut rows = Vec::with_capacity(header.rows);
    for _ in 0..header.rows {
        let mut row = Vec::with_capacity(header.cols);
        for _ in 0..header.cols {
            let data: Vec<f32> = bytes[at..at + FRAME_LEN * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            at += FRAME_LEN * 4;
            row.push(Frame::new(data)?);
        }
        rows.push(row);
    }
    Ok(rows)
}
