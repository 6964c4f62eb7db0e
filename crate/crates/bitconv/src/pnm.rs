//! Minimal binary PGM (`P5`) and PPM (`P6`) reader/writer, 8-bit only.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// 8-bit image, one (grayscale) or three (RGB, interleaved) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<PnmImage> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::format(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::format(format!(
                "pixel buffer holds {} bytes, {}x{}x{channels} needs {}",
                data.len(),
                width,
                height,
                width * height * channels
            )));
        }
        Ok(PnmImage { width, height, channels, data })
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

/// Parses the ASCII header of a binary PNM file: magic, whitespace and
/// `#` comments, width, height, maxval, then a single whitespace byte.
fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::format("file too short for a PNM header".to_string()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::format(format!(
                "bad magic {:?}, expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format("malformed PNM header field".to_string()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("malformed PNM header field".to_string()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(format!("bad PNM dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(format!("unsupported maxval {maxval}, need 1..=255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("missing whitespace before pixel data".to_string()));
    }
    Ok(Header { channels, width, height, data_offset: pos + 1 })
}

pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let h = parse_header(bytes)?;
    let need = h.width * h.height * h.channels;
    let pixels = bytes
        .get(h.data_offset..h.data_offset + need)
        .ok_or_else(|| Error::format("pixel data truncated".to_string()))?;
    PnmImage::new(h.width, h.height, h.channels, pixels.to_vec())
}

pub fn read(path: impl AsRef<Path>) -> Result<PnmImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::format(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write(img: &PnmImage, path: impl AsRef<Path>) -> Result<()> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.data)?;
    f.flush()?;
    Ok(())
}
