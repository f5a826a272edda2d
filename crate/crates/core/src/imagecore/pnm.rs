//! Binary Netpbm graymap (P5) and pixmap (P6), 8-bit, maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Image, ImageError};

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn err(&self, message: impl Into<String>) -> ImageError {
        ImageError::Parse { offset: self.pos, message: message.into() }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Parse { offset: start, message: format!("{what} out of range") })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(cur.err("missing P5/P6 magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(cur.err(format!("unsupported magic P{}", bytes[1] as char))),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_whitespace_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::Parse { offset: maxval_at, message: format!("maxval {maxval} unsupported, need 255") });
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace before raster")),
    }
    let needed = width * height * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < needed {
        return Err(ImageError::Parse {
            offset: bytes.len(),
            message: format!("truncated raster: need {needed} bytes, got {}", raster.len()),
        });
    }
    let pixels = raster[..needed].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, pixels)
}

/// Rounds each value (clamped to `[0, 1]`) to the nearest 8-bit level.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| ImageError::Io(format!("{}: {e}", path.as_ref().display())))?;
    decode_pnm(&bytes)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let mut f =
        fs::File::create(path.as_ref()).map_err(|e| ImageError::Io(format!("{}: {e}", path.as_ref().display())))?;
    f.write_all(&encode_pnm(image)).map_err(|e| ImageError::Io(format!("{}: {e}", path.as_ref().display())))
}
