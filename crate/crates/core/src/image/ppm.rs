//! Binary PPM (P6, maxval 255) encoder/decoder. This is the interchange
//! format for datasets and fixtures: byte-exact and dependency-free.

use crate::error::{Error, Result};

use super::Image;

/// Decoded PPM payload before squareness validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPpm {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl RawPpm {
    pub fn into_image(self) -> Result<Image> {
        if self.width != self.height {
            return Err(Error::Image(format!(
                "expected a square image, got {}x{}",
                self.width, self.height
            )));
        }
        Image::from_rgb8(self.width, &self.rgb)
    }
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.side(), img.side()).into_bytes();
    out.extend_from_slice(&img.to_rgb8());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Image(format!("ppm parse error at byte {}: {}", self.pos, msg))
    }

    fn skip_space_and_comments(&mut self) -> Result<()> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return Ok(());
            }
        }
    }

    fn read_number(&mut self) -> Result<usize> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("number out of range"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RawPpm> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(cur.err("truncated header"));
    }
    let magic = &bytes[..2];
    cur.pos = 2;
    if magic != b"P6" {
        return Err(Error::Image(format!(
            "ppm parse error at byte 0: unsupported magic {:?} (only binary P6 is accepted)",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = cur.read_number()?;
    let height = cur.read_number()?;
    let maxval = cur.read_number()?;
    if maxval != 255 {
        return Err(cur.err(&format!("unsupported maxval {maxval} (only 255 is accepted)")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("expected single whitespace before pixel data"));
    }
    cur.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| cur.err("dimensions overflow"))?;
    let rest = &bytes[cur.pos..];
    if rest.len() < need {
        return Err(cur.err(&format!(
            "pixel data truncated: need {need} bytes, have {}",
            rest.len()
        )));
    }
    Ok(RawPpm { width, height, rgb: rest[..need].to_vec() })
}
