//! Binary greyscale PGM (`P5`) images and label masks.
//!
//! Intensities are scaled to `[0,1]` by `maxval`; samples wider than one byte
//! are big-endian, as the format requires. Masks are stored as raw label
//! bytes (`maxval` 255, values 0..=3).

use std::fs;
use std::path::Path;

use patchreg_core::{Image, LabelMask};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Byte offset of the first sample.
    pub data_offset: usize,
}

/// Parse failure with the byte offset it was detected at.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("PGM parse error at byte {offset}: {msg}")]
pub struct ParseError {
    pub offset: usize,
    pub msg: String,
}

fn fail<T>(offset: usize, msg: impl Into<String>) -> std::result::Result<T, ParseError> {
    Err(ParseError {
        offset,
        msg: msg.into(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments up to the next token.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<u32, ParseError> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.bytes.get(self.pos) {
                None => fail(start, format!("unexpected end of header, expected {what}")),
                Some(b) => fail(start, format!("expected {what}, found byte 0x{b:02x}")),
            };
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .or_else(|_| fail(start, format!("{what} {text} does not fit in 32 bits")))
    }
}

pub fn parse_header(bytes: &[u8]) -> std::result::Result<Header, ParseError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return fail(0, "missing P5 magic");
    }
    let mut c = Cursor { bytes, pos: 2 };
    match c.bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        _ => return fail(2, "magic must be followed by whitespace"),
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = {
        c.skip_blank();
        c.pos
    };
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return fail(maxval_at, format!("empty image {width}x{height}"));
    }
    if !(1..=65535).contains(&maxval) {
        return fail(maxval_at, format!("maxval {maxval} outside 1..=65535"));
    }
    match c.bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        Some(_) => return fail(c.pos, "maxval must be followed by one whitespace byte"),
        None => return fail(c.pos, "header ends before the raster"),
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: c.pos,
    })
}

/// Raw integer samples of a P5 file.
pub fn parse_samples(bytes: &[u8]) -> std::result::Result<(Header, Vec<u16>), ParseError> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height;
    let wide = h.maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let raster = &bytes[h.data_offset..];
    if raster.len() < need {
        return fail(
            bytes.len(),
            format!("raster truncated: {} of {need} bytes", raster.len()),
        );
    }
    let samples: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(k) = samples.iter().position(|&v| v as u32 > h.maxval) {
        let offset = h.data_offset + if wide { 2 * k } else { k };
        return fail(offset, format!("sample {} exceeds maxval {}", samples[k], h.maxval));
    }
    Ok((h, samples))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Image<f64>, ParseError> {
    let (h, samples) = parse_samples(bytes)?;
    let m = h.maxval as f64;
    let data = samples.iter().map(|&v| v as f64 / m).collect();
    Ok(Image::new(h.height, h.width, data).expect("sample count checked"))
}

/// Encodes with `maxval` 255 (one byte per sample) or 65535 (two bytes).
pub fn encode(img: &Image<f64>, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    let m = maxval as f64;
    for &v in &img.data {
        let q = (v.clamp(0.0, 1.0) * m).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> std::result::Result<LabelMask, ParseError> {
    let (h, samples) = parse_samples(bytes)?;
    if let Some(k) = samples.iter().position(|&v| v > 3) {
        let wide = h.maxval > 255;
        return fail(
            h.data_offset + if wide { 2 * k } else { k },
            format!("label {} outside 0..=3", samples[k]),
        );
    }
    let data = samples.iter().map(|&v| v as u8).collect();
    Ok(LabelMask::new(h.height, h.width, data).expect("validated labels"))
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image<f64>> {
    decode(&read_bytes(path)?).map_err(|e| CliError::integrity(path, e.to_string()))
}

pub fn write_pgm(img: &Image<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode(img, 255)).map_err(|e| CliError::io(path, e))
}

pub fn write_pgm16(img: &Image<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode(img, 65535)).map_err(|e| CliError::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMask> {
    decode_mask(&read_bytes(path)?).map_err(|e| CliError::integrity(path, e.to_string()))
}

pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| CliError::io(path, e))
}
