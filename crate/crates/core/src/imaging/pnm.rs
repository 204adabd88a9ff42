//! Binary PNM I/O: P6 for [`Frame`]s, P5 for [`GrayImage`]s and [`Mask`]s.
//! Only maxval 255 is accepted.

use super::{Frame, GrayImage, ImagingError, Mask, Raster};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("expected magic {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 255)")]
    MaxVal(u32),
    #[error("pixel data truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error(transparent)]
    Image(#[from] ImagingError),
}

struct Header {
    width: u32,
    height: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &'static str) -> Result<Header, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PnmError::BadMagic { expected: magic, found });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PnmError::Header("unexpected end of header".into())),
            }
        }
        let begin = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if begin == pos {
            return Err(PnmError::Header(format!("expected a number at byte {begin}")));
        }
        let text = std::str::from_utf8(&bytes[begin..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| PnmError::Header(format!("number out of range: {text}")))?;
    }
    if fields[2] != 255 {
        return Err(PnmError::MaxVal(fields[2]));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::Header("missing whitespace after maxval".into()));
    }
    Ok(Header { width: fields[0], height: fields[1], data_start: pos + 1 })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let need = h.width as usize * h.height as usize * channels;
    let have = bytes.len().saturating_sub(h.data_start);
    if have < need {
        return Err(PnmError::Truncated { need, have });
    }
    Ok(&bytes[h.data_start..h.data_start + need])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame, PnmError> {
    let h = parse_header(bytes, "P6")?;
    let data = raster(bytes, &h, 3)?;
    Ok(Frame::new(h.width, h.height, data.to_vec())?)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PnmError> {
    let h = parse_header(bytes, "P5")?;
    let data = raster(bytes, &h, 1)?;
    Ok(GrayImage::new(h.width, h.height, data.to_vec())?)
}

/// Reads a P5 file as a mask; any nonzero value counts as foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask, PnmError> {
    let g = decode_pgm(bytes)?;
    Ok(Mask::from_bools(g.width(), g.height(), g.values().iter().map(|&v| v != 0)))
}

fn encode(magic: &str, width: u32, height: u32, data: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_ppm(f: &Frame) -> Vec<u8> {
    encode("P6", f.width(), f.height(), f.pixels())
}

pub fn encode_pgm<R: Raster + ?Sized>(img: &R) -> Vec<u8> {
    encode("P5", img.width(), img.height(), img.data())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame, PnmError> {
    decode_ppm(&fs::read(path)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PnmError> {
    decode_pgm(&fs::read(path)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask, PnmError> {
    decode_mask(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, f: &Frame) -> Result<(), PnmError> {
    fs::File::create(path)?.write_all(&encode_ppm(f))?;
    Ok(())
}

pub fn write_pgm<R: Raster + ?Sized>(path: impl AsRef<Path>, img: &R) -> Result<(), PnmError> {
    fs::File::create(path)?.write_all(&encode_pgm(img))?;
    Ok(())
}
