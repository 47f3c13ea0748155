//! Binary PPM (P6, maxval 255) reading and writing.

use std::path::Path;

use thiserror::Error;

use crate::channelrep::Image8;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("not a PPM file")]
    BadMagic,
    #[error("unsupported PPM variant {0} (only binary P6 is read)")]
    UnsupportedFormat(String),
    #[error("unsupported maxval {0} (expected 255)")]
    MaxVal(u32),
    #[error("bad PPM header: {0}")]
    Header(String),
    #[error("pixel data truncated: {got} of {expected} bytes")]
    Truncated { got: usize, expected: usize },
    #[error("image must have 3 channels, got {0}")]
    Channels(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&str, PpmError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(PpmError::Header("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            if self.bytes[self.pos] == b'#' {
                break;
            }
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| PpmError::Header("non-ASCII header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32, PpmError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| PpmError::Header(format!("bad {what} {t:?}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image8, PpmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PpmError::BadMagic);
    }
    match bytes[1] {
        b'6' => {}
        d @ b'1'..=b'5' => return Err(PpmError::UnsupportedFormat(format!("P{}", d as char))),
        _ => return Err(PpmError::BadMagic),
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::Header("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(PpmError::MaxVal(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PpmError::Header("missing separator before pixel data".into())),
    }
    let expected = width * height * 3;
    let raster = &bytes[h.pos..];
    if raster.len() < expected {
        return Err(PpmError::Truncated {
            got: raster.len(),
            expected,
        });
    }
    Ok(Image8::new(width, height, 3, raster[..expected].to_vec()))
}

pub fn encode_ppm(img: &Image8) -> Result<Vec<u8>, PpmError> {
    if img.channels != 3 {
        return Err(PpmError::Channels(img.channels));
    }
    let expected = img.width * img.height * 3;
    if img.data.len() != expected {
        return Err(PpmError::Truncated {
            got: img.data.len(),
            expected,
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Image8, PpmError> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(img: &Image8, path: &Path) -> Result<(), PpmError> {
    std::fs::write(path, encode_ppm(img)?)?;
    Ok(())
}
