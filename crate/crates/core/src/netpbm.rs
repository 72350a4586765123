//! Minimal binary PGM (`P5`) / PPM (`P6`) support, 8-bit samples only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    /// Interleaved samples rescaled to `0..=255`.
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Format(format!("unsupported netpbm magic {other:?}"))),
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if width == 0 || height == 0 {
            return Err(Error::Format("netpbm image has zero size".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        cur.pos += 1;
        let n = width * height * channels;
        let raster = bytes
            .get(cur.pos..cur.pos + n)
            .ok_or_else(|| Error::Format("netpbm raster truncated".into()))?;
        let data = if maxval == 255 {
            raster.to_vec()
        } else {
            raster
                .iter()
                .map(|&v| ((v.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8)
                .collect()
        };
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

/// True when `bytes` start like a binary netpbm file.
pub fn sniff(bytes: &[u8]) -> bool {
    matches!(bytes.get(..2), Some(b"P5") | Some(b"P6"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("netpbm header truncated".into())),
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad netpbm header field {tok:?}")))
    }
}
