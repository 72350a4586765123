//! `FLT1` latent files.
//!
//! ```text
//! "FLT1" | version u32 | C u32 | T u32 | H u32 | W u32 | C·T·H·W × f32
//! ```
//! All integers and floats are little-endian; the payload is in canonical
//! `(C, T, H, W)` order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

pub const MAGIC: &[u8; 4] = b"FLT1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Upper bound on elements accepted from an untrusted header (16 GiB of f32).
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn encoded_len(shape: Shape) -> usize {
    HEADER_LEN + 4 * shape.len()
}

pub fn write<W: Write>(tensor: &LatentTensor, mut out: W) -> Result<()> {
    let s = tensor.shape();
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    for (k, v) in [VERSION as usize, s.c, s.t, s.h, s.w].into_iter().enumerate() {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        header[4 + 4 * k..8 + 4 * k].copy_from_slice(&v.to_le_bytes());
    }
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in tensor.data().chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read<R: Read>(mut input: R) -> Result<LatentTensor> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header).map_err(truncated)?;
    let shape = parse_header(&header)?;
    let mut bytes = vec![0u8; 4 * shape.len()];
    input.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LatentTensor::from_vec(shape, data)
}

pub fn encode(tensor: &LatentTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(tensor.shape()));
    write(tensor, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(LatentTensor, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("FLT1 header truncated".into()));
    }
    let shape = parse_header(&bytes[..HEADER_LEN])?;
    let end = encoded_len(shape);
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "FLT1 payload truncated: {} of {} bytes",
            bytes.len(),
            end
        )));
    }
    let tensor = read(&bytes[..end])?;
    Ok((tensor, end))
}

pub fn load(path: impl AsRef<Path>) -> Result<LatentTensor> {
    read(BufReader::new(File::open(path)?))
}

pub fn save(tensor: &LatentTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

fn parse_header(header: &[u8]) -> Result<Shape> {
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    let field = |k: usize| u32::from_le_bytes(header[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let version = field(0);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FLT1 version {version}")));
    }
    let dims = [field(1), field(2), field(3), field(4)];
    let count = dims.iter().map(|&d| d as u64).product::<u64>();
    if dims.contains(&0) || count > MAX_ELEMENTS {
        return Err(Error::Format(format!("implausible FLT1 dimensions {dims:?}")));
    }
    Ok(Shape::new(
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        dims[3] as usize,
    ))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("FLT1 stream truncated".into())
    } else {
        Error::Io(e)
    }
}
