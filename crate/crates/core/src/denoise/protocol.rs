//! `FDP1` framing for out-of-process denoisers and embedders.
//!
//! Every frame is
//!
//! ```text
//! "FDP1" | type u8 | payload length u64 LE | payload
//! ```
//!
//! | type | direction | payload |
//! |------|-----------|---------|
//! | `0x01` hello | client → server | protocol version u32 |
//! | `0x02` hello ack | server → client | protocol version u32 |
//! | `0x03` shutdown | client → server | empty |
//! | `0x10` denoise | client → server | step u32, t f32, σ f32, rect 4×u32, conditioning (u16 len + UTF-8), FLT1 tile |
//! | `0x11` prediction | server → client | kind u8 (0 flow, 1 ε), FLT1 tile |
//! | `0x20` embed | client → server | FLT1 frame `(C, 1, H, W)` |
//! | `0x21` embedding | server → client | dim u32, dim × f32 |
//! | `0x7f` error | server → client | UTF-8 message |
//!
//! A server answers each request with exactly one response or error frame.

use std::io::{self, Read, Write};

use crate::denoise::{DenoiserRequest, DenoiserResponse, PredictionKind};
use crate::error::DenoiseError;
use crate::flt1;
use crate::tensor::{LatentTensor, Rect};

pub const MAGIC: &[u8; 4] = b"FDP1";
pub const PROTOCOL_VERSION: u32 = 1;
pub const FRAME_HEADER_LEN: usize = 13;
/// Frames larger than this are rejected as malformed.
pub const MAX_PAYLOAD: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    HelloAck = 0x02,
    Shutdown = 0x03,
    Denoise = 0x10,
    Prediction = 0x11,
    Embed = 0x20,
    Embedding = 0x21,
    Error = 0x7f,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Hello,
            0x02 => Self::HelloAck,
            0x03 => Self::Shutdown,
            0x10 => Self::Denoise,
            0x11 => Self::Prediction,
            0x20 => Self::Embed,
            0x21 => Self::Embedding,
            0x7f => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, payload: Vec<u8>) -> Self {
        Self { kind, payload }
    }
}

pub fn write_frame<W: Write>(w: &mut W, kind: MessageType, payload: &[u8]) -> io::Result<()> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4] = kind as u8;
    header[5..].copy_from_slice(&(payload.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, DenoiseError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(DenoiseError::MalformedFrame("stream ended inside frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(io_error(e)),
        }
    }
    if &header[..4] != MAGIC {
        return Err(DenoiseError::MalformedFrame(format!("bad magic {:?}", &header[..4])));
    }
    let kind = MessageType::from_byte(header[4])
        .ok_or_else(|| DenoiseError::MalformedFrame(format!("unknown message type {:#04x}", header[4])))?;
    let len = u64::from_le_bytes(header[5..].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(DenoiseError::MalformedFrame(format!("payload length {len} too large")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DenoiseError::MalformedFrame("stream ended inside payload".into()),
        _ => io_error(e),
    })?;
    Ok(Some(Frame { kind, payload }))
}

pub(crate) fn io_error(e: io::Error) -> DenoiseError {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::UnexpectedEof => {
            DenoiseError::BrokenPipe
        }
        _ => DenoiseError::Remote(format!("i/o: {e}")),
    }
}

pub fn encode_hello() -> Vec<u8> {
    PROTOCOL_VERSION.to_le_bytes().to_vec()
}

pub fn encode_request(req: &DenoiserRequest) -> Vec<u8> {
    let cond = req.conditioning.as_bytes();
    let cond_len = cond.len().min(u16::MAX as usize);
    let mut out = Vec::with_capacity(32 + cond_len + flt1::encoded_len(req.tile.shape()));
    out.extend_from_slice(&req.step.to_le_bytes());
    out.extend_from_slice(&req.t.to_le_bytes());
    out.extend_from_slice(&req.sigma.to_le_bytes());
    for v in [req.rect.row, req.rect.col, req.rect.height, req.rect.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cond_len as u16).to_le_bytes());
    out.extend_from_slice(&cond[..cond_len]);
    out.extend_from_slice(&flt1::encode(&req.tile));
    out
}

pub fn decode_request(payload: &[u8]) -> Result<DenoiserRequest, DenoiseError> {
    let mut cur = Reader::new(payload);
    let step = cur.u32()?;
    let t = cur.f32()?;
    let sigma = cur.f32()?;
    let rect = Rect::new(
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    );
    let cond_len = cur.u16()? as usize;
    let conditioning = String::from_utf8(cur.take(cond_len)?.to_vec())
        .map_err(|_| DenoiseError::MalformedFrame("conditioning id is not UTF-8".into()))?;
    let tile = cur.tensor()?;
    cur.finish()?;
    Ok(DenoiserRequest {
        tile,
        step,
        t,
        sigma,
        conditioning,
        rect,
    })
}

pub fn encode_response(resp: &DenoiserResponse) -> Vec<u8> {
    let mut out = vec![resp.kind.to_byte()];
    out.extend_from_slice(&flt1::encode(&resp.prediction));
    out
}

pub fn decode_response(payload: &[u8]) -> Result<DenoiserResponse, DenoiseError> {
    let mut cur = Reader::new(payload);
    let kind_byte = cur.take(1)?[0];
    let kind = PredictionKind::from_byte(kind_byte)
        .ok_or_else(|| DenoiseError::MalformedFrame(format!("unknown prediction kind {kind_byte}")))?;
    let prediction = cur.tensor()?;
    cur.finish()?;
    Ok(DenoiserResponse { prediction, kind })
}

pub fn encode_embedding(z: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * z.len());
    out.extend_from_slice(&(z.len() as u32).to_le_bytes());
    for v in z {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(payload: &[u8]) -> Result<Vec<f32>, DenoiseError> {
    let mut cur = Reader::new(payload);
    let dim = cur.u32()? as usize;
    if dim == 0 {
        return Err(DenoiseError::MalformedFrame("empty embedding".into()));
    }
    let z = (0..dim).map(|_| cur.f32()).collect::<Result<Vec<_>, _>>()?;
    cur.finish()?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(DenoiseError::NonFinite);
    }
    Ok(z)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DenoiseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DenoiseError::MalformedFrame(format!("payload truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DenoiseError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DenoiseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DenoiseError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<LatentTensor, DenoiseError> {
        let (t, used) = flt1::decode(&self.bytes[self.pos..]).map_err(|e| match e {
            crate::error::Error::NonFinite(_) => DenoiseError::NonFinite,
            other => DenoiseError::MalformedFrame(format!("tensor payload: {other}")),
        })?;
        self.pos += used;
        Ok(t)
    }

    fn finish(&self) -> Result<(), DenoiseError> {
        if self.pos != self.bytes.len() {
            return Err(DenoiseError::MalformedFrame(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Request handler run by a protocol server.
pub trait Service {
    fn denoise(&mut self, req: DenoiserRequest) -> Result<DenoiserResponse, String>;

    fn embed(&mut self, _frame: LatentTensor) -> Result<Vec<f32>, String> {
        Err("embedding not supported by this server".into())
    }
}

/// Serves requests until shutdown or end of input.
pub fn serve<R: Read, W: Write, S: Service>(mut input: R, mut output: W, service: &mut S) -> Result<(), DenoiseError> {
    loop {
        let Some(frame) = read_frame(&mut input)? else {
            return Ok(());
        };
        let reply = match frame.kind {
            MessageType::Hello => Frame::new(MessageType::HelloAck, encode_hello()),
            MessageType::Shutdown => return Ok(()),
            MessageType::Denoise => match decode_request(&frame.payload) {
                Ok(req) => match service.denoise(req) {
                    Ok(resp) => Frame::new(MessageType::Prediction, encode_response(&resp)),
                    Err(msg) => Frame::new(MessageType::Error, msg.into_bytes()),
                },
                Err(e) => Frame::new(MessageType::Error, e.to_string().into_bytes()),
            },
            MessageType::Embed => match flt1::decode(&frame.payload) {
                Ok((t, _)) => match service.embed(t) {
                    Ok(z) => Frame::new(MessageType::Embedding, encode_embedding(&z)),
                    Err(msg) => Frame::new(MessageType::Error, msg.into_bytes()),
                },
                Err(e) => Frame::new(MessageType::Error, e.to_string().into_bytes()),
            },
            other => Frame::new(MessageType::Error, format!("unexpected message {other:?}").into_bytes()),
        };
        write_frame(&mut output, reply.kind, &reply.payload).map_err(io_error)?;
    }
}

/// Adapts any in-process [`Denoiser`](crate::denoise::Denoiser) to a [`Service`].
pub struct DenoiserService<D>(pub D);

impl<D: crate::denoise::Denoiser> Service for DenoiserService<D> {
    fn denoise(&mut self, req: DenoiserRequest) -> Result<DenoiserResponse, String> {
        self.0.denoise(&req).map_err(|e| e.to_string())
    }
}
