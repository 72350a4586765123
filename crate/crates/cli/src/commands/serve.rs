use std::io::{self, Read, Write};

use fresco_core::denoise::protocol::{self, MessageType, Service};
use fresco_core::denoise::{Denoiser, DenoiserRequest, DenoiserResponse, Echo, GaussianAnalytic, PredictionKind};
use fresco_core::metrics::{Embedder, Frame, PooledEmbedder};
use fresco_core::{LatentTensor, Shape};

use crate::error::{CliError, CliResult};
use crate::{ServeArgs, ServeKind};

struct Reference {
    kind: ServeKind,
    gaussian: GaussianAnalytic,
    embedder: PooledEmbedder,
}

impl Service for Reference {
    fn denoise(&mut self, req: DenoiserRequest) -> Result<DenoiserResponse, String> {
        match self.kind {
            ServeKind::Gaussian => self.gaussian.denoise(&req).map_err(|e| e.to_string()),
            ServeKind::WrongShape => {
                let s = req.tile.shape();
                Ok(DenoiserResponse {
                    prediction: LatentTensor::zeros(Shape::new(s.c, s.t, s.h, s.w + 1)),
                    kind: self.gaussian.kind(),
                })
            }
            _ => Echo.denoise(&req).map_err(|e| e.to_string()),
        }
    }

    fn embed(&mut self, frame: LatentTensor) -> Result<Vec<f32>, String> {
        let frame = Frame::from_tensor(&frame).map_err(|e| e.to_string())?;
        self.embedder.embed(&frame).map_err(|e| e.to_string())
    }
}

/// Answers the handshake normally and then misbehaves on every request.
fn serve_faulty<R: Read, W: Write>(mut input: R, mut output: W, garbage: bool) -> io::Result<()> {
    while let Some(frame) = protocol::read_frame(&mut input).map_err(|e| io::Error::other(e.to_string()))? {
        match frame.kind {
            MessageType::Hello => protocol::write_frame(&mut output, MessageType::HelloAck, &protocol::encode_hello())?,
            MessageType::Shutdown => return Ok(()),
            _ if garbage => {
                output.write_all(b"\x00garbage, not a frame\n")?;
                output.flush()?;
            }
            // hang: read on without ever replying
            _ => {}
        }
    }
    Ok(())
}

pub fn run(a: &ServeArgs) -> CliResult<()> {
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    match a.kind {
        ServeKind::Garbage | ServeKind::Hang => {
            serve_faulty(stdin, stdout, matches!(a.kind, ServeKind::Garbage)).map_err(CliError::from)
        }
        _ => {
            let kind = if a.eps { PredictionKind::Eps } else { PredictionKind::Flow };
            let mut service = Reference {
                kind: a.kind,
                gaussian: GaussianAnalytic::new(a.mu, a.s, kind),
                embedder: PooledEmbedder { grid: a.embed_grid },
            };
            protocol::serve(stdin, stdout, &mut service).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
