use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use fresco_core::denoise::external::ExternalEmbedder;
use fresco_core::metrics::{
    prior_alignment, seam_energy, temporal_consistency, tenengrad_video, Embedder, Frame, PooledEmbedder, SobelBorder,
};
use fresco_core::tiles::plan_tiles;
use fresco_core::{flt1, netpbm};

use crate::error::{io_at, CliError, CliResult};
use crate::io::write_atomic;
use crate::{Border, MetricsArgs};

const FRAME_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "flt1", "flt"];

/// Loads a frame directory (sorted by name), a `(C, T, H, W)` FLT1 tensor or
/// a single image.
pub fn load_video(path: &Path) -> CliResult<Vec<Frame>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_at(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Io(format!("{}: no frames found", path.display())));
        }
        return files.iter().map(|f| Ok(Frame::load(f)?)).collect();
    }
    let bytes = fs::read(path).map_err(io_at(path))?;
    let loaded = if netpbm::sniff(&bytes) {
        netpbm::PnmImage::decode(&bytes).and_then(|img| Frame::from_pnm(&img)).map(|f| vec![f])
    } else {
        flt1::decode(&bytes).and_then(|(t, _)| Frame::video_from_tensor(&t))
    };
    loaded.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.9e}"))
}

pub fn run(a: &MetricsArgs) -> CliResult<()> {
    if !a.prior.is_empty() && a.prior.len() != a.videos.len() {
        return Err(CliError::Usage(format!(
            "{} videos but {} priors",
            a.videos.len(),
            a.prior.len()
        )));
    }
    let border = match a.border {
        Border::Replicate => SobelBorder::Replicate,
        Border::Valid => SobelBorder::Valid,
    };
    let external = if a.embed_command.is_empty() {
        None
    } else {
        Some(ExternalEmbedder::spawn(&a.embed_command, Duration::from_secs(300))?)
    };
    let pooled = PooledEmbedder { grid: a.embed_grid };
    let embedder: &dyn Embedder = match &external {
        Some(e) => e,
        None => &pooled,
    };

    let mut report = String::from("#video\tframes\ttenengrad\ttemporal_consistency\tprior_alignment\tseam_energy\n");
    for (k, path) in a.videos.iter().enumerate() {
        let frames = load_video(path)?;
        let sharp = tenengrad_video(&frames, border)?;
        let temporal = if frames.len() >= 2 {
            Some(temporal_consistency(&frames, a.divisor)?)
        } else {
            None
        };
        let align = match a.prior.get(k) {
            Some(p) => Some(prior_alignment(&frames, &load_video(p)?, embedder)?),
            None => None,
        };
        let seam = match a.seam_window {
            Some((wh, ww)) => {
                let f = a.factor.max(1);
                let (h, w) = (frames[0].height / f, frames[0].width / f);
                let plan = plan_tiles(h, w, wh, ww, a.seam_overlap)?;
                Some(frames.iter().map(|fr| seam_energy(fr, &plan, f)).sum::<f64>() / frames.len() as f64)
            }
            None => None,
        };
        let _ = writeln!(
            report,
            "{}\t{}\t{:.9e}\t{}\t{}\t{}",
            path.display(),
            frames.len(),
            sharp,
            fmt_opt(temporal),
            fmt_opt(align),
            fmt_opt(seam)
        );
    }
    match &a.out {
        Some(p) => write_atomic(p, report.as_bytes()),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}
