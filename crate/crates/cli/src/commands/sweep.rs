use std::fmt::Write as _;

use fresco_core::flt1;
use fresco_core::metrics::{prior_alignment, temporal_consistency, tenengrad_video, Frame, PooledEmbedder, SobelBorder, TEMPORAL_DIVISOR};
use fresco_core::FusionMode;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{parse_list, write_atomic};
use crate::pipeline::{prior_stage, tiled_stage, upsample_stage, Backend};
use crate::SweepArgs;

pub const HEADER: &str = "#lambda_base\ttau\tprior_l2\tprior_linf\ttenengrad\ttemporal_consistency\tprior_alignment\n";

/// Metrics of each final latent are computed on its per-frame channel mean.
pub fn run(a: &SweepArgs) -> CliResult<()> {
    let lambdas = parse_list(&a.lambdas).map_err(CliError::Usage)?;
    let taus = parse_list(&a.taus).map_err(CliError::Usage)?;
    let cfg = RunConfig::load(a.config.config.as_deref(), &a.config.overrides())?;
    if cfg.sampler.mode == FusionMode::Md {
        return Err(CliError::Config("sweep needs mode fd or fd_regional".into()));
    }
    cfg.validate()?;

    let backend = Backend::open(&cfg).map_err(|e| e.in_stage("denoiser setup"))?;
    let prior_latent = prior_stage(&cfg, &backend).map_err(|e| e.in_stage("prior stage"))?;
    let prior = upsample_stage(&cfg, Some(&prior_latent))?.expect("prior requested");
    let prior_frames = Frame::video_from_tensor(&prior)?;
    let embedder = PooledEmbedder::default();

    let mut report = String::from(HEADER);
    for &tau in &taus {
        for &lambda in &lambdas {
            let mut run_cfg = cfg.clone();
            run_cfg.prior.lambda_base = lambda;
            run_cfg.prior.tau = tau;
            run_cfg.validate()?;
            let (latent, _) = tiled_stage(&run_cfg, &backend, Some(&prior))
                .map_err(|e| e.in_stage(&format!("tiled stage (lambda {lambda}, tau {tau})")))?;
            if let Some(dir) = &a.save_dir {
                write_atomic(&dir.join(format!("latent_l{lambda}_t{tau}.flt1")), &flt1::encode(&latent))?;
            }
            let frames = Frame::video_from_tensor(&latent)?;
            let temporal = match frames.len() {
                0 | 1 => "NA".to_string(),
                _ => format!("{:.9e}", temporal_consistency(&frames, TEMPORAL_DIVISOR)?),
            };
            let _ = writeln!(
                report,
                "{lambda}\t{tau}\t{:.9e}\t{:.9e}\t{:.9e}\t{temporal}\t{:.9e}",
                latent.l2_distance(&prior)?,
                latent.max_abs_diff(&prior)?,
                tenengrad_video(&frames, SobelBorder::Replicate)?,
                prior_alignment(&frames, &prior_frames, &embedder)?,
            );
        }
    }
    match &a.out {
        Some(p) => write_atomic(p, report.as_bytes()),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}
