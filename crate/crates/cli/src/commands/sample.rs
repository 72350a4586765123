use fresco_core::flt1;

use crate::config::{RunConfig, RunManifest};
use crate::error::CliResult;
use crate::io::write_atomic;
use crate::pipeline::{self, Backend};
use crate::SampleArgs;

pub fn run(a: &SampleArgs) -> CliResult<()> {
    let overrides = a.config.overrides();
    let cfg = match &a.manifest {
        Some(m) => RunManifest::load(m)?.config.with_overrides(&overrides)?,
        None => RunConfig::load(a.config.config.as_deref(), &overrides)?,
    };
    let out = pipeline::run(&cfg)?;

    let latent_path = a.out.join("latent.flt1");
    let trace_path = a.out.join("trace.tsv");
    let prior_path = out.prior.as_ref().map(|_| a.out.join("prior.flt1"));
    write_atomic(&latent_path, &flt1::encode(&out.latent))?;
    write_atomic(&trace_path, out.trace.to_tsv().as_bytes())?;
    if let (Some(p), Some(path)) = (&out.prior, &prior_path) {
        write_atomic(path, &flt1::encode(p))?;
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        output: latent_path.clone(),
        trace: trace_path,
        prior_output: prior_path,
        inputs: Backend::inputs(&cfg),
        timings: out.timings,
        config: cfg,
    };
    write_atomic(&a.out.join("manifest.toml"), manifest.to_toml().as_bytes())?;
    println!("{}", latent_path.display());
    Ok(())
}
