pub mod metrics;
pub mod plan;
pub mod sample;
pub mod serve;
pub mod sweep;
