//! Discriminator step cost per regularizer on one architecture.

use serde::Serialize;

use crgan::data::Dataset;
use crgan::regularizers::RegKind;
use crgan::trainer::time_disc_steps;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub reg: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub steps: usize,
}

/// Times `cfg` with each regularizer in `kinds` (default lambdas), all on the
/// same data, architecture and seed. Steps of the variants are interleaved.
pub fn time_variants(cfg: &ExperimentConfig, data: &Dataset, kinds: &[RegKind], warmup: usize, steps: usize) -> Result<Vec<TimingRow>> {
    let cfgs = kinds
        .iter()
        .map(|&kind| {
            let mut c = cfg.clone();
            c.reg.kind = kind;
            c.reg.lambda = kind.default_lambda();
            c.train_config(data, cfg.run.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let timings = time_disc_steps(&cfgs, data, warmup, steps)?;
    Ok(kinds
        .iter()
        .zip(timings)
        .map(|(kind, t)| TimingRow {
            reg: kind.to_string(),
            mean_ms: t.mean * 1e3,
            std_ms: t.std * 1e3,
            steps: t.steps,
        })
        .collect())
}
