//! Alternating discriminator/generator training with pluggable loss,
//! regularizer and augmentation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{extract_stats, frechet_distance, mode_coverage, FeatureEncoder, GaussianStats};
use crate::losses::{disc_loss, gen_loss, LossKind};
use crate::nn::{build_model, ArchSpec, Bound, Model, Role, SnMode};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::regularizers::{
    consistency_loss, cr_pairs, dragan_penalty, gradient_penalty, jsr_from_gradients, total_disc_loss, Critic, RegKind,
    RegSpec, Source,
};
use crate::rng::Rng;
use crate::tensor::{self as t, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub samples: usize,
    pub feature_dim: usize,
    pub probe_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 2000,
            feature_dim: crate::eval::DEFAULT_FEATURE_DIM,
            probe_n: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub g_arch: ArchSpec,
    pub d_arch: ArchSpec,
    pub loss: LossKind,
    pub reg: RegSpec,
    pub augment: AugmentSpec,
    pub d_adam: AdamConfig,
    pub g_adam: AdamConfig,
    pub batch_size: usize,
    /// Generator steps.
    pub steps: usize,
    pub seed: u64,
    pub augment_only: bool,
    pub eval_every: usize,
    pub eval: EvalConfig,
}

impl TrainConfig {
    pub fn sn_enabled(&self) -> bool {
        self.d_arch.use_spectral_norm
    }

    /// Discriminator updates per generator update.
    pub fn n_dis(&self) -> usize {
        self.d_adam.n_dis
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be at least 1"));
        }
        self.g_arch.validate()?;
        self.d_arch.validate()?;
        for (name, arch) in [("generator", &self.g_arch), ("discriminator", &self.d_arch)] {
            if arch.input_shape != data.sample_shape {
                return Err(Error::invalid(
                    "input_shape",
                    format!("{name} expects {:?} but the dataset has {:?}", arch.input_shape, data.sample_shape),
                ));
            }
        }
        self.reg.validate(self.d_arch.hidden_widths.len() + 1)?;
        self.augment.validate(&data.sample_shape)?;
        self.d_adam.validate()?;
        self.g_adam.validate()?;
        if data.train.len() < self.batch_size {
            return Err(Error::invalid(
                "batch_size",
                format!("train split has {} samples, fewer than the batch size {}", data.train.len(), self.batch_size),
            ));
        }
        if self.eval.samples < self.eval.feature_dim + 1 {
            return Err(Error::invalid("eval.samples", "must exceed the feature dimension"));
        }
        if self.eval.probe_n == 0 {
            return Err(Error::invalid("eval.probe_n", "must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_reg: f64,
    pub disc_step_seconds: f64,
    pub fd: f64,
    pub coverage: Option<usize>,
    pub hq_frac: Option<f64>,
    pub acc_train: Option<f64>,
    pub acc_test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_reg: f64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub d_steps: usize,
    pub g_steps: usize,
    pub d_forwards: usize,
    pub g_forwards: usize,
    /// Backward passes recorded for later differentiation.
    pub create_graph_passes: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<MetricsRecord>,
    pub diverged: Option<Divergence>,
    pub best_fd: Option<f64>,
    pub counters: Counters,
    pub g: Model,
    pub d: Model,
}

impl RunResult {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Receives every metrics record together with the current models.
pub trait Observer {
    fn on_record(&mut self, _record: &MetricsRecord, _g: &Model, _d: &Model) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

struct Streams {
    data: Rng,
    latent: Rng,
    augment: Rng,
    penalty: Rng,
    eval: Rng,
    probe: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let root = Rng::new(seed, "train");
        Streams {
            data: root.derive("data"),
            latent: root.derive("latent"),
            augment: root.derive("augment"),
            penalty: root.derive("penalty"),
            eval: root.derive("eval"),
            probe: root.derive("probe"),
        }
    }
}

/// Losses of the most recent step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub l_d: f64,
    pub l_g: f64,
    pub l_reg: f64,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    pub g: Model,
    pub d: Model,
    g_opt: AdamState,
    d_opt: AdamState,
    rng: Streams,
    encoder: FeatureEncoder,
    reference: Option<GaussianStats>,
    pub counters: Counters,
    pub last: StepLosses,
    step: usize,
    disc_seconds: Vec<f64>,
}

fn latent(rng: &mut Rng, n: usize, dim: usize) -> Result<Tensor> {
    Tensor::new(vec![n, dim], rng.normal_vec(n * dim, 1.0))
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate(data)?;
        let g = build_model(&cfg.g_arch, Role::Generator, cfg.seed)?;
        let d = build_model(&cfg.d_arch, Role::Discriminator, cfg.seed)?;
        let encoder = FeatureEncoder::new(&data.sample_shape, cfg.eval.feature_dim)?;
        Ok(Trainer {
            g_opt: AdamState::new(g.params()),
            d_opt: AdamState::new(d.params()),
            g,
            d,
            rng: Streams::new(cfg.seed),
            encoder,
            reference: None,
            counters: Counters::default(),
            last: StepLosses::default(),
            step: 0,
            disc_seconds: Vec::new(),
            cfg,
            data,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// One discriminator update; returns `(L_D, regularizer value)`.
    pub fn disc_step(&mut self) -> Result<(f64, f64)> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let m = cfg.batch_size;
        let tape = Tape::new();
        let db = self.d.bind(Some(&tape), SnMode::Update)?;
        let gb = self.g.bind(None, SnMode::Frozen)?;

        let real = self.data.train_batch(m, &mut self.rng.data);
        let z = latent(&mut self.rng.latent, m, cfg.g_arch.latent_dim)?;
        let fake = gb.generator_forward(&z)?;
        self.counters.g_forwards += 1;
        let real = if cfg.augment_only {
            augment(&cfg.augment, &real, &mut self.rng.augment)?
        } else {
            real
        };

        let jsr = cfg.reg.kind == RegKind::Jsr;
        let (real_in, fake_in) = if jsr { (tape.var(&real)?, tape.var(&fake)?) } else { (real.clone(), fake.clone()) };
        let (real_logits, real_taps) = db.discriminator_forward(&real_in)?;
        let (fake_logits, fake_taps) = db.discriminator_forward(&fake_in)?;
        let l_d = disc_loss(cfg.loss, &real_logits, &fake_logits)?;

        let reg = match cfg.reg.kind {
            RegKind::None => None,
            RegKind::Cr if cfg.augment_only => None,
            RegKind::Cr => {
                let mut total: Option<Tensor> = None;
                for pair in cr_pairs(cfg.reg.cr_mode, &real, &fake, &cfg.augment, &mut self.rng.augment)? {
                    let taps_x = match pair.source {
                        Source::Real => &real_taps,
                        Source::Fake => &fake_taps,
                    };
                    let (_, taps_tx) = db.discriminator_forward(&pair.tx)?;
                    let term = consistency_loss(taps_x, &taps_tx, &cfg.reg.layer_rule)?;
                    total = Some(match total {
                        Some(acc) => t::add(&acc, &term)?,
                        None => term,
                    });
                }
                total
            }
            RegKind::Gp => Some(gradient_penalty(&db, &tape, &real, &fake, &mut self.rng.penalty)?),
            RegKind::Dr => Some(dragan_penalty(&db, &tape, &real, &mut self.rng.penalty, &cfg.reg)?),
            RegKind::Jsr => {
                // Each logit depends only on its own row, so one pass over
                // Σ D(x) + Σ D(x̃) yields both input gradients.
                let both = t::add(&t::reduce_sum(&real_logits)?, &t::reduce_sum(&fake_logits)?)?;
                let mut g = t::gradient(&both, &[&real_in, &fake_in], true)?;
                let gf = g.pop().expect("two gradients");
                let gr = g.pop().expect("two gradients");
                Some(jsr_from_gradients(&gr, &gf)?)
            }
        };
        let (loss, l_reg) = match &reg {
            Some(r) => (total_disc_loss(&l_d, r, cfg.reg.lambda)?, r.item()),
            None => (l_d.clone(), 0.0),
        };
        let leaves: Vec<&Tensor> = db.leaves().iter().collect();
        let grads = t::gradient(&loss, &leaves, false)?;
        adam_step(&mut self.d_opt, self.d.params_mut(), &grads, &cfg.d_adam)?;

        self.counters.d_steps += 1;
        self.counters.d_forwards += db.forward_count();
        self.counters.create_graph_passes += tape.stats().create_graph_passes;
        self.disc_seconds.push(started.elapsed().as_secs_f64());
        self.last.l_d = l_d.item();
        self.last.l_reg = l_reg;
        Ok((self.last.l_d, l_reg))
    }

    /// Gradients of the generator loss at the current parameters for latents `z`.
    pub fn generator_gradients(&mut self, z: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let tape = Tape::new();
        let gb = self.g.bind(Some(&tape), SnMode::Update)?;
        let db = self.d.bind(None, SnMode::Frozen)?;
        let fake = gb.generator_forward(z)?;
        let (logits, _) = db.discriminator_forward(&fake)?;
        self.counters.g_forwards += 1;
        self.counters.d_forwards += 1;
        let l_g = gen_loss(self.cfg.loss, &logits)?;
        let leaves: Vec<&Tensor> = gb.leaves().iter().collect();
        Ok((l_g.item(), t::gradient(&l_g, &leaves, false)?))
    }

    pub fn gen_step(&mut self) -> Result<f64> {
        let z = latent(&mut self.rng.latent, self.cfg.batch_size, self.cfg.g_arch.latent_dim)?;
        let (l_g, grads) = self.generator_gradients(&z)?;
        adam_step(&mut self.g_opt, self.g.params_mut(), &grads, &self.cfg.g_adam)?;
        self.counters.g_steps += 1;
        self.last.l_g = l_g;
        Ok(l_g)
    }

    /// `n_dis` discriminator updates followed by one generator update.
    pub fn iteration(&mut self) -> Result<()> {
        for _ in 0..self.cfg.n_dis() {
            self.disc_step()?;
        }
        self.gen_step()?;
        self.step += 1;
        Ok(())
    }

    pub fn generate(&mut self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let gb = self.g.bind(None, SnMode::Frozen)?;
        let mut parts = Vec::new();
        for start in (0..n).step_by(256) {
            let len = 256.min(n - start);
            parts.push(gb.generator_forward(&latent(rng, len, self.cfg.g_arch.latent_dim)?)?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        t::concat_rows(&refs)
    }

    fn reference(&mut self) -> Result<&GaussianStats> {
        if self.reference.is_none() {
            let set = self.data.reference_set(self.cfg.eval.samples)?;
            self.reference = Some(extract_stats(&self.encoder, &set)?);
        }
        Ok(self.reference.as_ref().expect("just set"))
    }

    pub fn evaluate(&mut self) -> Result<MetricsRecord> {
        let n = self.cfg.eval.samples;
        let mut eval_rng = self.rng.eval.clone();
        let samples = self.generate(n, &mut eval_rng)?;
        self.rng.eval = eval_rng;
        let stats = extract_stats(&self.encoder, &samples)?;
        let fd = frechet_distance(&stats, self.reference()?)?;
        let (coverage, hq_frac) = match &self.data.mixture {
            Some(mix) => {
                let (c, hq) = mode_coverage(samples.data(), mix, None)?;
                (Some(c), Some(hq))
            }
            None => (None, None),
        };
        let (acc_train, acc_test) = if probe_supported(self.cfg.loss) {
            let db = self.d.bind(None, SnMode::Frozen)?;
            let gb = self.g.bind(None, SnMode::Frozen)?;
            let (a, b) = probe_discriminator_accuracy(self.cfg.loss, &db, &gb, self.data, self.cfg.eval.probe_n, &mut self.rng.probe)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let secs = if self.disc_seconds.is_empty() {
            f64::MIN_POSITIVE
        } else {
            (self.disc_seconds.iter().sum::<f64>() / self.disc_seconds.len() as f64).max(f64::MIN_POSITIVE)
        };
        self.disc_seconds.clear();
        Ok(MetricsRecord {
            step: self.step,
            l_d: self.last.l_d,
            l_g: self.last.l_g,
            l_reg: self.last.l_reg,
            disc_step_seconds: secs,
            fd,
            coverage,
            hq_frac,
            acc_train,
            acc_test,
        })
    }

    pub fn into_models(self) -> (Model, Model) {
        (self.g, self.d)
    }
}

/// Runs the full schedule, emitting a record every `eval_every` generator
/// steps and after the last one. A non-finite loss or gradient stops the run
/// and is reported in `diverged`.
pub fn train(cfg: &TrainConfig, data: &Dataset, observer: &mut dyn Observer) -> Result<RunResult> {
    let mut tr = Trainer::new(cfg.clone(), data)?;
    let mut records = Vec::new();
    let mut diverged = None;
    for step in 1..=cfg.steps {
        if let Err(e) = tr.iteration() {
            if !e.is_non_finite() {
                return Err(e);
            }
            diverged = Some(Divergence {
                step,
                l_d: tr.last.l_d,
                l_g: tr.last.l_g,
                l_reg: tr.last.l_reg,
                reason: e.to_string(),
            });
            break;
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let rec = match tr.evaluate() {
                Ok(r) => r,
                Err(e) if e.is_non_finite() => {
                    diverged = Some(Divergence {
                        step,
                        l_d: tr.last.l_d,
                        l_g: tr.last.l_g,
                        l_reg: tr.last.l_reg,
                        reason: e.to_string(),
                    });
                    break;
                }
                Err(e) => return Err(e),
            };
            observer.on_record(&rec, &tr.g, &tr.d)?;
            records.push(rec);
        }
    }
    let best_fd = records.iter().map(|r| r.fd).fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.min(v))));
    let counters = tr.counters;
    let (g, d) = tr.into_models();
    Ok(RunResult {
        records,
        diverged,
        best_fd,
        counters,
        g,
        d,
    })
}

pub fn probe_supported(kind: LossKind) -> bool {
    matches!(kind, LossKind::Ns | LossKind::Hinge)
}

/// Fraction of correctly classified samples when `n` real and `n` fake
/// samples are labelled by the sign of their logit (`>= 0` means real).
pub fn accuracy_from_logits(real: &[f64], fake: &[f64]) -> f64 {
    let correct = real.iter().filter(|&&l| l >= 0.0).count() + fake.iter().filter(|&&l| l < 0.0).count();
    correct as f64 / (real.len() + fake.len()) as f64
}

/// Returns `(train accuracy, heldout accuracy)`, both against the same `n`
/// generated samples.
pub fn probe_discriminator_accuracy(kind: LossKind, d: &dyn Critic, g: &Bound, data: &Dataset, n: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if !probe_supported(kind) {
        return Err(Error::invalid("loss", format!("accuracy probe needs a thresholded loss, not {kind}")));
    }
    if n == 0 {
        return Err(Error::invalid("probe_n", "must be at least 1"));
    }
    let train = data.train_batch(n, rng);
    let held = data.heldout_batch(n, rng)?;
    let latent_dim = g_latent(g)?;
    let fake = g.generator_forward(&latent(rng, n, latent_dim)?)?;
    let fl = d.logits(&fake)?;
    let tr = d.logits(&train)?;
    let te = d.logits(&held)?;
    Ok((accuracy_from_logits(tr.data(), fl.data()), accuracy_from_logits(te.data(), fl.data())))
}

fn g_latent(g: &Bound) -> Result<usize> {
    let first = g.leaves().first().ok_or_else(|| Error::invalid("generator", "no parameters"))?;
    Ok(first.shape()[0])
}

/// Wall-clock seconds per discriminator step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub mean: f64,
    pub std: f64,
    pub steps: usize,
}

pub const TIMING_WARMUP: usize = 50;
pub const TIMING_STEPS: usize = 200;

/// Times `steps` discriminator updates after `warmup` untimed ones.
pub fn time_disc_step(cfg: &TrainConfig, data: &Dataset, warmup: usize, steps: usize) -> Result<StepTiming> {
    Ok(time_disc_steps(std::slice::from_ref(cfg), data, warmup, steps)?.remove(0))
}

/// Like [`time_disc_step`] for several configs at once. Timed steps are taken
/// round-robin across configs so that slow drift in machine load affects all
/// of them alike.
pub fn time_disc_steps(cfgs: &[TrainConfig], data: &Dataset, warmup: usize, steps: usize) -> Result<Vec<StepTiming>> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let mut trainers = cfgs.iter().map(|c| Trainer::new(c.clone(), data)).collect::<Result<Vec<_>>>()?;
    for tr in &mut trainers {
        for _ in 0..warmup {
            tr.disc_step()?;
        }
    }
    let mut times = vec![Vec::with_capacity(steps); trainers.len()];
    for _ in 0..steps {
        for (tr, ts) in trainers.iter_mut().zip(&mut times) {
            let t0 = Instant::now();
            tr.disc_step()?;
            ts.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(times
        .iter()
        .map(|ts| {
            let mean = ts.iter().sum::<f64>() / steps as f64;
            let std = (ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / steps as f64).sqrt();
            StepTiming { mean, std, steps }
        })
        .collect())
}
