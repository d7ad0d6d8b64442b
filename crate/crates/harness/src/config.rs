//! Experiment configuration files.
//!
//! A config is TOML with one table per concern (`run`, `dataset`, `model`,
//! `loss`, `reg`, `augment`, `optimizer`, `eval`). Parsing is strict: unknown
//! keys, wrong types and out-of-range values are errors that carry the key and
//! the line. Every omitted value gets a default, and [`ExperimentConfig::to_toml`]
//! writes the fully resolved form back out.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crgan::augment::{default_augmentation, AugmentSpec};
use crgan::data::{self as cdata, Dataset};
use crgan::losses::LossKind;
use crgan::nn::{Activation, ArchSpec, Family};
use crgan::optim::{AdamConfig, Preset};
use crgan::regularizers::{CrMode, LayerRule, RegKind, RegSpec};
use crgan::trainer::{EvalConfig, TrainConfig};

use crate::error::{HarnessError, Result};

pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_EVAL_EVERY: usize = 1000;

mod display_fromstr {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub id: String,
    pub seed: u64,
    pub repeat: usize,
    pub out: PathBuf,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub augment_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Ring {
        modes: usize,
        radius: f64,
        sigma: f64,
        n: usize,
        seed: u64,
    },
    Sprites {
        side: usize,
        n: usize,
        seed: u64,
    },
    Cifar10 {
        path: PathBuf,
        subsample: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DatasetSpec::Ring { .. } => "ring",
            DatasetSpec::Sprites { .. } => "sprites",
            DatasetSpec::Cifar10 { .. } => "cifar10",
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            DatasetSpec::Ring { .. } => vec![2],
            DatasetSpec::Sprites { side, .. } => vec![1, *side, *side],
            DatasetSpec::Cifar10 { .. } => vec![3, 32, 32],
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSpec::Ring {
                modes,
                radius,
                sigma,
                n,
                seed,
            } => cdata::gen_ring(*modes, *radius, *sigma, *n, *seed)?.0,
            DatasetSpec::Sprites { side, n, seed } => cdata::gen_sprites(*side, *n, *seed)?,
            DatasetSpec::Cifar10 { path, subsample, seed } => cdata::load_cifar10(path, *subsample, *seed)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub family: Family,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub activation: Activation,
    pub g_activation: Activation,
    pub residual: bool,
    pub latent_dim: usize,
    pub sn: bool,
    pub g_sn: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSection {
    pub kind: LossKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegSection {
    #[serde(with = "display_fromstr")]
    pub kind: RegKind,
    pub lambda: f64,
    #[serde(with = "display_fromstr")]
    pub cr_mode: CrMode,
    #[serde(with = "display_fromstr")]
    pub layer_rule: LayerRule,
    pub dr_noise_scale: f64,
}

/// `"default"` defers to the dataset-dependent default augmentation.
#[derive(Clone, Debug, PartialEq)]
pub enum AugmentChoice {
    Default,
    Spec(AugmentSpec),
}

impl fmt::Display for AugmentChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentChoice::Default => f.write_str("default"),
            AugmentChoice::Spec(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for AugmentChoice {
    type Err = crgan::Error;

    fn from_str(s: &str) -> crgan::Result<Self> {
        if s == "default" {
            Ok(AugmentChoice::Default)
        } else {
            s.parse().map(AugmentChoice::Spec)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSection {
    #[serde(with = "display_fromstr")]
    pub spec: AugmentChoice,
}

/// Discriminator settings come from `preset` with `lr`, `beta1`, `beta2`,
/// `eps` and `n_dis` overriding it; the generator shares them unless
/// `g_lr`, `g_beta1` or `g_beta2` say otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub preset: Preset,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub n_dis: usize,
    pub g_lr: f64,
    pub g_beta1: f64,
    pub g_beta2: f64,
}

impl OptimizerSection {
    pub fn d_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            n_dis: self.n_dis,
        }
    }

    pub fn g_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.g_lr,
            beta1: self.g_beta1,
            beta2: self.g_beta2,
            ..self.d_adam()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub dataset: DatasetSpec,
    pub model: ModelSection,
    pub loss: LossSection,
    pub reg: RegSection,
    pub augment: AugmentSection,
    pub optimizer: OptimizerSection,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// One seed per repeat: `seed, seed + 1, ...`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.repeat as u64).map(|k| self.run.seed + k).collect()
    }

    pub fn arch(&self, generator: bool) -> ArchSpec {
        let m = &self.model;
        ArchSpec {
            family: m.family,
            hidden_widths: if generator { m.g_hidden.clone() } else { m.d_hidden.clone() },
            activation: if generator { m.g_activation } else { m.activation },
            residual: m.residual,
            input_shape: self.dataset.sample_shape(),
            latent_dim: m.latent_dim,
            use_spectral_norm: if generator { m.g_sn } else { m.sn },
        }
    }

    pub fn reg_spec(&self) -> RegSpec {
        RegSpec {
            kind: self.reg.kind,
            lambda: self.reg.lambda,
            cr_mode: self.reg.cr_mode,
            layer_rule: self.reg.layer_rule,
            dr_noise_scale: self.reg.dr_noise_scale,
            ..RegSpec::new(self.reg.kind)
        }
    }

    pub fn augment_spec(&self, data: &Dataset) -> Result<AugmentSpec> {
        Ok(match &self.augment.spec {
            AugmentChoice::Default => default_augmentation(&data.sample_shape, data.value_std())?,
            AugmentChoice::Spec(s) => s.clone(),
        })
    }

    /// The same config with `augment.spec = "default"` replaced by the
    /// concrete augmentation for `data`.
    pub fn with_concrete_augment(&self, data: &Dataset) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        out.augment.spec = AugmentChoice::Spec(self.augment_spec(data)?);
        Ok(out)
    }

    pub fn train_config(&self, data: &Dataset, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            g_arch: self.arch(true),
            d_arch: self.arch(false),
            loss: self.loss.kind,
            reg: self.reg_spec(),
            augment: self.augment_spec(data)?,
            d_adam: self.optimizer.d_adam(),
            g_adam: self.optimizer.g_adam(),
            batch_size: self.run.batch_size,
            steps: self.run.steps,
            seed,
            augment_only: self.run.augment_only,
            eval_every: self.run.eval_every,
            eval: self.eval.clone(),
        };
        cfg.validate(data)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved configs always serialize")
    }

    /// The resolved config as a TOML table, for grids that edit it.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("resolved configs always serialize")
    }
}

// Raw, all-optional mirror of the file. Defaults that depend on other values
// (lambda on the regularizer, preset on the family) are filled in `resolve`.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Raw {
    #[serde(default)]
    run: RawRun,
    dataset: Option<RawDataset>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    loss: RawLoss,
    #[serde(default)]
    reg: RawReg,
    #[serde(default)]
    augment: RawAugment,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    eval: RawEval,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    id: Option<String>,
    seed: Option<u64>,
    repeat: Option<usize>,
    out: Option<PathBuf>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    eval_every: Option<usize>,
    augment_only: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    kind: Option<String>,
    modes: Option<usize>,
    radius: Option<f64>,
    sigma: Option<f64>,
    n: Option<usize>,
    side: Option<usize>,
    path: Option<PathBuf>,
    subsample: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    family: Option<String>,
    g_hidden: Option<Vec<usize>>,
    d_hidden: Option<Vec<usize>>,
    activation: Option<String>,
    g_activation: Option<String>,
    residual: Option<bool>,
    latent_dim: Option<usize>,
    sn: Option<bool>,
    g_sn: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    kind: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReg {
    kind: Option<String>,
    lambda: Option<f64>,
    cr_mode: Option<String>,
    layer_rule: Option<String>,
    dr_noise_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAugment {
    spec: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    preset: Option<String>,
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    n_dis: Option<usize>,
    g_lr: Option<f64>,
    g_beta1: Option<f64>,
    g_beta2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    samples: Option<usize>,
    feature_dim: Option<usize>,
    probe_n: Option<usize>,
}

/// Maps dotted keys back to source lines.
pub(crate) struct Locator<'a> {
    text: Option<&'a str>,
}

impl<'a> Locator<'a> {
    pub(crate) fn new(text: Option<&'a str>) -> Self {
        Locator { text }
    }

    /// `(line number, dotted key)` for every assignment and table header.
    fn entries(&self) -> Vec<(usize, String)> {
        let Some(text) = self.text else { return Vec::new() };
        let mut section = String::new();
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = h.trim().to_string();
                out.push((i + 1, section.clone()));
            } else if let Some((lhs, _)) = line.split_once('=') {
                let key: String = lhs.trim().split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
                let full = if section.is_empty() { key } else { format!("{section}.{key}") };
                out.push((i + 1, full));
            }
        }
        out
    }

    pub(crate) fn line_of(&self, key: &str) -> Option<usize> {
        let entries = self.entries();
        entries
            .iter()
            .find(|(_, k)| k == key)
            .or_else(|| {
                let section = key.split('.').next().unwrap_or(key);
                entries.iter().find(|(_, k)| k == section)
            })
            .map(|(l, _)| *l)
    }

    fn key_at(&self, line: usize) -> Option<String> {
        self.entries().into_iter().filter(|(l, _)| *l <= line).last().map(|(_, k)| k)
    }

    pub(crate) fn err(&self, key: &str, message: impl fmt::Display) -> HarnessError {
        HarnessError::config(self.line_of(key), key, message.to_string())
    }

    pub(crate) fn toml_error(&self, e: &toml::de::Error) -> HarnessError {
        let text = self.text.unwrap_or("");
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let mut key = line.and_then(|l| self.key_at(l)).unwrap_or_default();
        // Unknown keys are reported at the key itself; name the offending key.
        if let (Some(span), true) = (e.span(), e.message().starts_with("unknown field")) {
            let bad = text[span].trim().trim_matches('"');
            let section = line.and_then(|l| self.section_at(l)).unwrap_or_default();
            key = if section.is_empty() || section == bad { bad.to_string() } else { format!("{section}.{bad}") };
        }
        if key.is_empty() {
            key = "<document>".into();
        }
        HarnessError::config(line, key, e.message().trim())
    }

    fn section_at(&self, line: usize) -> Option<String> {
        let text = self.text?;
        let mut section = String::new();
        for raw in text.lines().take(line) {
            let l = strip_comment(raw).trim();
            if let Some(h) = l.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = h.trim().to_string();
            }
        }
        Some(section)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_named<T: FromStr>(loc: &Locator, key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| loc.err(key, e))
}

fn serde_named<T: for<'de> Deserialize<'de>>(loc: &Locator, key: &str, v: &str, expected: &str) -> Result<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(v))
        .map_err(|_| loc.err(key, format!("unknown value {v:?} (expected {expected})")))
}

fn reject(loc: &Locator, kind: &str, key: &str, present: bool) -> Result<()> {
    if present {
        Err(loc.err(&format!("dataset.{key}"), format!("not used by {kind} datasets")))
    } else {
        Ok(())
    }
}

fn positive(loc: &Locator, key: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(loc.err(key, "must be at least 1"))
    } else {
        Ok(v)
    }
}

fn resolve_dataset(raw: Option<RawDataset>, loc: &Locator) -> Result<DatasetSpec> {
    let raw = raw.ok_or_else(|| HarnessError::config(None, "dataset", "missing [dataset] table"))?;
    let kind = raw.kind.as_deref().ok_or_else(|| loc.err("dataset.kind", "missing (ring, sprites or cifar10)"))?;
    let seed = raw.seed.unwrap_or(0);
    let spec = match kind {
        "ring" => {
            reject(loc, kind, "side", raw.side.is_some())?;
            reject(loc, kind, "path", raw.path.is_some())?;
            reject(loc, kind, "subsample", raw.subsample.is_some())?;
            DatasetSpec::Ring {
                modes: raw.modes.unwrap_or(8),
                radius: raw.radius.unwrap_or(2.0),
                sigma: raw.sigma.unwrap_or(0.02),
                n: raw.n.unwrap_or(8000),
                seed,
            }
        }
        "sprites" => {
            for (k, p) in [("modes", raw.modes.is_some()), ("radius", raw.radius.is_some()), ("sigma", raw.sigma.is_some())] {
                reject(loc, kind, k, p)?;
            }
            reject(loc, kind, "path", raw.path.is_some())?;
            reject(loc, kind, "subsample", raw.subsample.is_some())?;
            DatasetSpec::Sprites {
                side: raw.side.unwrap_or(16),
                n: raw.n.unwrap_or(4096),
                seed,
            }
        }
        "cifar10" => {
            for (k, p) in [
                ("modes", raw.modes.is_some()),
                ("radius", raw.radius.is_some()),
                ("sigma", raw.sigma.is_some()),
                ("side", raw.side.is_some()),
                ("n", raw.n.is_some()),
            ] {
                reject(loc, kind, k, p)?;
            }
            DatasetSpec::Cifar10 {
                path: raw.path.ok_or_else(|| loc.err("dataset.path", "cifar10 needs the directory of the binary batches"))?,
                subsample: positive(loc, "dataset.subsample", raw.subsample.unwrap_or(5000))?,
                seed,
            }
        }
        other => return Err(loc.err("dataset.kind", format!("unknown value {other:?} (expected ring, sprites or cifar10)"))),
    };
    match &spec {
        DatasetSpec::Ring { modes, radius, sigma, n, .. } => {
            if *modes < 2 {
                return Err(loc.err("dataset.modes", "need at least two modes"));
            }
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(loc.err("dataset.radius", "must be positive"));
            }
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(loc.err("dataset.sigma", "must be positive"));
            }
            if *n < 10 * modes {
                return Err(loc.err("dataset.n", "need at least 10 samples per mode"));
            }
        }
        DatasetSpec::Sprites { side, n, .. } => {
            if *side != 8 && *side != 16 {
                return Err(loc.err("dataset.side", "must be 8 or 16"));
            }
            if *n < 256 {
                return Err(loc.err("dataset.n", "need at least 256 sprites"));
            }
        }
        DatasetSpec::Cifar10 { .. } => {}
    }
    Ok(spec)
}

fn core_key(field: &str, generator: bool) -> String {
    let hidden = if generator { "model.g_hidden" } else { "model.d_hidden" };
    match field {
        "input_shape" => "model.family".into(),
        "latent_dim" => "model.latent_dim".into(),
        _ => hidden.into(),
    }
}

pub(crate) fn resolve(raw: Raw, loc: &Locator) -> Result<ExperimentConfig> {
    let dataset = resolve_dataset(raw.dataset, loc)?;
    let image = dataset.sample_shape().len() == 3;

    let r = raw.run;
    let id = r.id.unwrap_or_else(|| "run".into());
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
        return Err(loc.err("run.id", "must be non-empty and use only letters, digits, '.', '_' and '-'"));
    }
    let run = RunSection {
        id,
        seed: r.seed.unwrap_or(0),
        repeat: positive(loc, "run.repeat", r.repeat.unwrap_or(1))?,
        out: r.out.unwrap_or_else(|| PathBuf::from("runs")),
        steps: positive(loc, "run.steps", r.steps.unwrap_or(DEFAULT_STEPS))?,
        batch_size: positive(loc, "run.batch_size", r.batch_size.unwrap_or(DEFAULT_BATCH))?,
        eval_every: positive(loc, "run.eval_every", r.eval_every.unwrap_or(DEFAULT_EVAL_EVERY))?,
        augment_only: r.augment_only.unwrap_or(false),
    };

    let m = raw.model;
    let family: Family = match &m.family {
        Some(f) => serde_named(loc, "model.family", f, "mlp or conv")?,
        None if image => Family::Conv,
        None => Family::Mlp,
    };
    let activation: Activation = match &m.activation {
        Some(a) => serde_named(loc, "model.activation", a, "relu or leaky_relu")?,
        None => Activation::LeakyRelu,
    };
    let g_activation = match &m.g_activation {
        Some(a) => serde_named(loc, "model.g_activation", a, "relu or leaky_relu")?,
        None => activation,
    };
    let (g_default, d_default) = match family {
        Family::Mlp => (vec![64, 64], vec![64, 64]),
        Family::Conv => (vec![32, 16], vec![16, 32]),
    };
    let model = ModelSection {
        family,
        g_hidden: m.g_hidden.unwrap_or(g_default),
        d_hidden: m.d_hidden.unwrap_or(d_default),
        activation,
        g_activation,
        residual: m.residual.unwrap_or(false),
        latent_dim: m.latent_dim.unwrap_or(if image { 32 } else { 8 }),
        sn: m.sn.unwrap_or(true),
        g_sn: m.g_sn.unwrap_or(false),
    };

    let loss = LossSection {
        kind: match &raw.loss.kind {
            Some(k) => parse_named::<LossKind>(loc, "loss.kind", k)?,
            None => LossKind::Ns,
        },
    };

    let rr = raw.reg;
    let kind: RegKind = match &rr.kind {
        Some(k) => parse_named(loc, "reg.kind", k)?,
        None => RegKind::None,
    };
    let reg = RegSection {
        kind,
        lambda: rr.lambda.unwrap_or(kind.default_lambda()),
        cr_mode: match &rr.cr_mode {
            Some(c) => parse_named(loc, "reg.cr_mode", c)?,
            None => CrMode::Real,
        },
        layer_rule: match &rr.layer_rule {
            Some(l) => parse_named(loc, "reg.layer_rule", l)?,
            None => LayerRule::Final,
        },
        dr_noise_scale: rr.dr_noise_scale.unwrap_or(0.5),
    };

    let augment = AugmentSection {
        spec: match &raw.augment.spec {
            Some(s) => parse_named(loc, "augment.spec", s)?,
            None => AugmentChoice::Default,
        },
    };

    let o = raw.optimizer;
    let preset: Preset = match &o.preset {
        Some(p) => parse_named(loc, "optimizer.preset", p)?,
        None if model.residual => Preset::D,
        None => Preset::C,
    };
    let base = preset.config();
    let lr = o.lr.unwrap_or(base.lr);
    let beta1 = o.beta1.unwrap_or(base.beta1);
    let beta2 = o.beta2.unwrap_or(base.beta2);
    let optimizer = OptimizerSection {
        preset,
        lr,
        beta1,
        beta2,
        eps: o.eps.unwrap_or(base.eps),
        n_dis: o.n_dis.unwrap_or(base.n_dis),
        g_lr: o.g_lr.unwrap_or(lr),
        g_beta1: o.g_beta1.unwrap_or(beta1),
        g_beta2: o.g_beta2.unwrap_or(beta2),
    };

    let defaults = EvalConfig::default();
    let eval = EvalConfig {
        samples: raw.eval.samples.unwrap_or(defaults.samples),
        feature_dim: positive(loc, "eval.feature_dim", raw.eval.feature_dim.unwrap_or(defaults.feature_dim))?,
        probe_n: positive(loc, "eval.probe_n", raw.eval.probe_n.unwrap_or(defaults.probe_n))?,
    };
    if eval.samples <= eval.feature_dim {
        return Err(loc.err("eval.samples", "must exceed eval.feature_dim"));
    }

    let cfg = ExperimentConfig {
        run,
        dataset,
        model,
        loss,
        reg,
        augment,
        optimizer,
        eval,
    };
    check(&cfg, loc)?;
    Ok(cfg)
}

/// Validation that needs the assembled config.
fn check(cfg: &ExperimentConfig, loc: &Locator) -> Result<()> {
    for generator in [true, false] {
        if let Err(e) = cfg.arch(generator).validate() {
            let key = match &e {
                crgan::Error::Invalid { field, .. } => core_key(field, generator),
                _ => "model".into(),
            };
            return Err(loc.err(&key, e));
        }
    }
    let layers = cfg.model.d_hidden.len() + 1;
    let spec = cfg.reg_spec();
    if let Err(e) = spec.validate(layers) {
        let key = match &e {
            crgan::Error::Invalid { field, .. } => format!("reg.{field}"),
            _ => "reg".into(),
        };
        return Err(loc.err(&key, e));
    }
    if let AugmentChoice::Spec(s) = &cfg.augment.spec {
        s.validate(&cfg.dataset.sample_shape()).map_err(|e| loc.err("augment.spec", e))?;
    }
    for (adam, generator) in [(cfg.optimizer.d_adam(), false), (cfg.optimizer.g_adam(), true)] {
        if let Err(e) = adam.validate() {
            let field = match &e {
                crgan::Error::Invalid { field, .. } => field.to_string(),
                _ => String::new(),
            };
            let key = match (generator, field.as_str()) {
                (true, "lr" | "beta1" | "beta2") => format!("optimizer.g_{field}"),
                (_, "") => "optimizer".into(),
                _ => format!("optimizer.{field}"),
            };
            return Err(loc.err(&key, e));
        }
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let loc = Locator::new(Some(text));
    let raw: Raw = toml::from_str(text).map_err(|e| loc.toml_error(&e))?;
    resolve(raw, &loc)
}

/// Resolves an already-parsed table; errors carry keys but no lines.
pub fn config_from_table(table: toml::Table) -> Result<ExperimentConfig> {
    let loc = Locator::new(None);
    let raw: Raw = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::config(None, "<table>", e.message().trim()))?;
    resolve(raw, &loc)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text)
}
