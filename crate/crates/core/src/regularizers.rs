//! Consistency regularization and the gradient-based baselines.

use std::fmt;
use std::str::FromStr;

use crate::augment::{augment, AugmentSpec};
use crate::error::{Error, Result};
use crate::nn::Bound;
use crate::rng::Rng;
use crate::tensor::{self as t, Tape, Tensor};

/// Added under the square root of gradient norms.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegKind {
    None,
    Cr,
    Gp,
    Dr,
    Jsr,
}

impl RegKind {
    pub const ALL: [RegKind; 5] = [RegKind::None, RegKind::Cr, RegKind::Gp, RegKind::Dr, RegKind::Jsr];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Cr => "cr",
            RegKind::Gp => "gp",
            RegKind::Dr => "dr",
            RegKind::Jsr => "jsr",
        }
    }

    /// 10 for cr/gp/dr, 0.1 for jsr.
    pub fn default_lambda(self) -> f64 {
        match self {
            RegKind::None => 0.0,
            RegKind::Jsr => 0.1,
            RegKind::Cr | RegKind::Gp | RegKind::Dr => 10.0,
        }
    }

    pub fn needs_input_gradient(self) -> bool {
        matches!(self, RegKind::Gp | RegKind::Dr | RegKind::Jsr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrMode {
    Real,
    Fake,
    All,
}

impl CrMode {
    pub const ALL: [CrMode; 3] = [CrMode::Real, CrMode::Fake, CrMode::All];

    pub fn name(self) -> &'static str {
        match self {
            CrMode::Real => "real",
            CrMode::Fake => "fake",
            CrMode::All => "all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerWeights {
    /// `λ_j = 1 / d_j`, with `d_j` the per-sample size of tap `j`.
    InverseDim,
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerRule {
    Final,
    /// Taps `m..=n`, 1-based.
    Range { m: usize, n: usize, weights: LayerWeights },
}

macro_rules! named_enum {
    ($ty:ty, $field:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                <$ty>::ALL
                    .into_iter()
                    .find(|k| k.name() == s)
                    .ok_or_else(|| Error::invalid($field, format!("unknown value {s:?}")))
            }
        }
    };
}

named_enum!(RegKind, "reg");
named_enum!(CrMode, "cr_mode");

impl fmt::Display for LayerRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRule::Final => f.write_str("final"),
            LayerRule::Range { m, n, weights } => {
                let w = match weights {
                    LayerWeights::InverseDim => "invdim",
                    LayerWeights::Equal => "equal",
                };
                write!(f, "range:{m}:{n}:{w}")
            }
        }
    }
}

impl FromStr for LayerRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("layer_rule", format!("cannot parse {s:?} (expected final or range:m:n:invdim|equal)"));
        if s == "final" {
            return Ok(LayerRule::Final);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let [ "range", m, n, w ] = parts.as_slice() else {
            return Err(bad());
        };
        let (m, n): (usize, usize) = (m.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?);
        let weights = match *w {
            "invdim" => LayerWeights::InverseDim,
            "equal" => LayerWeights::Equal,
            _ => return Err(bad()),
        };
        if m == 0 || m > n {
            return Err(Error::invalid("layer_rule", format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        Ok(LayerRule::Range { m, n, weights })
    }
}

impl LayerRule {
    pub fn validate(&self, layer_count: usize) -> Result<()> {
        match *self {
            LayerRule::Final => Ok(()),
            LayerRule::Range { m, n, .. } if m >= 1 && m <= n && n <= layer_count => Ok(()),
            LayerRule::Range { m, n, .. } => Err(Error::invalid(
                "layer_rule",
                format!("range {m}..{n} outside the discriminator's {layer_count} layers"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegSpec {
    pub kind: RegKind,
    pub lambda: f64,
    pub cr_mode: CrMode,
    pub layer_rule: LayerRule,
    pub dr_noise_scale: f64,
    pub target_norm: f64,
}

impl RegSpec {
    pub fn new(kind: RegKind) -> Self {
        RegSpec {
            kind,
            lambda: kind.default_lambda(),
            cr_mode: CrMode::Real,
            layer_rule: LayerRule::Final,
            dr_noise_scale: 0.5,
            target_norm: 1.0,
        }
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.dr_noise_scale.is_finite() && self.dr_noise_scale >= 0.0) {
            return Err(Error::invalid("dr_noise_scale", "must be finite and >= 0"));
        }
        self.layer_rule.validate(layer_count)
    }
}

/// Anything mapping a batch to logits `[n, 1]`.
pub trait Critic {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Critic for F {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

impl Critic for Bound {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.discriminator_forward(x)?.0)
    }
}

fn per_sample_dim(tap: &Tensor) -> usize {
    tap.shape()[1..].iter().product::<usize>().max(1)
}

/// `Σ_j λ_j · mean_batch ‖D_j(x) − D_j(T(x))‖²` over the layers selected by `rule`.
pub fn consistency_loss(taps_x: &[Tensor], taps_tx: &[Tensor], rule: &LayerRule) -> Result<Tensor> {
    if taps_x.len() != taps_tx.len() || taps_x.is_empty() {
        return Err(Error::invalid(
            "taps",
            format!("tap count mismatch: {} vs {}", taps_x.len(), taps_tx.len()),
        ));
    }
    rule.validate(taps_x.len())?;
    let term = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                kind: "consistency_loss",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        t::reduce_mean(&t::l2_norm_sq(&t::sub(a, b)?)?)
    };
    match *rule {
        LayerRule::Final => term(taps_x.last().expect("non-empty"), taps_tx.last().expect("non-empty")),
        LayerRule::Range { m, n, weights } => {
            let mut total: Option<Tensor> = None;
            for j in m - 1..n {
                let mut v = term(&taps_x[j], &taps_tx[j])?;
                if weights == LayerWeights::InverseDim {
                    v = t::scale(&v, 1.0 / per_sample_dim(&taps_x[j]) as f64)?;
                }
                total = Some(match total {
                    Some(acc) => t::add(&acc, &v)?,
                    None => v,
                });
            }
            Ok(total.expect("range is non-empty"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Real,
    Fake,
}

/// One `(x, T(x))` consistency pair and where `x` came from.
#[derive(Clone, Debug)]
pub struct CrPair {
    pub source: Source,
    pub x: Tensor,
    pub tx: Tensor,
}

pub fn cr_pairs(mode: CrMode, real: &Tensor, fake: &Tensor, aug: &AugmentSpec, rng: &mut Rng) -> Result<Vec<CrPair>> {
    let mut out = Vec::new();
    let mut pair = |source: Source, x: &Tensor, rng: &mut Rng| -> Result<()> {
        if x.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::invalid("batch", format!("{source:?} batch is empty")));
        }
        out.push(CrPair {
            source,
            x: x.clone(),
            tx: augment(aug, x, rng)?,
        });
        Ok(())
    };
    if matches!(mode, CrMode::Real | CrMode::All) {
        pair(Source::Real, real, rng)?;
    }
    if matches!(mode, CrMode::Fake | CrMode::All) {
        pair(Source::Fake, fake, rng)?;
    }
    Ok(out)
}

/// Per-sample input gradients of `Σ D(x)` with `x` placed on `tape`;
/// returns `(x, ∇ₓ)` with the gradient recorded for further differentiation.
pub fn input_gradient(d: &dyn Critic, tape: &Tape, points: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let x = tape.var(&points.detach())?;
    let logits = d.logits(&x)?;
    let g = input_gradient_from(&x, &logits)?;
    Ok((x, logits, g))
}

/// `∇ₓ Σ logits` for an `x` already on a tape, recorded with `create_graph`.
pub fn input_gradient_from(x: &Tensor, logits: &Tensor) -> Result<Tensor> {
    if !logits.is_on_tape() {
        return Ok(Tensor::zeros(x.shape()));
    }
    let out = t::reduce_sum(logits)?;
    Ok(t::gradient(&out, &[x], true)?.remove(0))
}

fn norm_penalty(grad: &Tensor, target: f64) -> Result<Tensor> {
    let norm = t::sqrt(&t::add_scalar(&t::l2_norm_sq(grad)?, NORM_EPS)?)?;
    t::reduce_mean(&t::square(&t::add_scalar(&norm, -target)?)?)
}

fn check_pair(real: &Tensor, fake: &Tensor) -> Result<()> {
    if real.shape() != fake.shape() || real.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::Shape {
            kind: "penalty",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    Ok(())
}

/// `mean((‖∇D(x̂)‖ − 1)²)` at `x̂ = εx + (1−ε)x̃`, one `ε ~ U[0,1]` per sample.
pub fn gradient_penalty(d: &dyn Critic, tape: &Tape, real: &Tensor, fake: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    check_pair(real, fake)?;
    let n = real.shape()[0];
    let per = real.numel() / n;
    let mut mix = Vec::with_capacity(real.numel());
    for (r, f) in real.data().chunks_exact(per).zip(fake.data().chunks_exact(per)) {
        let eps = rng.uniform();
        mix.extend(r.iter().zip(f).map(|(a, b)| eps * a + (1.0 - eps) * b));
    }
    let (_, _, g) = input_gradient(d, tape, &Tensor::new(real.shape().to_vec(), mix)?)?;
    norm_penalty(&g, 1.0)
}

/// Gradient-norm penalty at `x + δ`, `δ ~ N(0, (scale·σ_batch)²)`, with
/// `σ_batch` the standard deviation over all entries of the batch.
pub fn dragan_penalty(d: &dyn Critic, tape: &Tape, real: &Tensor, rng: &mut Rng, spec: &RegSpec) -> Result<Tensor> {
    if real.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::invalid("batch", "real batch is empty"));
    }
    let data = real.data();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.len() as f64).sqrt();
    let scale = spec.dr_noise_scale * std;
    let perturbed: Vec<f64> = if scale > 0.0 {
        data.iter().map(|v| v + scale * rng.normal()).collect()
    } else {
        data.to_vec()
    };
    let (_, _, g) = input_gradient(d, tape, &Tensor::new(real.shape().to_vec(), perturbed)?)?;
    norm_penalty(&g, spec.target_norm)
}

/// `mean‖∇D(x)‖²` over real plus the same over fake.
pub fn jsr_penalty(d: &dyn Critic, tape: &Tape, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    check_pair(real, fake)?;
    let (_, _, gr) = input_gradient(d, tape, real)?;
    let (_, _, gf) = input_gradient(d, tape, fake)?;
    jsr_from_gradients(&gr, &gf)
}

pub fn jsr_from_gradients(grad_real: &Tensor, grad_fake: &Tensor) -> Result<Tensor> {
    t::add(
        &t::reduce_mean(&t::l2_norm_sq(grad_real)?)?,
        &t::reduce_mean(&t::l2_norm_sq(grad_fake)?)?,
    )
}

/// `L_D + λ·reg`.
pub fn total_disc_loss(l_d: &Tensor, reg: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    t::add(l_d, &t::scale(reg, lambda)?)
}
