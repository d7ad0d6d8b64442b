//! Adam with bias correction and the seven optimizer presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub n_dis: usize,
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        if self.n_dis == 0 {
            return Err(Error::invalid("n_dis", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl Preset {
    pub const ALL: [Preset; 7] = [Preset::A, Preset::B, Preset::C, Preset::D, Preset::E, Preset::F, Preset::G];

    pub fn config(self) -> AdamConfig {
        let (lr, beta1, beta2, n_dis) = match self {
            Preset::A => (0.0001, 0.5, 0.9, 5),
            Preset::B => (0.0001, 0.5, 0.999, 1),
            Preset::C => (0.0002, 0.5, 0.999, 1),
            Preset::D => (0.0002, 0.5, 0.999, 5),
            Preset::E => (0.001, 0.5, 0.9, 5),
            Preset::F => (0.001, 0.5, 0.999, 5),
            Preset::G => (0.001, 0.9, 0.999, 5),
        };
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            n_dis,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::invalid("preset", format!("unknown preset {s:?} (expected A..G)")))
    }
}

pub fn preset(id: &str) -> Result<AdamConfig> {
    Ok(id.parse::<Preset>()?.config())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [Param], grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "grads",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.numel() != p.data.len() {
            return Err(Error::Shape {
                kind: "adam_step",
                lhs: p.shape.clone(),
                rhs: g.shape().to_vec(),
            });
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: p.name.clone() });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p.data[j] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
