//! Adversarial objectives on discriminator logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self as t, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ns,
    Hinge,
    Wasserstein,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ns, LossKind::Hinge, LossKind::Wasserstein];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ns => "ns",
            LossKind::Hinge => "hinge",
            LossKind::Wasserstein => "wasserstein",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("loss", format!("unknown loss kind {s:?} (expected ns, hinge or wasserstein)")))
    }
}

fn batch_of(x: &Tensor, kind: &'static str) -> Result<usize> {
    let n = match x.shape() {
        [n] | [n, 1] => *n,
        other => {
            return Err(Error::Shape {
                kind,
                lhs: other.to_vec(),
                rhs: vec![other.first().copied().unwrap_or(0), 1],
            })
        }
    };
    if n == 0 {
        return Err(Error::invalid("batch", "batch size must be positive"));
    }
    Ok(n)
}

pub fn disc_loss(kind: LossKind, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let (nr, nf) = (batch_of(real, "disc_loss")?, batch_of(fake, "disc_loss")?);
    if nr != nf {
        return Err(Error::Shape {
            kind: "disc_loss",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    match kind {
        LossKind::Ns => {
            let r = t::reduce_mean(&t::neg(&t::log_sigmoid(real)?)?)?;
            let f = t::reduce_mean(&t::neg(&t::log_sigmoid(&t::neg(fake)?)?)?)?;
            t::add(&r, &f)
        }
        LossKind::Hinge => {
            let r = t::reduce_mean(&t::relu(&t::add_scalar(&t::neg(real)?, 1.0)?)?)?;
            let f = t::reduce_mean(&t::relu(&t::add_scalar(fake, 1.0)?)?)?;
            t::add(&r, &f)
        }
        LossKind::Wasserstein => t::sub(&t::reduce_mean(fake)?, &t::reduce_mean(real)?),
    }
}

pub fn gen_loss(kind: LossKind, fake: &Tensor) -> Result<Tensor> {
    batch_of(fake, "gen_loss")?;
    match kind {
        LossKind::Ns => t::reduce_mean(&t::neg(&t::log_sigmoid(fake)?)?),
        LossKind::Hinge | LossKind::Wasserstein => t::neg(&t::reduce_mean(fake)?),
    }
}
