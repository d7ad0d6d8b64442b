//! Stochastic semantics-preserving transforms `T(x)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum AugmentSpec {
    Identity,
    GaussianNoise { sigma: f64 },
    ShiftFlip { shift_px: usize, pad_value: f64 },
    Cutout { size_px: usize, fill_value: f64 },
    Compose(Vec<AugmentSpec>),
}

impl AugmentSpec {
    pub fn shift_flip(shift_px: usize) -> Self {
        AugmentSpec::ShiftFlip { shift_px, pad_value: 0.0 }
    }

    pub fn cutout(size_px: usize) -> Self {
        AugmentSpec::Cutout { size_px, fill_value: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            AugmentSpec::Identity => true,
            AugmentSpec::GaussianNoise { sigma } => *sigma == 0.0,
            AugmentSpec::ShiftFlip { .. } | AugmentSpec::Cutout { .. } => false,
            AugmentSpec::Compose(parts) => parts.iter().all(AugmentSpec::is_identity),
        }
    }

    /// Checks parameters against a per-sample shape (`[d]` or `[c, h, w]`).
    pub fn validate(&self, sample_shape: &[usize]) -> Result<()> {
        match self {
            AugmentSpec::Identity => Ok(()),
            AugmentSpec::GaussianNoise { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::invalid("augment", format!("noise sigma must be >= 0, got {sigma}")));
                }
                Ok(())
            }
            AugmentSpec::ShiftFlip { shift_px, .. } => {
                let side = image_side(sample_shape, "shiftflip")?;
                if *shift_px >= side {
                    return Err(Error::invalid("augment", format!("shift {shift_px} must be below the image side {side}")));
                }
                Ok(())
            }
            AugmentSpec::Cutout { size_px, .. } => {
                let side = image_side(sample_shape, "cutout")?;
                if *size_px > side {
                    return Err(Error::invalid("augment", format!("cutout {size_px} exceeds the image side {side}")));
                }
                Ok(())
            }
            AugmentSpec::Compose(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("augment", "empty composition"));
                }
                parts.iter().try_for_each(|p| p.validate(sample_shape))
            }
        }
    }
}

fn image_side(sample_shape: &[usize], kind: &str) -> Result<usize> {
    match sample_shape {
        [_, h, w] => Ok((*h).min(*w)),
        _ => Err(Error::invalid("augment", format!("{kind} needs image data, got sample shape {sample_shape:?}"))),
    }
}

impl fmt::Display for AugmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentSpec::Identity => f.write_str("identity"),
            AugmentSpec::GaussianNoise { sigma } => write!(f, "noise:{sigma}"),
            AugmentSpec::ShiftFlip { shift_px, .. } => write!(f, "shiftflip:{shift_px}"),
            AugmentSpec::Cutout { size_px, .. } => write!(f, "cutout:{size_px}"),
            AugmentSpec::Compose(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for AugmentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s.split('+').map(|p| parse_one(p.trim())).collect::<Result<Vec<_>>>()?;
        Ok(match <[AugmentSpec; 1]>::try_from(parts) {
            Ok([one]) => one,
            Err(many) => AugmentSpec::Compose(many),
        })
    }
}

fn parse_one(s: &str) -> Result<AugmentSpec> {
    let bad = || Error::invalid("augment", format!("cannot parse {s:?} (expected identity, noise:σ, shiftflip:px or cutout:px)"));
    if s == "identity" {
        return Ok(AugmentSpec::Identity);
    }
    let (name, arg) = s.split_once(':').ok_or_else(bad)?;
    match name {
        "noise" => {
            let sigma: f64 = arg.parse().map_err(|_| bad())?;
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(bad());
            }
            Ok(AugmentSpec::GaussianNoise { sigma })
        }
        "shiftflip" => Ok(AugmentSpec::shift_flip(arg.parse().map_err(|_| bad())?)),
        "cutout" => Ok(AugmentSpec::cutout(arg.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

/// Default transform: shift/flip by `side/8` pixels for images, Gaussian
/// noise at 5% of the data standard deviation for points.
pub fn default_augmentation(sample_shape: &[usize], data_std: f64) -> Result<AugmentSpec> {
    match sample_shape {
        [_, h, _] => Ok(AugmentSpec::shift_flip(((*h as f64) / 8.0).round() as usize)),
        [_] => Ok(AugmentSpec::GaussianNoise { sigma: 0.05 * data_std }),
        _ => Err(Error::invalid("augment", format!("no default augmentation for sample shape {sample_shape:?}"))),
    }
}

/// Applies `spec` to a batch `[n, ...]`, returning a new constant tensor.
pub fn augment(spec: &AugmentSpec, batch: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let sample_shape = batch.shape().get(1..).unwrap_or(&[]).to_vec();
    spec.validate(&sample_shape)?;
    if spec.is_identity() {
        return Ok(batch.detach());
    }
    let mut data = batch.to_vec();
    apply(spec, batch.shape(), &mut data, rng);
    Tensor::new(batch.shape().to_vec(), data)
}

fn apply(spec: &AugmentSpec, shape: &[usize], data: &mut [f64], rng: &mut Rng) {
    match spec {
        AugmentSpec::Identity => {}
        AugmentSpec::GaussianNoise { sigma } => {
            if *sigma > 0.0 {
                for v in data.iter_mut() {
                    *v += sigma * rng.normal();
                }
            }
        }
        AugmentSpec::ShiftFlip { shift_px, pad_value } => {
            let s = *shift_px as i64;
            for img in images_mut(shape, data) {
                let flip = rng.bernoulli(0.5);
                let dx = rng.int_inclusive(-s, s);
                let dy = rng.int_inclusive(-s, s);
                shift_flip_image(img, shape, flip, dx, dy, *pad_value);
            }
        }
        AugmentSpec::Cutout { size_px, fill_value } => {
            let (h, w) = (shape[2], shape[3]);
            for img in images_mut(shape, data) {
                let cy = rng.below(h as u64) as i64;
                let cx = rng.below(w as u64) as i64;
                cutout_image(img, shape, cy, cx, *size_px, *fill_value);
            }
        }
        AugmentSpec::Compose(parts) => {
            for p in parts {
                apply(p, shape, data, rng);
            }
        }
    }
}

fn images_mut<'a>(shape: &[usize], data: &'a mut [f64]) -> std::slice::ChunksExactMut<'a, f64> {
    let per: usize = shape[1..].iter().product();
    data.chunks_exact_mut(per)
}

/// Optional horizontal flip, then translation by `(dx, dy)`; vacated pixels
/// take `pad`. `img` is one `[c, h, w]` sample.
pub fn shift_flip_image(img: &mut [f64], batch_shape: &[usize], flip: bool, dx: i64, dy: i64, pad: f64) {
    let (c, h, w) = (batch_shape[1], batch_shape[2], batch_shape[3]);
    let src = img.to_vec();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sy, sx) = (y - dy, x - dx);
                let v = if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                    pad
                } else {
                    let sx = if flip { w as i64 - 1 - sx } else { sx };
                    plane[(sy as usize) * w + sx as usize]
                };
                img[ch * h * w + (y as usize) * w + x as usize] = v;
            }
        }
    }
}

/// Fills a `size × size` square centred at `(cy, cx)`, clipped at borders.
pub fn cutout_image(img: &mut [f64], batch_shape: &[usize], cy: i64, cx: i64, size: usize, fill: f64) {
    let (c, h, w) = (batch_shape[1], batch_shape[2], batch_shape[3]);
    let half = (size / 2) as i64;
    let (y0, x0) = ((cy - half).max(0), (cx - half).max(0));
    let (y1, x1) = ((cy - half + size as i64).min(h as i64), (cx - half + size as i64).min(w as i64));
    for ch in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                img[ch * h * w + (y as usize) * w + x as usize] = fill;
            }
        }
    }
}
